#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "gmflab/errors.hpp"

namespace gmflab::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError(fmt::format("invalid value '{}' for key '{}' (expected {})", value, key, expected), key);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc{} || p != value.data() + value.size())
    bad_value(key, value, "a nonnegative integer");
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc{} || p != value.data() + value.size()) bad_value(key, value, "a number");
  return v;
}

const std::vector<KeySpec> kSynthKeys = {
    {"shared_dim", "8", "shared latent dimension k_s"},
    {"specific_dims", "8,8", "private latent dimension per modality"},
    {"observed_dims", "32,32", "observed feature dimension per modality"},
    {"noise", "0.1", "observation noise std"},
    {"classes", "4", "class count"},
    {"samples", "4000", "sample count"},
    {"positive_fraction", "0", "binary tasks: fraction of class 1 (0 = argmax rule)"},
    {"data_seed", "", "dataset seed (empty = seed)"},
};

std::vector<Registry> build() {
  const KeySpec seed{"seed", "1", "global seed"};
  std::vector<Registry> r;

  Registry train{"gmf-train", {seed}};
  train.keys.insert(train.keys.end(), kSynthKeys.begin(), kSynthKeys.end());
  train.keys.insert(train.keys.end(),
                    {{"method", "gmf", "concat | gmf | gmf-no-barrier"},
                     {"extractor", "frozen", "frozen | trainable"},
                     {"lr", "0.01", "SGD learning rate"},
                     {"momentum", "0.9", "SGD momentum"},
                     {"weight_decay", "1e-4", "SGD weight decay"},
                     {"epochs", "20", "training epochs"},
                     {"batch_size", "64", "minibatch size"},
                     {"lambda", "1", "weight of the reconstruction loss"},
                     {"dis_warmup_epochs", "0", "epochs before the reconstruction loss joins"},
                     {"detach_reconstruction", "false", "skip the reconstruction backward pass"},
                     {"magnification", "4", "GMF magnification n"},
                     {"boundary", "0.5", "GMF boundary fraction"}});
  r.push_back(train);

  r.push_back({"eval-missing",
               {seed,
                {"model_dir", "", "directory written by gmf-train (empty = output directory)"},
                {"dropped", "all", "all | none | modality index"}}});

  r.push_back({"pnp-solve",
               {seed,
                {"mode", "steady", "steady | transient"},
                {"debye", "0.05", "Debye length"},
                {"c0", "1", "bulk concentration of the cation"},
                {"z_plus", "1", "cation valence"},
                {"z_minus", "-1", "anion valence"},
                {"d_plus", "1", "cation diffusivity"},
                {"d_minus", "1", "anion diffusivity"},
                {"u0", "1", "electrode potential in thermal units"},
                {"cells", "64", "grid cells"},
                {"length", "1", "domain length"},
                {"dt", "1e-3", "transient: time step"},
                {"steps", "1000", "transient: step count"},
                {"tolerance", "1e-10", "steady: relative change per unit time"}}});

  r.push_back({"dim-sweep",
               {seed,
                {"input_dim", "16", "input dimension"},
                {"intrinsic_dim", "2", "latent dimension of the task"},
                {"classes", "3", "class count"},
                {"label_noise", "0", "fraction of training labels resampled"},
                {"widths", "1,2,4,8,16,32,64", "hidden widths"},
                {"train_samples", "600", "training samples"},
                {"test_samples", "2000", "test samples"},
                {"steps", "1500", "full-batch steps"},
                {"lr", "0.2", "learning rate"},
                {"momentum", "0.9", "momentum"},
                {"task_seed", "11", "task seed"},
                {"seeds", "", "run seeds (empty = seed, seed+1, seed+2)"}}});

  r.push_back({"rank-sim",
               {seed,
                {"d", "8", "columns"},
                {"n", "2", "row multiplier (rows = round(n*d))"},
                {"trials", "1000", "Monte Carlo trials"}}});

  r.push_back({"updown",
               {seed,
                {"l", "8", "feature dimension"},
                {"magnifications", "0.5,1,2,4", "magnifications n"},
                {"classes", "8", "class count"},
                {"samples", "3000", "samples"},
                {"train_fraction", "0.7", "training fraction"},
                {"steps", "3000", "full-batch steps"},
                {"lr", "0.2", "learning rate"},
                {"momentum", "0.9", "momentum"},
                {"init_noise", "0.01", "noise on the identity initialization"},
                {"label_noise", "0.3", "std of noise on the label scores"},
                {"task_seed", "7", "task seed"},
                {"seeds", "", "run seeds (empty = seed, seed+1, seed+2)"}}});

  r.push_back({"param-count",
               {seed,
                {"dims", "512,512", "feature dimension per modality"},
                {"n", "4", "magnification"},
                {"boundary", "0.5", "boundary fraction"}}});
  return r;
}

}  // namespace

bool Registry::contains(const std::string& key) const {
  return std::any_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; });
}

const std::vector<Registry>& registries() {
  static const std::vector<Registry> all = build();
  return all;
}

const Registry& registry_for(const std::string& subcommand) {
  for (const Registry& r : registries())
    if (r.subcommand == subcommand) return r;
  throw ConfigError(fmt::format("unknown subcommand '{}'", subcommand), "subcommand");
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const Registry& registry) {
  std::map<std::string, std::string> out;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(fmt::format("config line {}: expected 'key = value'", lineno), "config");
    const std::string key = trim(t.substr(0, eq));
    if (!registry.contains(key))
      throw ConfigError(fmt::format("config line {}: unknown key '{}' for {}", lineno, key, registry.subcommand), key);
    if (out.contains(key)) throw ConfigError(fmt::format("config line {}: key '{}' repeated", lineno, key), key);
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path, const Registry& registry) {
  std::ifstream f(path);
  if (!f) throw ConfigError(fmt::format("cannot read config file {}", path.string()), "config");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), registry);
}

RunConfig::RunConfig(const Registry& registry, const std::map<std::string, std::string>& file_values,
                     const std::map<std::string, std::string>& overrides) {
  for (const KeySpec& k : registry.keys) values_[k.name] = k.default_value;
  for (const auto* layer : {&file_values, &overrides})
    for (const auto& [k, v] : *layer) {
      if (!registry.contains(k)) throw ConfigError(fmt::format("unknown key '{}' for {}", k, registry.subcommand), k);
      values_[k] = v;
    }
}

const std::string& RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("key '{}' is not registered", key), key);
  return it->second;
}

std::uint64_t RunConfig::u64(const std::string& key) const { return parse_u64(key, text(key)); }

double RunConfig::real(const std::string& key) const { return parse_real(key, text(key)); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = text(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> RunConfig::size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const std::string& s : split_list(text(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, s)));
  return out;
}

std::vector<std::uint64_t> RunConfig::u64_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const std::string& s : split_list(text(key))) out.push_back(parse_u64(key, s));
  return out;
}

std::vector<double> RunConfig::real_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& s : split_list(text(key))) out.push_back(parse_real(key, s));
  return out;
}

std::filesystem::path resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("GMFLAB_OUT"); env && *env) return env;
  return "gmflab_out";
}

}  // namespace gmflab::cli
