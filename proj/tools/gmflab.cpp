#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gmflab/checkpoint.hpp"
#include "gmflab/entropy.hpp"
#include "gmflab/errors.hpp"
#include "gmflab/gmf.hpp"
#include "gmflab/pnp.hpp"
#include "gmflab/report.hpp"
#include "gmflab/synth.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace gmflab;
using gmflab::cli::RunConfig;

namespace {

// Files written so far; removed if the run fails.
class Artifacts {
 public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {}
  const fs::path& dir() const { return dir_; }

  void report(ExperimentReport rep, const RunConfig& rc) {
    rep.config = rc.effective();
    rep.meta["created_at"] = timestamp();
    rep.meta["output_dir"] = dir_.string();
    for (auto& p : write_report(rep, dir_)) written_.push_back(std::move(p));
  }
  void file(const std::string& name, const std::string& bytes) {
    fs::create_directories(dir_);
    write_file_atomic(dir_ / name, bytes);
    written_.push_back(dir_ / name);
  }
  void discard() noexcept {
    for (const fs::path& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    written_.clear();
  }

 private:
  static std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  fs::path dir_;
  std::vector<fs::path> written_;
};

std::vector<std::uint64_t> run_seeds(const RunConfig& rc) {
  if (!rc.text("seeds").empty()) return rc.u64_list("seeds");
  const std::uint64_t s = rc.u64("seed");
  return {s, s + 1, s + 2};
}

synth::SyntheticSpec synth_spec(const RunConfig& rc) {
  synth::SyntheticSpec s;
  s.shared_dim = rc.size("shared_dim");
  s.specific_dims = rc.size_list("specific_dims");
  s.observed_dims = rc.size_list("observed_dims");
  s.noise = rc.real("noise");
  s.classes = rc.size("classes");
  s.samples = rc.size("samples");
  s.positive_fraction = rc.real("positive_fraction");
  s.validate();
  return s;
}

std::uint64_t data_seed(const RunConfig& rc) {
  return rc.text("data_seed").empty() ? rc.u64("seed") : rc.u64("data_seed");
}

std::optional<gmf::GmfConfig> fusion_config(const RunConfig& rc, const synth::SyntheticSpec& spec) {
  if (synth::parse_method(rc.text("method")) == synth::FusionMethod::concat) return std::nullopt;
  gmf::GmfConfig g;
  g.dims = spec.observed_dims;
  g.magnification = rc.size("magnification");
  g.boundary_fraction = rc.real("boundary");
  g.validate();
  return g;
}

std::string sidecar(const std::string& kind, const std::map<std::string, std::string>& config) {
  nlohmann::json j;
  j["kind"] = kind;
  j["config"] = config;
  return j.dump(2) + "\n";
}

std::map<std::string, std::string> read_sidecar(const fs::path& path, const std::string& kind) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  const nlohmann::json j = nlohmann::json::parse(f);
  if (j.value("kind", "") != kind) throw FormatError(fmt::format("{} is not a {} sidecar", path.string(), kind));
  return j.at("config").get<std::map<std::string, std::string>>();
}

void gmf_train(const RunConfig& rc, Artifacts& out) {
  const synth::SyntheticSpec spec = synth_spec(rc);
  synth::TrainConfig tc;
  tc.method = synth::parse_method(rc.text("method"));
  tc.extractor = synth::parse_extractor(rc.text("extractor"));
  tc.sgd.lr = rc.real("lr");
  tc.sgd.momentum = rc.real("momentum");
  tc.sgd.weight_decay = rc.real("weight_decay");
  tc.epochs = rc.size("epochs");
  tc.batch_size = rc.size("batch_size");
  tc.lambda_dis = rc.real("lambda");
  tc.dis_warmup_epochs = rc.size("dis_warmup_epochs");
  tc.detach_reconstruction = rc.flag("detach_reconstruction");
  tc.seed = rc.u64("seed");
  tc.validate();
  const auto g = fusion_config(rc, spec);

  const synth::Dataset data = synth::generate_dataset(spec, data_seed(rc));
  synth::TrainOutcome result = synth::train_fusion(data, tc, g);
  if (result.failed) throw std::runtime_error("training diverged: " + result.report.meta.at("failure"));

  std::map<std::string, std::string> data_echo;
  for (const char* k : {"shared_dim", "specific_dims", "observed_dims", "noise", "classes", "samples",
                        "positive_fraction"})
    data_echo[k] = rc.text(k);
  data_echo["data_seed"] = std::to_string(data_seed(rc));
  out.file("dataset.ckpt", encode_checkpoint(synth::dataset_to_named(data)));
  out.file("dataset.json", sidecar("dataset", data_echo));
  out.file("model.ckpt", encode_checkpoint(result.model.to_named()));
  out.file("model.json", sidecar("model", rc.effective()));
  fmt::print("test accuracy {:.4f}\n", result.report.metric("final_test_accuracy"));
  out.report(std::move(result.report), rc);
}

void eval_missing(const RunConfig& rc, Artifacts& out) {
  const fs::path dir = rc.text("model_dir").empty() ? out.dir() : fs::path(rc.text("model_dir"));
  const RunConfig trained(cli::registry_for("gmf-train"), read_sidecar(dir / "model.json", "model"), {});
  const synth::SyntheticSpec spec = synth_spec(trained);
  const std::uint64_t seed = data_seed(trained);
  synth::Dataset data;
  if (fs::exists(dir / "dataset.ckpt")) {
    const auto echo = read_sidecar(dir / "dataset.json", "dataset");
    if (echo.at("data_seed") != std::to_string(seed))
      throw FormatError(fmt::format("dataset cache in {} does not match the model's data seed", dir.string()));
    data = synth::dataset_from_named(spec, seed, load_checkpoint(dir / "dataset.ckpt"));
  } else {
    data = synth::generate_dataset(spec, seed);
  }
  const synth::FusionModel model =
      synth::FusionModel::from_named(spec, synth::parse_method(trained.text("method")),
                                     synth::parse_extractor(trained.text("extractor")), fusion_config(trained, spec),
                                     load_checkpoint(dir / "model.ckpt"));

  std::vector<std::optional<std::size_t>> drops;
  const std::string& which = rc.text("dropped");
  if (which == "all") {
    drops.push_back(std::nullopt);
    for (std::size_t j = 0; j < spec.modalities(); ++j) drops.push_back(j);
  } else if (which == "none") {
    drops.push_back(std::nullopt);
  } else {
    const std::size_t j = rc.size("dropped");
    if (j >= spec.modalities())
      throw ConfigError(fmt::format("dropped modality {} out of range (0..{})", j, spec.modalities() - 1), "dropped");
    drops.push_back(j);
  }

  ExperimentReport rep;
  rep.name = "eval_missing";
  rep.seeds = {trained.u64("seed")};
  rep.rows.columns = {"dropped", "accuracy", "auc", "locality_holds"};
  for (const auto& d : drops) {
    const synth::MissingModalityMetrics m = synth::missing_modality_eval(model, data, d);
    rep.rows.add_row({d ? Cell{static_cast<std::int64_t>(*d)} : Cell{std::string("none")}, m.accuracy,
                      m.auc ? *m.auc : std::nan(""), static_cast<std::int64_t>(m.locality_holds)});
    rep.metrics[d ? fmt::format("accuracy.drop{}", *d) : "accuracy.full"] = m.accuracy;
    fmt::print("dropped {:>4}  accuracy {:.4f}\n", d ? std::to_string(*d) : "none", m.accuracy);
  }
  for (const auto& [k, v] : trained.effective()) rep.meta["train." + k] = v;
  out.report(std::move(rep), rc);
}

void pnp_solve(const RunConfig& rc, Artifacts& out) {
  const int zp = static_cast<int>(std::lround(rc.real("z_plus")));
  const int zm = static_cast<int>(std::lround(rc.real("z_minus")));
  if (zp <= 0) throw ConfigError("cation valence must be positive", "z_plus");
  if (zm >= 0) throw ConfigError("anion valence must be negative", "z_minus");
  const double c0 = rc.real("c0"), debye = rc.real("debye");
  if (!(c0 > 0.0)) throw ConfigError("concentration must be positive", "c0");
  if (!(debye > 0.0)) throw ConfigError("Debye length must be positive", "debye");

  pnp::PnpSystem sys;
  sys.length = rc.real("length");
  sys.cells = rc.size("cells");
  sys.electrode_potential = rc.real("u0");
  sys.species = {{"plus", zp, rc.real("d_plus"), c0}, {"minus", zm, rc.real("d_minus"), c0 * zp / -zm}};
  double ionic = 0.0;
  for (const auto& s : sys.species) ionic += s.valence * s.valence * s.initial_concentration;
  sys.permittivity = debye * debye * ionic / sys.thermal_voltage;
  sys.validate();

  const std::string& mode = rc.text("mode");
  pnp::PnpState state;
  ExperimentReport rep;
  rep.name = "pnp_solve";
  if (mode == "steady") {
    pnp::SteadyOptions opts;
    opts.tolerance = rc.real("tolerance");
    const pnp::SteadyResult r = pnp::solve_steady(sys, opts);
    state = r.state;
    rep.metrics["steps"] = static_cast<double>(r.steps);
    rep.metrics["last_rate"] = r.last_rate;
  } else if (mode == "transient") {
    const double dt = rc.real("dt");
    const std::size_t steps = rc.size("steps");
    state = pnp::initial_state(sys);
    for (std::size_t i = 0; i < steps; ++i) state = pnp::transient_step(state, dt, sys);
    rep.metrics["steps"] = static_cast<double>(steps);
  } else {
    throw ConfigError(fmt::format("unknown mode '{}' (steady, transient)", mode), "mode");
  }

  const pnp::PnpState start = pnp::initial_state(sys);
  rep.rows.columns = {"x", "phi", "c_plus", "c_minus"};
  for (std::size_t k = 0; k < sys.nodes(); ++k)
    rep.rows.add_row({sys.node_position(k), state.potential[k], state.concentrations[0][k], state.concentrations[1][k]});
  const pnp::PoissonResult check = pnp::solve_poisson(pnp::charge_density(state, sys), sys);
  double mismatch = 0.0, max_flux = 0.0;
  for (std::size_t k = 0; k < sys.nodes(); ++k) mismatch = std::max(mismatch, std::abs(check.potential[k] - state.potential[k]));
  for (std::size_t s = 0; s < 2; ++s) {
    const std::string tag = sys.species[s].name;
    for (double f : pnp::face_fluxes(state, sys, s)) max_flux = std::max(max_flux, std::abs(f));
    rep.metrics["nernst_deviation." + tag] = pnp::max_nernst_deviation(state, sys, s);
    rep.metrics["total." + tag] = pnp::total_amount(state, sys, s);
    rep.metrics["initial_total." + tag] = pnp::total_amount(start, sys, s);
  }
  rep.metrics["poisson_residual"] = check.residual;
  rep.metrics["poisson_mismatch"] = mismatch;
  rep.metrics["max_flux"] = max_flux;
  rep.metrics["time"] = state.time;
  rep.metrics["zero_crossing"] = pnp::potential_zero_crossing(state, sys);
  fmt::print("nernst deviation {:.3g} / {:.3g}, zero crossing {:.6g}\n", rep.metric("nernst_deviation.plus"),
             rep.metric("nernst_deviation.minus"), rep.metric("zero_crossing"));
  out.report(std::move(rep), rc);
}

void dim_sweep(const RunConfig& rc, Artifacts& out) {
  entropy::WidthSweepConfig c;
  c.input_dim = rc.size("input_dim");
  c.intrinsic_dim = rc.size("intrinsic_dim");
  c.classes = rc.size("classes");
  c.label_noise = rc.real("label_noise");
  c.widths = rc.size_list("widths");
  c.train_samples = rc.size("train_samples");
  c.test_samples = rc.size("test_samples");
  c.steps = rc.size("steps");
  c.lr = rc.real("lr");
  c.momentum = rc.real("momentum");
  c.task_seed = rc.u64("task_seed");
  c.seeds = run_seeds(rc);
  ExperimentReport rep = entropy::width_sweep(c);
  rep.name = "dim_sweep";
  fmt::print("best width {} (test accuracy {:.4f})\n", rep.metric("best_width"), rep.metric("best_test_accuracy"));
  out.report(std::move(rep), rc);
}

void rank_sim(const RunConfig& rc, Artifacts& out) {
  entropy::RankTrialConfig c;
  c.d = rc.size("d");
  c.n = rc.real("n");
  c.trials = rc.size("trials");
  c.seed = rc.u64("seed");
  const entropy::RankTrialResult r = entropy::rank_trial(c);
  ExperimentReport rep;
  rep.name = "rank_sim";
  rep.seeds = {c.seed};
  rep.rows.columns = {"d", "n", "rows", "trials", "full_rank_fraction", "rank_d_fraction", "max_rank", "mean_rank"};
  rep.rows.add_row({static_cast<std::int64_t>(c.d), c.n, static_cast<std::int64_t>(r.rows),
                    static_cast<std::int64_t>(c.trials), r.full_rank_fraction, r.rank_d_fraction,
                    static_cast<std::int64_t>(r.max_rank), r.mean_rank});
  rep.metrics["full_rank_fraction"] = r.full_rank_fraction;
  rep.metrics["rank_d_fraction"] = r.rank_d_fraction;
  rep.metrics["mean_rank"] = r.mean_rank;
  fmt::print("full-rank fraction {}  rank-d fraction {}\n", r.full_rank_fraction, r.rank_d_fraction);
  out.report(std::move(rep), rc);
}

void updown(const RunConfig& rc, Artifacts& out) {
  entropy::MappingExperimentConfig c;
  c.l = rc.size("l");
  c.magnifications = rc.real_list("magnifications");
  c.classes = rc.size("classes");
  c.samples = rc.size("samples");
  c.train_fraction = rc.real("train_fraction");
  c.steps = rc.size("steps");
  c.lr = rc.real("lr");
  c.momentum = rc.real("momentum");
  c.init_noise = rc.real("init_noise");
  c.label_noise = rc.real("label_noise");
  c.task_seed = rc.u64("task_seed");
  c.seeds = run_seeds(rc);
  ExperimentReport rep = entropy::up_down_experiment(c);
  rep.name = "updown";
  fmt::print("direct {:.4f}", rep.metric("direct.mean"));
  for (double n : c.magnifications) fmt::print("  n={:g} {:.4f}", n, rep.metric(fmt::format("updown.{:g}.mean", n)));
  fmt::print("\n");
  out.report(std::move(rep), rc);
}

void param_count(const RunConfig& rc, Artifacts& out) {
  gmf::GmfConfig g;
  g.dims = rc.size_list("dims");
  g.magnification = rc.size("n");
  g.boundary_fraction = rc.real("boundary");
  g.validate();
  const std::uint64_t params = gmf::param_count(g);
  ExperimentReport rep;
  rep.name = "param_count";
  rep.rows.columns = {"params", "flops"};
  rep.rows.add_row({static_cast<std::int64_t>(params), gmf::flops_estimate(g)});
  rep.metrics["params"] = static_cast<double>(params);
  rep.metrics["flops"] = gmf::flops_estimate(g);
  fmt::print("{}\n", params);
  out.report(std::move(rep), rc);
}

using Runner = void (*)(const RunConfig&, Artifacts&);

const std::map<std::string, Runner> kRunners = {
    {"gmf-train", gmf_train}, {"eval-missing", eval_missing}, {"pnp-solve", pnp_solve}, {"dim-sweep", dim_sweep},
    {"rank-sim", rank_sim},   {"updown", updown},             {"param-count", param_count}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fusion, electrodiffusion and dimension experiments"};
  app.require_subcommand(1);
  std::string config_path, out_flag;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  std::map<std::string, std::map<std::string, std::string>> raw;
  for (const cli::Registry& r : cli::registries()) {
    CLI::App* sub = app.add_subcommand(r.subcommand);
    sub->add_option("--config", config_path, "flat key = value file");
    sub->add_option("--out", out_flag, "output directory (default $GMFLAB_OUT or gmflab_out)");
    for (const cli::KeySpec& k : r.keys) {
      const std::string help = k.default_value.empty() ? k.help : fmt::format("{} [{}]", k.help, k.default_value);
      options[r.subcommand][k.name] = sub->add_option("--" + k.name, raw[r.subcommand][k.name], help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Artifacts out(cli::resolve_out_dir(out_flag));
  try {
    const cli::Registry& reg = cli::registry_for(name);
    std::map<std::string, std::string> overrides;
    for (const auto& [key, opt] : options[name])
      if (opt->count() > 0) overrides[key] = raw[name][key];
    const auto file_values = config_path.empty() ? std::map<std::string, std::string>{}
                                                 : cli::read_config_file(config_path, reg);
    const RunConfig rc(reg, file_values, overrides);
    kRunners.at(name)(rc, out);
    return 0;
  } catch (const ConfigError& e) {
    out.discard();
    std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    out.discard();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
