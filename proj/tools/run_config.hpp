#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gmflab::cli {

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

/// The keys one subcommand accepts, in documentation order.
struct Registry {
  std::string subcommand;
  std::vector<KeySpec> keys;

  bool contains(const std::string& key) const;
};

/// Every subcommand's registry. The first key of each is `seed`.
const std::vector<Registry>& registries();
const Registry& registry_for(const std::string& subcommand);

/// Parses flat `key = value` text. Blank lines and lines starting with '#'
/// are skipped. Throws ConfigError naming the key for unknown or repeated
/// keys, and with key "config" for malformed lines.
std::map<std::string, std::string> parse_config_text(const std::string& text, const Registry& registry);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path, const Registry& registry);

/// Defaults, then file values, then CLI overrides.
class RunConfig {
 public:
  RunConfig(const Registry& registry, const std::map<std::string, std::string>& file_values,
            const std::map<std::string, std::string>& overrides);

  const std::map<std::string, std::string>& effective() const noexcept { return values_; }

  /// Typed accessors throw ConfigError naming the key on malformed values.
  const std::string& text(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> size_list(const std::string& key) const;
  std::vector<std::uint64_t> u64_list(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

/// `--out` if given, else $GMFLAB_OUT, else "gmflab_out".
std::filesystem::path resolve_out_dir(const std::string& flag_value);

}  // namespace gmflab::cli
