#pragma once

#include "affect/harness.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace affect::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a CLI run can be configured with.
struct RunConfig {
  harness::ExperimentConfig experiment;
  harness::SyntheticSpec synth;
  std::string data_root;  // relative paths resolve against this when set
  std::optional<double> synth_mean_segment;  // unset: the track's separable default
};

/// Built-in defaults. `data_root` comes from AFFECT_DATA_ROOT when it is set.
RunConfig defaults();

/// Resolution order: defaults, then the config file, then each `key=value`
/// override in order. Keys are dotted paths ("train.learning_rate"). Unknown
/// keys and wrongly typed values raise ConfigError naming the source; value
/// ranges are checked once, on the final result.
RunConfig resolve(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

/// Merges one JSON document (file contents) into `cfg` and checks ranges.
void apply_json_text(RunConfig& cfg, const std::string& text, const std::string& source);

/// Applies one `key=value`. The value is parsed as JSON when possible and
/// otherwise taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// The fully resolved config as pretty-printed JSON.
std::string to_json(const RunConfig& cfg);

/// Every accepted key, dotted.
std::vector<std::string> known_keys();

}  // namespace affect::config
