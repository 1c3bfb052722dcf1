#pragma once

// Flat `section.key = value` run configuration.

#include <filesystem>
#include <string>
#include <vector>

#include "mmdt/classifier.hpp"
#include "mmdt/data_pipeline.hpp"
#include "mmdt/synthetic.hpp"
#include "mmdt/trainer.hpp"

namespace mmdt {

struct RunConfig {
  TrainConfig train;
  BackboneConfig backbone;
  FinetuneConfig finetune;
  RecaptureParams recapture = desk_recapture_params();  ///< channel used by synth-data

  /// Overrides every seed in the configuration.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

/// Every accepted key, in the order `to_text` writes them.
std::vector<std::string> config_keys();

/// Applies one assignment. Throws ConfigError for an unknown key or a malformed value.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Parses text on top of the defaults. Blank lines and lines starting with '#' are skipped;
/// errors name the line number.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// One `key = value` line per key; parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

}  // namespace mmdt
