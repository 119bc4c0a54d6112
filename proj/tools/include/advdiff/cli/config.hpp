#pragma once

// Toolkit configuration: every tunable of the pipeline in one record, read
// from a key = value file with [sections].

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "advdiff/difficulty_model.hpp"
#include "advdiff/env_agent.hpp"
#include "advdiff/sac.hpp"
#include "advdiff/scenario_dataset.hpp"

namespace advdiff::cli {

inline constexpr const char* kConfigEnvVar = "ADVDIFF_CONFIG";

struct ServeConfig {
  int port = 8080;
  double frame_rate = 10.0;  // frames per wall-clock second
  std::filesystem::path static_dir = "ui/dist";
  std::size_t max_client_queue = 64;  // frames buffered per client before it is dropped
};

struct ToolkitConfig {
  std::uint64_t seed = 0;
  bool desk_scale = false;
  ScenarioConfig scenario;
  sac::SacConfig sac;
  sac::TrainConfig train;
  int group_eval_episodes = 100;
  GenerateConfig dataset;
  DifficultyModelConfig model;
  ModelTrainConfig model_train;
  ServeConfig serve;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Reduced budgets for a single CPU core (roughly an hour end to end).
void apply_desk_scale(ToolkitConfig& config);

/// Parses a config file on top of the defaults. A true general.desk_scale
/// applies the desk profile before the file's other keys. Unknown sections
/// or keys and unparsable values throw ConfigError; a missing file throws
/// ArtifactError.
ToolkitConfig load_config(const std::filesystem::path& path);
ToolkitConfig parse_config(const std::string& text);

/// Fully resolved config in the file format; parse_config(dump_config(c))
/// reproduces c.
std::string dump_config(const ToolkitConfig& config);

/// The explicit path if given, else $ADVDIFF_CONFIG, else none.
std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::filesystem::path>& explicit_path);

}  // namespace advdiff::cli
