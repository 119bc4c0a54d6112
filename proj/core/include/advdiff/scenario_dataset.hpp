#pragma once

// Difficulty-labeled supervision data: every simulator step of each policy
// group level becomes one (difficulty, state, action) sample.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advdiff/env_agent.hpp"
#include "advdiff/sac.hpp"

namespace advdiff {

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetHeader =
    "x_scd,delta_s,delta_d,delta_v_s,v_s,a_s,action_d_fn,action_sf_dot";

struct ScenarioSample {
  double x_scd = 0.0;
  Observation state;
  EnvAction action;
};

struct DatasetManifest {
  int version = kDatasetVersion;
  long n_sc = 0;
  long n_episode = 0;
  std::uint64_t seed = 0;
  std::vector<double> labels;
  std::vector<long> class_counts;
  std::vector<long> episodes_used;
  std::vector<bool> shortfall;  // level ran out of episodes before n_sc
  std::string policy_group;

  bool complete() const;
};

struct Dataset {
  std::vector<ScenarioSample> samples;
  DatasetManifest manifest;
};

struct GenerateConfig {
  long n_sc = 10000;
  long n_episode = 1000;
  std::uint64_t seed = 0;
  bool stochastic = true;
  std::string policy_group;  // recorded in the manifest only
};

/// Deploys policy i (0-based) with label (i + 1) / 5 until the class holds
/// at least n_sc samples (checked at episode ends) or n_episode episodes ran.
Dataset generate_dataset(std::span<sac::GaussianPolicy> policies, const ScenarioConfig& scenario,
                         const GenerateConfig& config);

/// Writes the CSV and <path>.manifest.json beside it.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
/// Reads the CSV; the manifest is read when present and its version checked.
Dataset read_dataset(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

struct FieldStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct ClassStats {
  double label = 0.0;
  long count = 0;
  /// delta_s, delta_d, delta_v_s, v_s, a_s, action_d_fn, action_sf_dot
  std::array<FieldStats, 7> fields{};
};

/// Per-label summaries in ascending label order. Throws ConfigError when
/// the dataset is empty.
std::vector<ClassStats> class_stats(std::span<const ScenarioSample> samples);

}  // namespace advdiff
