#pragma once

// Policy-group construction: pick training snapshots whose average return
// splits the best return into equal fractions, then evaluate the chosen
// policies side by side.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advdiff/env_agent.hpp"
#include "advdiff/return_curve.hpp"
#include "advdiff/sac.hpp"

namespace advdiff {

inline constexpr int kGroupLevels = 5;

/// Difficulty label of level i (1-based): i / 5.
double level_difficulty(int level);

struct GroupMember {
  int level = 0;
  double difficulty = 0.0;
  double target_return = 0.0;  // level fraction of the best return
  double target_step = 0.0;    // inverse return curve at the target
  std::size_t snapshot = 0;    // index into the snapshot steps
  long step = 0;
  double smoothed_return_at_step = 0.0;
};

struct GroupSelection {
  double max_return = 0.0;
  std::vector<CurvePoint> monotone_curve;
  std::vector<GroupMember> members;
};

/// Index of the step nearest to target; ties go to the smaller step.
/// Throws ConfigError for an empty list.
std::size_t nearest_snapshot(std::span<const long> steps, double target);

/// Linear interpolation of a curve at step (clamped to its ends).
double curve_value_at(std::span<const CurvePoint> curve, double step);

/// Projects the smoothed curve to be non-decreasing, splits its maximum R
/// into fractions i/5 and picks the nearest snapshot for each level.
GroupSelection build_group(std::span<const long> snapshot_steps, std::span<const CurvePoint> smoothed_curve);

struct PolicyGroupEntry {
  double difficulty_label = 0.0;
  std::filesystem::path checkpoint_path;
  long step = 0;
  double smoothed_return_at_step = 0.0;
};

struct PolicyGroup {
  std::vector<PolicyGroupEntry> levels;
};

/// JSON manifest. Checkpoint paths are stored relative to the manifest's
/// directory when possible and resolved against it on read.
void write_group_manifest(const std::filesystem::path& path, const PolicyGroup& group);
PolicyGroup read_group_manifest(const std::filesystem::path& path);

/// Loads every level's policy. Throws ArtifactError for a missing file.
std::vector<sac::GaussianPolicy> load_group_policies(const PolicyGroup& group);

struct LevelMetrics {
  int level = 0;
  double mean_return = 0.0;
  double collision_rate = 0.0;  // share of episodes ending in env/ego contact
  double mean_min_gap = 0.0;
};

/// Runs one deterministic episode per seed for every policy; episode e uses
/// the same traffic seed at every level.
std::vector<LevelMetrics> evaluate_group(std::span<sac::GaussianPolicy> policies, int episodes,
                                         const ScenarioConfig& scenario, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either input is constant.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace advdiff
