#pragma once

// Episode plumbing shared by training, evaluation, data collection and
// deployment: per-episode traffic randomization, the action-to-control path
// through the tracker, and per-episode bookkeeping.

#include <array>
#include <cstdint>

#include "advdiff/frenet_world.hpp"
#include "advdiff/trajectory.hpp"

namespace advdiff {

/// Per-episode resampling of the traffic density.
struct TrafficRandomization {
  bool enabled = true;
  double density_low = 0.5;
  double density_high = 2.0;
};

struct ScenarioConfig {
  WorldConfig world;
  TrafficParams traffic;
  TrafficRandomization randomization;
  double tracker_horizon = 3.0;
  TrackerGains gains;
  double action_max_speed = 22.0;

  void validate() const;
};

/// SplitMix64 finalizer over a ^ golden-ratio-scaled b.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Traffic parameters for one episode; a pure function of the seed.
TrafficParams sample_traffic(const ScenarioConfig& config, std::uint64_t episode_seed);

/// Network features: (ds/50, dd/7, dv/10, v/22, a/4).
std::array<double, 5> normalize_observation(const Observation& obs);

/// World plus tracker driven by environment-agent actions.
class AgentEnv {
 public:
  explicit AgentEnv(const ScenarioConfig& config);

  Observation reset(std::uint64_t episode_seed);
  StepResult step(const EnvAction& action);
  /// Action given in [-1, 1]^2 and mapped onto the action bounds.
  StepResult step_unit(double u_lateral, double u_speed);

  const World& world() const { return world_; }
  const ScenarioConfig& config() const { return config_; }
  const ActionBounds& bounds() const { return bounds_; }
  const EnvAction& last_action() const { return last_action_; }

  double episode_return() const { return episode_return_; }
  /// Smallest env/ego footprint clearance seen since reset.
  double min_gap() const { return min_gap_; }
  bool ego_hit() const { return ego_hit_; }
  bool done() const { return world_.done(); }

 private:
  ScenarioConfig config_;
  ActionBounds bounds_;
  ActionTracker tracker_;
  World world_;
  EnvAction last_action_{};
  double episode_return_ = 0.0;
  double min_gap_ = 0.0;
  bool ego_hit_ = false;
};

}  // namespace advdiff
