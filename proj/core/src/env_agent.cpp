#include "advdiff/env_agent.hpp"

#include <algorithm>
#include <random>

#include "advdiff/error.hpp"

namespace advdiff {

void ScenarioConfig::validate() const {
  world.validate();
  traffic.validate();
  if (randomization.enabled &&
      !(randomization.density_low >= 0.0 && randomization.density_low <= randomization.density_high))
    throw ConfigError("traffic randomization: need 0 <= density_low <= density_high");
  if (!(tracker_horizon > 0.0)) throw ConfigError("tracker horizon must be positive");
  if (!(action_max_speed > 0.0)) throw ConfigError("action max speed must be positive");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TrafficParams sample_traffic(const ScenarioConfig& config, std::uint64_t episode_seed) {
  TrafficParams t = config.traffic;
  t.seed = episode_seed;
  if (config.randomization.enabled) {
    std::mt19937_64 rng(mix_seed(episode_seed, 1));
    std::uniform_real_distribution<double> density(config.randomization.density_low,
                                                   config.randomization.density_high);
    t.density = density(rng);
  }
  return t;
}

std::array<double, 5> normalize_observation(const Observation& o) {
  return {o.delta_s / 50.0, o.delta_d / 7.0, o.delta_v_s / 10.0, o.v_s / 22.0, o.a_s / 4.0};
}

AgentEnv::AgentEnv(const ScenarioConfig& config)
    : config_(config),
      bounds_(ActionBounds::for_road(config.world.road, config.action_max_speed)),
      tracker_({config.tracker_horizon, config.gains, config.world.limits}),
      world_(World::create(config.world, sample_traffic(config, 0), 0)) {
  config_.validate();
}

Observation AgentEnv::reset(std::uint64_t episode_seed) {
  world_ = World::create(config_.world, sample_traffic(config_, episode_seed), mix_seed(episode_seed, 2));
  tracker_.reset();
  last_action_ = {};
  episode_return_ = 0.0;
  ego_hit_ = false;
  min_gap_ = footprint_gap(world_.ego(), world_.env_agent());
  return world_.observe();
}

StepResult AgentEnv::step(const EnvAction& action) {
  last_action_ = bounds_.clamp(action);
  const Control c = tracker_.command(world_.env_agent(), last_action_, config_.world.dt);
  StepResult r = world_.step(c);
  episode_return_ += r.reward.total;
  ego_hit_ = ego_hit_ || r.ego_hit;
  min_gap_ = std::min(min_gap_, footprint_gap(world_.ego(), world_.env_agent()));
  return r;
}

StepResult AgentEnv::step_unit(double u_lateral, double u_speed) {
  return step(bounds_.from_unit(u_lateral, u_speed));
}

}  // namespace advdiff
