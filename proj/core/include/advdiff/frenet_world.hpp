#pragma once

// Straight multi-lane road in Frenet coordinates (s along the road, d to the
// left of the reference line) hosting an ego vehicle, the adversarial
// environment agent and IDM background traffic.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "advdiff/rewards.hpp"

namespace advdiff {

enum class Role { ego, env_agent, traffic };

std::string_view role_name(Role r);

struct RoadModel {
  int lane_count = 3;
  double lane_width = 3.5;
  double road_length = 1000.0;

  /// Center of lane j; lanes are indexed from the right (most negative d).
  double lane_center(int lane) const;
  /// Vehicle centers stay within +-lateral_bound().
  double lateral_bound() const { return lane_count * lane_width / 2.0; }
  int nearest_lane(double d) const;
  int center_lane() const { return (lane_count - 1) / 2; }
  void validate() const;
};

struct VehicleDims {
  double width = 2.077;
  double length = 5.037;
};

struct VehicleState {
  int id = 0;
  Role role = Role::traffic;
  double s = 0.0;
  double d = 0.0;
  double v_s = 0.0;
  double a_s = 0.0;
  double v_d = 0.0;
  VehicleDims dims;
  /// Lane followed by lane keeping (ego and traffic).
  int lane = 0;
  /// IDM desired speed (ego and traffic).
  double desired_speed = 0.0;
};

/// Environment-agent view of the scene; relatives are env minus ego.
struct Observation {
  double delta_s = 0.0;
  double delta_d = 0.0;
  double delta_v_s = 0.0;
  double v_s = 0.0;
  double a_s = 0.0;

  std::array<double, 5> to_array() const { return {delta_s, delta_d, delta_v_s, v_s, a_s}; }
  bool finite() const;
};

struct TrafficParams {
  double density = 1.0;  // vehicles per 100 m of lane
  double speed_low = 8.0;
  double speed_high = 12.0;
  double spawn_range = 180.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ActuatorLimits {
  double a_max = 4.0;
  double v_d_max = 3.0;
  double v_cap = 30.0;
};

struct IdmParams {
  double desired_speed = 10.0;
  double time_headway = 1.5;
  double max_accel = 2.0;
  double comfort_decel = 3.0;
  double min_gap = 2.0;
  double exponent = 4.0;
};

/// Longitudinal acceleration and lateral rate commands.
struct Control {
  double a_s = 0.0;
  double v_d = 0.0;
};

struct WorldConfig {
  RoadModel road;
  VehicleDims dims;
  ActuatorLimits limits;
  IdmParams idm;
  double lane_keep_gain = 1.0;  // 1/s
  double ego_speed = 10.0;
  /// Environment agent spawns this far behind the ego at most (0 = beside).
  double env_spawn_behind = 20.0;
  int episode_max_steps = 400;
  double dt = 0.1;
  RewardParams reward;

  void validate() const;
};

struct StepResult {
  Observation observation;
  RewardBreakdown reward;
  /// Any contact involving the ego or the environment agent.
  bool collision = false;
  /// Contact between the environment agent and the ego (drives the bonus).
  bool ego_hit = false;
  bool done = false;
  int step_index = 0;
};

/// Open-interval overlap of the two road-aligned footprints.
bool check_collision(const VehicleState& a, const VehicleState& b);

/// Clearance between two footprints (0 when they touch or overlap).
double footprint_gap(const VehicleState& a, const VehicleState& b);

/// IDM acceleration for speed v behind a leader at bumper gap `gap` moving
/// at v_lead; without a leader only the free-road term applies.
double idm_acceleration(const IdmParams& p, double v, std::optional<double> gap, double v_lead);

class World {
 public:
  /// Spawns ego, environment agent and traffic. Throws ConfigError on invalid
  /// parameters or when traffic cannot be placed without overlap.
  static World create(const WorldConfig& config, const TrafficParams& traffic, std::uint64_t seed);

  /// Advances one step of length dt with the environment agent's controls.
  StepResult step(const Control& env_control, double dt);
  StepResult step(const Control& env_control) { return step(env_control, config_.dt); }

  Observation observe() const;

  const VehicleState& ego() const { return vehicles_[0]; }
  const VehicleState& env_agent() const { return vehicles_[1]; }
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  const WorldConfig& config() const { return config_; }
  const RewardModel& rewards() const { return rewards_; }

  bool done() const { return done_; }
  int step_index() const { return step_index_; }
  double time() const { return step_index_ * config_.dt; }

  /// IDM plus lane keeping for vehicle i against the nearest vehicle ahead
  /// in its path.
  Control driver_control(std::size_t i) const;

  bool operator==(const World& other) const;

 private:
  World(const WorldConfig& config);

  std::optional<std::size_t> leader_of(std::size_t i) const;

  WorldConfig config_;
  RewardModel rewards_;
  std::vector<VehicleState> vehicles_;
  int step_index_ = 0;
  bool done_ = false;
};

/// Ego surrogate: IDM against the nearest leader in the ego lane plus lane
/// keeping, clamped to the actuator limits.
Control ego_policy(const World& world);

bool operator==(const VehicleState& a, const VehicleState& b);

/// Line-delimited episode trace: t,id,role,s,d,v_s,a_s
void write_trace_header(std::ostream& out);
void append_trace(std::ostream& out, double t, const std::vector<VehicleState>& vehicles);

}  // namespace advdiff
