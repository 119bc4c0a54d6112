#pragma once

// Polynomial trajectory planning in the Frenet frame and the PID tracker
// that turns an environment-agent action into simulator controls.
//
// Lateral motion uses a quintic d(t) pinned at both ends (offset, rate,
// acceleration). Longitudinal motion uses a quartic s(t) with free final
// position, pinned initial state and final speed/acceleration.

#include <array>

#include "advdiff/frenet_world.hpp"

namespace advdiff {

struct LateralBoundary {
  double d0 = 0.0, d0_dot = 0.0, d0_ddot = 0.0;
  double d_fn = 0.0, d_fn_dot = 0.0, d_fn_ddot = 0.0;
  double horizon = 3.0;  // T_c
};

struct LongitudinalBoundary {
  double s0 = 0.0, s0_dot = 0.0, s0_ddot = 0.0;
  double sf_dot = 0.0, sf_ddot = 0.0;
  double horizon = 3.0;
};

/// Coefficients a0..a5 of a0 + a1 t + ... + a5 t^5.
using QuinticCoeffs = std::array<double, 6>;
/// Coefficients a0..a4 of a0 + a1 t + ... + a4 t^4.
using QuarticCoeffs = std::array<double, 5>;

struct PolySample {
  double value;
  double rate;
  double accel;
};

/// Target lateral offset and longitudinal speed reached after the horizon.
struct EnvAction {
  double d_fn = 0.0;
  double sf_dot = 0.0;
};

/// Bounds of the action space: |d_fn| <= lateral_bound, 0 <= sf_dot <= max_speed.
struct ActionBounds {
  double lateral_bound = 5.25;
  double max_speed = 22.0;

  static ActionBounds for_road(const RoadModel& road, double max_speed = 22.0);
  bool contains(const EnvAction& a) const;
  EnvAction clamp(const EnvAction& a) const;
  /// Affine map from [-1, 1]^2 onto the bounds, and its inverse.
  EnvAction from_unit(double u_lateral, double u_speed) const;
  std::array<double, 2> to_unit(const EnvAction& a) const;
};

/// Solves the 6x6 boundary system. Throws ConfigError if the horizon is not
/// positive and finite.
QuinticCoeffs solve_lateral(const LateralBoundary& b);
/// Solves the 5x5 boundary system.
QuarticCoeffs solve_longitudinal(const LongitudinalBoundary& b);

PolySample eval_poly(const QuinticCoeffs& c, double t);
PolySample eval_poly(const QuarticCoeffs& c, double t);

struct TrackerGains {
  double kp_speed = 1.5;
  double kp_lateral = 4.0;
  double kd_lateral = 0.0;
};

struct PlannedReference {
  QuinticCoeffs lateral;
  QuarticCoeffs longitudinal;
};

/// PID law on the reference evaluated at time t into the plan:
///   a_s = s''_ref + kp_speed (s'_ref - v_s)
///   v_d = d'_ref + kp_lateral (d_ref - d) + kd_lateral (d'_ref - v_d)
/// both clamped to the actuator limits.
Control pid_track(const VehicleState& current, const PlannedReference& plan, double t,
                  const TrackerGains& gains, const ActuatorLimits& limits);

/// Stateful receding-horizon planner plus tracker for one vehicle.
///
/// Replans every step from its own reference state, which starts at the
/// measured state and then follows the plan; the PID law closes the loop on
/// the measured state. While the action is unchanged the horizon shrinks
/// with elapsed time, so the reference stays on the original plan and
/// reaches the action's targets at the horizon; a new action (or an expired
/// plan) restarts the full horizon.
class ActionTracker {
 public:
  struct Config {
    double horizon = 3.0;
    TrackerGains gains;
    ActuatorLimits limits;
  };

  ActionTracker() = default;
  explicit ActionTracker(const Config& config);

  Control command(const VehicleState& current, const EnvAction& action, double dt);
  void reset();

  const PlannedReference& last_plan() const { return plan_; }
  double remaining_horizon() const { return config_.horizon - elapsed_; }

  /// Reference position, rate and acceleration on both axes.
  struct Reference {
    PolySample lateral;
    PolySample longitudinal;
  };
  const Reference& reference() const { return ref_; }

 private:
  Config config_;
  PlannedReference plan_{};
  Reference ref_{};
  EnvAction last_action_{};
  bool has_action_ = false;
  double elapsed_ = 0.0;
};

}  // namespace advdiff
