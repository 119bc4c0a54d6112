#include "advdiff/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "advdiff/error.hpp"

namespace advdiff {

namespace {

// Gaussian elimination with partial pivoting on a dense N x N system.
template <std::size_t N>
std::array<double, N> solve_dense(std::array<std::array<double, N>, N> a, std::array<double, N> b) {
  for (std::size_t col = 0; col < N; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < N; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (a[pivot][col] == 0.0) throw NumericError("singular boundary system");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < N; ++r) {
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < N; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, N> x{};
  for (std::size_t i = N; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < N; ++c) acc -= a[i][c] * x[c];
    x[i] = acc / a[i][i];
  }
  return x;
}

void check_horizon(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("planning horizon must be positive");
}

template <std::size_t N>
PolySample horner(const std::array<double, N>& c, double t) {
  double p = 0.0, dp = 0.0, ddp = 0.0;
  for (std::size_t i = N; i-- > 0;) {
    ddp = ddp * t + 2.0 * dp;
    dp = dp * t + p;
    p = p * t + c[i];
  }
  return {p, dp, ddp};
}

}  // namespace

ActionBounds ActionBounds::for_road(const RoadModel& road, double max_speed) {
  return {road.lateral_bound(), max_speed};
}

bool ActionBounds::contains(const EnvAction& a) const {
  return std::abs(a.d_fn) <= lateral_bound && a.sf_dot >= 0.0 && a.sf_dot <= max_speed;
}

EnvAction ActionBounds::clamp(const EnvAction& a) const {
  return {std::clamp(a.d_fn, -lateral_bound, lateral_bound), std::clamp(a.sf_dot, 0.0, max_speed)};
}

EnvAction ActionBounds::from_unit(double u_lateral, double u_speed) const {
  return clamp({u_lateral * lateral_bound, (u_speed + 1.0) * 0.5 * max_speed});
}

std::array<double, 2> ActionBounds::to_unit(const EnvAction& a) const {
  return {a.d_fn / lateral_bound, 2.0 * a.sf_dot / max_speed - 1.0};
}

QuinticCoeffs solve_lateral(const LateralBoundary& b) {
  check_horizon(b.horizon);
  const double t = b.horizon;
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
  const std::array<std::array<double, 6>, 6> m = {{
      {1, 0, 0, 0, 0, 0},
      {0, 1, 0, 0, 0, 0},
      {0, 0, 2, 0, 0, 0},
      {1, t, t2, t3, t4, t5},
      {0, 1, 2 * t, 3 * t2, 4 * t3, 5 * t4},
      {0, 0, 2, 6 * t, 12 * t2, 20 * t3},
  }};
  return solve_dense<6>(m, {b.d0, b.d0_dot, b.d0_ddot, b.d_fn, b.d_fn_dot, b.d_fn_ddot});
}

QuarticCoeffs solve_longitudinal(const LongitudinalBoundary& b) {
  check_horizon(b.horizon);
  const double t = b.horizon;
  const double t2 = t * t, t3 = t2 * t;
  const std::array<std::array<double, 5>, 5> m = {{
      {1, 0, 0, 0, 0},
      {0, 1, 0, 0, 0},
      {0, 0, 2, 0, 0},
      {0, 1, 2 * t, 3 * t2, 4 * t3},
      {0, 0, 2, 6 * t, 12 * t2},
  }};
  return solve_dense<5>(m, {b.s0, b.s0_dot, b.s0_ddot, b.sf_dot, b.sf_ddot});
}

PolySample eval_poly(const QuinticCoeffs& c, double t) { return horner(c, t); }
PolySample eval_poly(const QuarticCoeffs& c, double t) { return horner(c, t); }

Control pid_track(const VehicleState& current, const PlannedReference& plan, double t,
                  const TrackerGains& gains, const ActuatorLimits& limits) {
  const PolySample lat = eval_poly(plan.lateral, t);
  const PolySample lon = eval_poly(plan.longitudinal, t);
  Control c;
  c.a_s = lon.accel + gains.kp_speed * (lon.rate - current.v_s);
  c.v_d = lat.rate + gains.kp_lateral * (lat.value - current.d) + gains.kd_lateral * (lat.rate - current.v_d);
  c.a_s = std::clamp(c.a_s, -limits.a_max, limits.a_max);
  c.v_d = std::clamp(c.v_d, -limits.v_d_max, limits.v_d_max);
  return c;
}

ActionTracker::ActionTracker(const Config& config) : config_(config) { check_horizon(config.horizon); }

void ActionTracker::reset() {
  plan_ = {};
  ref_ = {};
  last_action_ = {};
  has_action_ = false;
  elapsed_ = 0.0;
}

Control ActionTracker::command(const VehicleState& current, const EnvAction& action, double dt) {
  if (!(dt > 0.0)) throw ConfigError("tracker: dt must be positive");
  if (!has_action_) ref_ = {{current.d, current.v_d, 0.0}, {current.s, current.v_s, current.a_s}};
  const bool same = has_action_ && action.d_fn == last_action_.d_fn && action.sf_dot == last_action_.sf_dot;
  if (!same || config_.horizon - elapsed_ < 0.5 * dt) elapsed_ = 0.0;
  const double horizon = config_.horizon - elapsed_;

  const PolySample& lat = ref_.lateral;
  const PolySample& lon = ref_.longitudinal;
  plan_.lateral = solve_lateral({lat.value, lat.rate, lat.accel, action.d_fn, 0.0, 0.0, horizon});
  plan_.longitudinal = solve_longitudinal({lon.value, lon.rate, lon.accel, action.sf_dot, 0.0, horizon});
  const double t = std::min(dt, horizon);
  const Control c = pid_track(current, plan_, t, config_.gains, config_.limits);
  ref_ = {eval_poly(plan_.lateral, t), eval_poly(plan_.longitudinal, t)};

  last_action_ = action;
  has_action_ = true;
  elapsed_ += dt;
  return c;
}

}  // namespace advdiff
