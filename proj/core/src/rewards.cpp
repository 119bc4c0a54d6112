#include "advdiff/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "advdiff/error.hpp"

namespace advdiff {

namespace {

double ellipse_term(double lateral_excess, double longitudinal_excess, const RewardParams& p) {
  return lateral_excess * lateral_excess / (p.delta1 * p.delta1) +
         longitudinal_excess * longitudinal_excess / (p.delta2 * p.delta2);
}

double clamp_excess(double distance, double body, const RewardParams& p) {
  return std::min(std::max(distance - body, p.r_min), p.r_max);
}

}  // namespace

void RewardParams::validate() const {
  if (!(k_f > 0.0)) throw ConfigError("reward: k_f must be positive");
  if (!(v_max > v_min && v_min > 0.0)) throw ConfigError("reward: need v_max > v_min > 0");
  if (!(delta1 > 0.0 && delta2 > 0.0)) throw ConfigError("reward: delta1 and delta2 must be positive");
  if (!(r_max >= r_min)) throw ConfigError("reward: r_max must be >= r_min");
  if (!(vehicle_width > 0.0 && vehicle_length > 0.0))
    throw ConfigError("reward: vehicle dimensions must be positive");
}

RiskCalibration calibrate(const RewardParams& p) {
  p.validate();
  const double correction =
      std::exp(ellipse_term(p.d_thre - p.vehicle_width, p.s_thre - p.vehicle_length, p));
  if (!(correction > 1.0))
    throw ConfigError("reward: proportional correction factor S must exceed 1");
  const double gain = -p.rho_n / (p.k_f * correction - p.k_f);
  const double offset = p.rho_n - gain * p.k_f;
  return {correction, gain, offset};
}

double risk_term(double delta_s, double delta_d, const RewardParams& p, const RiskCalibration& cal) {
  const double term = ellipse_term(clamp_excess(std::abs(delta_d), p.vehicle_width, p),
                                   clamp_excess(std::abs(delta_s), p.vehicle_length, p), p);
  const double field = std::exp(term) * p.k_f * cal.gain + cal.offset;
  return -std::min(field, 0.0);
}

double speed_term(double v_s, const RewardParams& p) {
  const double kappa_low = v_s / p.v_min;
  const double kappa_high = (v_s - p.v_min) / (p.v_max - p.v_min);
  return -p.rho_L * kappa_low - p.rho_H * kappa_high;
}

double collision_term(bool collided, const RewardParams& p) { return collided ? p.rho_coll : 0.0; }

double total_reward(double r1, double r2, double r3, const RewardParams& p) {
  return (p.literal_total_sign ? -r1 : r1) + r2 + r3;
}

RewardModel::RewardModel(const RewardParams& params) : params_(params), cal_(calibrate(params)) {}

RewardBreakdown RewardModel::evaluate(double delta_s, double delta_d, double v_s, bool collided) const {
  RewardBreakdown r;
  r.risk = risk_term(delta_s, delta_d, params_, cal_);
  r.speed = speed_term(v_s, params_);
  r.collision = collision_term(collided, params_);
  r.total = total_reward(r.risk, r.speed, r.collision, params_);
  return r;
}

}  // namespace advdiff
