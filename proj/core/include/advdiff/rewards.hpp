#pragma once

// Adversarial reward for the environment agent: a potential-field risk term
// on the relative distance to the ego, a minimum-speed term, and a collision
// bonus.

namespace advdiff {

struct RewardParams {
  double r_min = 0.0;
  double r_max = 150.0;
  double delta1 = 8.0;   // lateral repulsion influence
  double delta2 = 10.0;  // longitudinal repulsion influence
  double k_f = 0.001;
  double vehicle_width = 2.077;   // L_a
  double vehicle_length = 5.037;  // L_b
  double rho_n = -18.0;
  double d_thre = 0.8;
  double s_thre = 20.0;
  double rho_L = 0.5;
  double rho_H = 4.0;
  double v_min = 7.5;
  double v_max = 22.0;
  double rho_coll = 200.0;
  /// false: R = r1 + r2 + r3. true: R = -r1 + r2 + r3.
  bool literal_total_sign = false;

  /// Throws ConfigError when the record violates its invariants.
  void validate() const;
};

/// Scaling constants that pin the risk field to [0, -rho_n].
struct RiskCalibration {
  double correction;  // S
  double gain;        // g
  double offset;      // b
};

RiskCalibration calibrate(const RewardParams& params);

/// Risk reward r1 for one environment-agent/ego pair. Uses |delta_d| and
/// |delta_s|, so the field is symmetric about the ego.
double risk_term(double delta_s, double delta_d, const RewardParams& params,
                 const RiskCalibration& cal);

double speed_term(double v_s, const RewardParams& params);

double collision_term(bool collided, const RewardParams& params);

double total_reward(double r1, double r2, double r3, const RewardParams& params);

struct RewardBreakdown {
  double risk = 0.0;
  double speed = 0.0;
  double collision = 0.0;
  double total = 0.0;
};

/// Calibrated evaluator; computes the calibration once.
class RewardModel {
 public:
  explicit RewardModel(const RewardParams& params = {});

  RewardBreakdown evaluate(double delta_s, double delta_d, double v_s, bool collided) const;

  const RewardParams& params() const { return params_; }
  const RiskCalibration& calibration() const { return cal_; }

 private:
  RewardParams params_;
  RiskCalibration cal_;
};

}  // namespace advdiff
