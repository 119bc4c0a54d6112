#pragma once

// Transformer-encoder model mapping (difficulty factor, observation) to an
// environment-agent action, plus the column-sum attention report.
//
// Six scalar tokens [x_scd, ds, dd, dv, v, a] are embedded one-to-one into
// D-vectors, passed through pre-norm encoder layers, and the normalized
// token 0 feeds a dense head whose tanh output is the unit action.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "advdiff/env_agent.hpp"
#include "advdiff/nn/autodiff.hpp"
#include "advdiff/nn/checkpoint.hpp"
#include "advdiff/nn/layers.hpp"
#include "advdiff/nn/optim.hpp"
#include "advdiff/scenario_dataset.hpp"

namespace advdiff {

inline constexpr int kModelTokens = 6;

struct DifficultyModelConfig {
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int mlp_ratio = 4;
  int head_width = 512;
  int head_layers = 7;  // dense layers in the head, the last one emits 2 outputs

  void validate() const;
};

struct AttentionReport {
  nn::Matrix theta;                 // tokens x tokens, head-averaged
  std::vector<double> theta_tilde;  // column sums
  std::vector<int> lambda;          // token indices by descending contribution
  std::vector<double> upsilon;      // theta_tilde reordered by lambda
};

/// Column sums, their descending order (ties by ascending index) and the
/// sorted values. Throws ShapeError if theta is not square.
AttentionReport attention_report(const nn::Matrix& theta);

/// Scaled token values (x_scd, ds/50, dd/7, dv/10, v/22, a/4).
std::array<double, kModelTokens> model_tokens(double x_scd, const Observation& obs);

class DifficultyModel {
 public:
  DifficultyModel() = default;
  DifficultyModel(const DifficultyModelConfig& config, std::uint64_t seed);

  struct TapeOutput {
    nn::Var unit_action;  // n x 2 in [-1, 1]
    nn::Matrix scores;    // final layer, rows ((b*heads + h)*6 + i)
  };
  /// tokens is n x 6 (see model_tokens). Throws NumericError naming the
  /// stage when an activation is not finite.
  TapeOutput forward(nn::Tape& tape, const nn::Matrix& tokens, bool trainable = true);

  struct Prediction {
    EnvAction action;
    std::array<double, 2> unit{};
    AttentionReport report;
  };
  Prediction predict(double x_scd, const Observation& obs, const ActionBounds& bounds);
  /// Tape-free inference; scores (when given) uses the forward() layout.
  nn::Matrix predict_unit(const nn::Matrix& tokens, nn::Matrix* scores = nullptr);

  /// Head-averaged final-layer scores of sample b.
  nn::Matrix sample_scores(const nn::Matrix& scores, Eigen::Index b) const;

  std::vector<nn::Parameter*> parameters();
  /// Parameter with the given name, or nullptr.
  nn::Parameter* find(const std::string& name);
  const DifficultyModelConfig& config() const { return config_; }

  nn::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {});
  static DifficultyModel from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  struct EncoderLayer {
    nn::Parameter ln1_gain, ln1_shift;
    nn::Dense q, k, v, o;
    nn::Parameter ln2_gain, ln2_shift;
    nn::Dense mlp_in, mlp_out;
  };

  DifficultyModelConfig config_;
  nn::Parameter embed_weight_, embed_bias_, position_;
  std::vector<EncoderLayer> layers_;
  nn::Parameter final_gain_, final_shift_;
  nn::Mlp head_;
};

struct ModelTrainConfig {
  long batch_size = 1024;
  long epochs = 1000;
  double learning_rate = 3e-4;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ModelTrainResult {
  std::vector<double> loss;          // batch MSE per epoch, before the update
  std::vector<double> holdout_loss;  // held-out MSE per epoch, after the update
  long best_epoch = 0;               // 1-based epoch of the lowest held-out loss
};

using EpochCallback = std::function<void(long epoch, double loss, double holdout)>;

/// Per epoch: one random batch (without replacement) from the training
/// split, MSE on unit-normalized actions, one Adam step.
ModelTrainResult train_model(DifficultyModel& model, std::span<const ScenarioSample> samples,
                             const ActionBounds& bounds, const ModelTrainConfig& config,
                             const EpochCallback& on_epoch = {});

/// MSE of the model on samples with unit-normalized actions.
double evaluate_mse(DifficultyModel& model, std::span<const ScenarioSample> samples,
                    const ActionBounds& bounds);

/// Difficulty as a function of simulated time, clamped to [0, 1] on use.
using DifficultySchedule = std::function<double(double t)>;

struct DeployStep {
  double t = 0.0;
  double x_scd = 0.0;
  std::vector<VehicleState> vehicles;
  EnvAction action;
  RewardBreakdown reward;
  bool collision = false;
  bool ego_hit = false;
  std::vector<int> lambda;
  std::vector<double> upsilon;
};

/// One model-driven episode, advanced a step at a time.
class DeploySession {
 public:
  DeploySession(DifficultyModel& model, const ScenarioConfig& scenario);

  void reset(std::uint64_t episode_seed);
  /// Steps once with the given difficulty (clamped to [0, 1]).
  DeployStep step(double x_scd);

  bool done() const { return env_.done(); }
  const AgentEnv& env() const { return env_; }

 private:
  DifficultyModel* model_;
  AgentEnv env_;
  Observation obs_{};
};

struct DeployResult {
  std::vector<DeployStep> steps;
  double episode_return = 0.0;
  double min_gap = 0.0;
  bool ego_hit = false;
};

DeployResult deploy(DifficultyModel& model, const ScenarioConfig& scenario,
                    const DifficultySchedule& schedule, std::uint64_t episode_seed);

/// Vehicle trace rows t,id,role,s,d,v_s,a_s.
void write_deploy_trace(std::ostream& out, const DeployResult& result);
/// Per-step rows with difficulty, action, rewards and attention ordering.
void write_deploy_steps(std::ostream& out, const DeployResult& result);

}  // namespace advdiff
