#pragma once

// Soft actor-critic with twin Q critics, Polyak-averaged targets and
// automatic temperature. Actions live in [-1, 1]^act_dim (tanh-squashed
// Gaussian); callers map them onto their own bounds.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "advdiff/env_agent.hpp"
#include "advdiff/nn/autodiff.hpp"
#include "advdiff/nn/checkpoint.hpp"
#include "advdiff/nn/layers.hpp"
#include "advdiff/nn/optim.hpp"

namespace advdiff::sac {

using nn::Matrix;
using nn::Rng;
using nn::Tape;
using nn::Var;

struct Batch {
  Matrix obs;
  Matrix action;
  Matrix reward;  // n x 1
  Matrix next_obs;
  Matrix done;  // n x 1, 1 for terminal transitions
};

/// Fixed-capacity ring of transitions.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim);

  /// raw_action is the pre-squash sample, kept for diagnostics.
  void add(std::span<const double> obs, std::span<const double> action,
           std::span<const double> raw_action, double reward, std::span<const double> next_obs,
           bool done);

  /// n distinct indices drawn uniformly (Floyd's algorithm). Throws
  /// ConfigError if n exceeds size().
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
  Batch sample(std::size_t n, Rng& rng) const;
  Batch gather(std::span<const std::size_t> indices) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  const Matrix& raw_actions() const { return raw_action_; }

 private:
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  Matrix obs_, action_, raw_action_, reward_, next_obs_, done_;
};

struct PolicyOutput {
  Var action;    // squashed, n x act_dim
  Var log_prob;  // n x 1, density of the squashed action
  Var mean;
  Var log_std;
};

/// Tanh-squashed diagonal Gaussian. log_std is bounded smoothly to
/// [log_std_min, log_std_max].
class GaussianPolicy {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  GaussianPolicy() = default;
  GaussianPolicy(int obs_dim, int act_dim, const std::vector<Eigen::Index>& hidden, Rng& rng);

  /// Reparameterized sample a = tanh(mean + std * noise). Zero noise gives
  /// the deterministic action (its log_prob is still the density there).
  PolicyOutput forward(Tape& tape, const Var& obs, const Matrix& noise, bool trainable = true);

  struct Sample {
    Matrix action;
    Matrix raw;
    Matrix log_prob;
  };
  Sample sample(const Matrix& obs, Rng& rng);
  Matrix deterministic(const Matrix& obs);
  /// Log-density of squashed actions (|a| < 1) at the given observations.
  Matrix log_prob(const Matrix& obs, const Matrix& action);

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  const std::vector<Eigen::Index>& hidden() const { return hidden_; }
  nn::Mlp& trunk() { return trunk_; }
  std::vector<nn::Parameter*> parameters() { return trunk_.parameters(); }

  nn::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {});
  static GaussianPolicy from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  int obs_dim_ = 0;
  int act_dim_ = 0;
  std::vector<Eigen::Index> hidden_;
  nn::Mlp trunk_;
};

Var bounded_log_std(const Var& raw, double lo, double hi);
Matrix bounded_log_std(const Matrix& raw, double lo, double hi);

/// Batch Q values (n x 1) for observation and action rows.
using QFunction = std::function<Var(Tape&, const Var& obs, const Var& action)>;

struct SacConfig {
  std::vector<Eigen::Index> hidden{256, 256};
  double gamma = 0.99;
  double tau = 5e-3;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double initial_alpha = 1.0;
  double target_entropy = -2.0;
  bool auto_temperature = true;
  std::size_t batch_size = 256;

  void validate() const;
};

struct CriticLosses {
  double q1 = 0.0;
  double q2 = 0.0;
};

struct ActorResult {
  double loss = 0.0;
  Matrix log_prob;  // of the reparameterized actions, n x 1
};

struct UpdateStats {
  CriticLosses critic;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
};

/// Minimizes mean(alpha * log_prob(a|s) - Q(s, a)) with reparameterized a.
ActorResult actor_update(GaussianPolicy& policy, nn::Adam& optimizer, const QFunction& q,
                         double alpha, const Matrix& obs, Rng& rng);

/// Soft Bellman targets r + gamma (1 - done)(min target Q - alpha log pi).
Matrix soft_targets(GaussianPolicy& policy, const nn::Mlp& target1, const nn::Mlp& target2,
                    const Batch& batch, double alpha, double gamma, Rng& rng);

class SacAgent {
 public:
  SacAgent(int obs_dim, int act_dim, const SacConfig& config, std::uint64_t seed);

  SacAgent(const SacAgent&) = delete;
  SacAgent& operator=(const SacAgent&) = delete;

  /// One row of actions per observation row.
  GaussianPolicy::Sample act(const Matrix& obs, bool deterministic);

  CriticLosses critic_update(const Batch& batch);
  ActorResult actor_update(const Matrix& obs);
  /// Gradient step on log alpha minimizing mean(-alpha (log_prob + target)).
  double temperature_update(const Matrix& log_prob);
  /// target <- tau online + (1 - tau) target for both critics.
  void update_targets();
  /// critic, actor, temperature and target updates in that order.
  UpdateStats update(const Batch& batch);

  /// min(Q1, Q2) with frozen critic weights.
  QFunction min_q();

  double alpha() const;
  void set_alpha(double alpha);

  GaussianPolicy& policy() { return policy_; }
  nn::Mlp& critic(int i) { return i == 0 ? q1_ : q2_; }
  nn::Mlp& target(int i) { return i == 0 ? q1_target_ : q2_target_; }
  const SacConfig& config() const { return config_; }
  Rng& rng() { return rng_; }

 private:
  SacConfig config_;
  Rng rng_;
  GaussianPolicy policy_;
  nn::Mlp q1_, q2_, q1_target_, q2_target_;
  nn::Parameter log_alpha_;
  nn::Adam actor_opt_, critic_opt_, alpha_opt_;
};

struct TrainConfig {
  long total_steps = 100000;
  long warmup_steps = 1000;
  int snapshot_interval = 10;  // episodes
  std::size_t replay_capacity = 100000;
  int smoothing_window = 20;
  std::uint64_t seed = 0;
  /// Snapshots stop after this step. When unset it is derived from the
  /// run's own return curve and later snapshots are discarded.
  std::optional<long> cutoff_step;
  double cutoff_fraction = 0.95;
  /// When non-empty, snapshots are written as policy_step_<step>.ckpt.
  std::filesystem::path snapshot_dir;

  void validate() const;
};

struct EpisodeRecord {
  long episode = 0;
  long step = 0;  // global step at episode end
  double ret = 0.0;
  double smoothed = 0.0;
  int length = 0;
  bool ego_hit = false;
};

struct SnapshotRecord {
  long step = 0;
  long episode = 0;
  nn::Checkpoint policy;
  std::filesystem::path path;
};

struct TrainResult {
  std::vector<EpisodeRecord> episodes;
  std::vector<SnapshotRecord> snapshots;
  nn::Checkpoint final_policy;
  long cutoff_step = 0;
};

using EpisodeCallback = std::function<void(const EpisodeRecord&, const UpdateStats&)>;

/// Policy search in the traffic scenario. Throws NumericError on a
/// non-finite loss, naming the step and seed.
TrainResult train(const TrainConfig& train_config, const SacConfig& sac_config,
                  const ScenarioConfig& scenario, const EpisodeCallback& on_episode = {});

/// Features fed to the policy for one observation.
Matrix policy_input(const Observation& obs);

/// Writes episode,step,return,smoothed_return rows.
void write_return_curve(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes);
std::vector<EpisodeRecord> read_return_curve(const std::filesystem::path& path);

}  // namespace advdiff::sac
