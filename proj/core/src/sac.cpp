#include "advdiff/sac.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

#include "advdiff/error.hpp"
#include "advdiff/return_curve.hpp"
#include "io_util.hpp"

namespace advdiff::sac {

namespace {

constexpr double kLog2 = std::numbers::ln2;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Matrix softplus(const Matrix& x) {
  return x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
}

// log(1 - tanh(u)^2), stable for large |u|.
Matrix log_one_minus_tanh_sq(const Matrix& u) {
  return (2.0 * (kLog2 - u.array() - softplus(-2.0 * u).array())).matrix();
}

Matrix gaussian_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::string join_widths(const std::vector<Eigen::Index>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::vector<Eigen::Index> parse_widths(const std::string& s) {
  std::vector<Eigen::Index> out;
  if (s.empty()) return out;
  for (std::string_view part : io::split(s, ',')) out.push_back(io::parse_long(part, 0));
  return out;
}

const std::string& meta_at(const nn::Checkpoint& c, const std::string& key) {
  const auto it = c.meta.find(key);
  if (it == c.meta.end()) throw ArtifactError("policy checkpoint lacks '" + key + "'");
  return it->second;
}

bool all_finite(const UpdateStats& s) {
  return std::isfinite(s.critic.q1) && std::isfinite(s.critic.q2) && std::isfinite(s.actor_loss) &&
         std::isfinite(s.alpha);
}

}  // namespace

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim)
    : capacity_(capacity),
      obs_(Matrix::Zero(static_cast<Eigen::Index>(capacity), obs_dim)),
      action_(Matrix::Zero(static_cast<Eigen::Index>(capacity), act_dim)),
      raw_action_(Matrix::Zero(static_cast<Eigen::Index>(capacity), act_dim)),
      reward_(Matrix::Zero(static_cast<Eigen::Index>(capacity), 1)),
      next_obs_(Matrix::Zero(static_cast<Eigen::Index>(capacity), obs_dim)),
      done_(Matrix::Zero(static_cast<Eigen::Index>(capacity), 1)) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::add(std::span<const double> obs, std::span<const double> action,
                       std::span<const double> raw_action, double reward,
                       std::span<const double> next_obs, bool done) {
  if (static_cast<Eigen::Index>(obs.size()) != obs_.cols() ||
      static_cast<Eigen::Index>(next_obs.size()) != obs_.cols() ||
      static_cast<Eigen::Index>(action.size()) != action_.cols() ||
      static_cast<Eigen::Index>(raw_action.size()) != action_.cols())
    throw ShapeError("replay buffer: transition dimensions differ from buffer layout");
  const auto row = static_cast<Eigen::Index>(next_);
  for (Eigen::Index j = 0; j < obs_.cols(); ++j) {
    obs_(row, j) = obs[j];
    next_obs_(row, j) = next_obs[j];
  }
  for (Eigen::Index j = 0; j < action_.cols(); ++j) {
    action_(row, j) = action[j];
    raw_action_(row, j) = raw_action[j];
  }
  reward_(row, 0) = reward;
  done_(row, 0) = done ? 1.0 : 0.0;
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (n > size_) throw ConfigError("replay buffer: batch larger than stored transitions");
  std::vector<std::size_t> out;
  out.reserve(n);
  std::unordered_set<std::size_t> seen;
  seen.reserve(2 * n);
  for (std::size_t j = size_ - n; j < size_; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    const std::size_t chosen = seen.count(t) ? j : t;
    seen.insert(chosen);
    out.push_back(chosen);
  }
  return out;
}

Batch ReplayBuffer::gather(std::span<const std::size_t> idx) const {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Batch b{Matrix(n, obs_.cols()), Matrix(n, action_.cols()), Matrix(n, 1), Matrix(n, obs_.cols()),
          Matrix(n, 1)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(idx[i]);
    b.obs.row(i) = obs_.row(r);
    b.action.row(i) = action_.row(r);
    b.reward(i, 0) = reward_(r, 0);
    b.next_obs.row(i) = next_obs_.row(r);
    b.done(i, 0) = done_(r, 0);
  }
  return b;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  const std::vector<std::size_t> idx = sample_indices(n, rng);
  return gather(idx);
}

// ---------------------------------------------------------------- policy

Var bounded_log_std(const Var& raw, double lo, double hi) {
  const Var upper = add_scalar(nn::neg(nn::softplus(add_scalar(nn::neg(raw), hi))), hi);
  return add_scalar(nn::softplus(add_scalar(upper, -lo)), lo);
}

Matrix bounded_log_std(const Matrix& raw, double lo, double hi) {
  const Matrix upper = (hi - softplus((hi - raw.array()).matrix()).array()).matrix();
  return (lo + softplus((upper.array() - lo).matrix()).array()).matrix();
}

GaussianPolicy::GaussianPolicy(int obs_dim, int act_dim, const std::vector<Eigen::Index>& hidden, Rng& rng)
    : obs_dim_(obs_dim), act_dim_(act_dim), hidden_(hidden) {
  if (obs_dim < 1 || act_dim < 1) throw ConfigError("policy dimensions must be positive");
  std::vector<Eigen::Index> widths{obs_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * act_dim);
  trunk_ = nn::Mlp("policy", widths, nn::Activation::relu, nn::Activation::identity, rng);
}

PolicyOutput GaussianPolicy::forward(Tape& tape, const Var& obs, const Matrix& noise, bool trainable) {
  if (noise.rows() != obs.rows() || noise.cols() != act_dim_)
    throw ShapeError("policy: noise shape must be batch x act_dim");
  const Var out = trunk_.forward(tape, obs, trainable);
  PolicyOutput p;
  p.mean = slice_cols(out, 0, act_dim_);
  p.log_std = bounded_log_std(slice_cols(out, act_dim_, act_dim_), kLogStdMin, kLogStdMax);
  const Var u = add(p.mean, mul(nn::exp(p.log_std), tape.constant(noise)));
  p.action = nn::tanh(u);
  const Matrix base =
      (-0.5 * noise.array().square().rowwise().sum() - act_dim_ * kHalfLog2Pi).matrix();
  const Var jac = scale(add_scalar(nn::neg(add(u, nn::softplus(scale(u, -2.0)))), kLog2), 2.0);
  p.log_prob = sub(sub(tape.constant(base), row_sum(p.log_std)), row_sum(jac));
  return p;
}

GaussianPolicy::Sample GaussianPolicy::sample(const Matrix& obs, Rng& rng) {
  const Matrix out = trunk_.forward(obs);
  const Matrix mean = out.leftCols(act_dim_);
  const Matrix log_std = bounded_log_std(out.rightCols(act_dim_), kLogStdMin, kLogStdMax);
  const Matrix noise = gaussian_noise(obs.rows(), act_dim_, rng);
  Sample s;
  s.raw = mean + (log_std.array().exp() * noise.array()).matrix();
  s.action = s.raw.array().tanh().matrix();
  s.log_prob = (-0.5 * noise.array().square().rowwise().sum() - log_std.array().rowwise().sum() -
                act_dim_ * kHalfLog2Pi - log_one_minus_tanh_sq(s.raw).array().rowwise().sum())
                   .matrix();
  return s;
}

Matrix GaussianPolicy::deterministic(const Matrix& obs) {
  return trunk_.forward(obs).leftCols(act_dim_).array().tanh().matrix();
}

Matrix GaussianPolicy::log_prob(const Matrix& obs, const Matrix& action) {
  if (action.rows() != obs.rows() || action.cols() != act_dim_)
    throw ShapeError("policy: action shape must be batch x act_dim");
  const Matrix out = trunk_.forward(obs);
  const Matrix mean = out.leftCols(act_dim_);
  const Matrix log_std = bounded_log_std(out.rightCols(act_dim_), kLogStdMin, kLogStdMax);
  const Matrix u = action.array().atanh().matrix();
  const Matrix z = ((u - mean).array() / log_std.array().exp()).matrix();
  return (-0.5 * z.array().square().rowwise().sum() - log_std.array().rowwise().sum() -
          act_dim_ * kHalfLog2Pi - log_one_minus_tanh_sq(u).array().rowwise().sum())
      .matrix();
}

nn::Checkpoint GaussianPolicy::to_checkpoint(std::map<std::string, std::string> meta) {
  meta["kind"] = "gaussian_policy";
  meta["obs_dim"] = std::to_string(obs_dim_);
  meta["act_dim"] = std::to_string(act_dim_);
  meta["hidden"] = join_widths(hidden_);
  const std::vector<nn::Parameter*> params = parameters();
  return nn::snapshot(params, std::move(meta));
}

GaussianPolicy GaussianPolicy::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (meta_at(ckpt, "kind") != "gaussian_policy")
    throw ArtifactError("checkpoint does not hold a Gaussian policy");
  Rng rng(0);
  GaussianPolicy p(static_cast<int>(io::parse_long(meta_at(ckpt, "obs_dim"), 0)),
                   static_cast<int>(io::parse_long(meta_at(ckpt, "act_dim"), 0)),
                   parse_widths(meta_at(ckpt, "hidden")), rng);
  const std::vector<nn::Parameter*> params = p.parameters();
  nn::restore(ckpt, params);
  return p;
}

// ---------------------------------------------------------------- updates

void SacConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("sac: gamma must lie in [0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("sac: tau must lie in [0, 1]");
  if (!(actor_lr >= 0.0 && critic_lr >= 0.0 && alpha_lr >= 0.0))
    throw ConfigError("sac: learning rates must be >= 0");
  if (!(initial_alpha > 0.0)) throw ConfigError("sac: initial alpha must be positive");
  if (batch_size == 0) throw ConfigError("sac: batch size must be positive");
}

ActorResult actor_update(GaussianPolicy& policy, nn::Adam& optimizer, const QFunction& q, double alpha,
                         const Matrix& obs, Rng& rng) {
  Tape tape;
  const Matrix noise = gaussian_noise(obs.rows(), policy.act_dim(), rng);
  const Var o = tape.constant(obs);
  const PolicyOutput out = policy.forward(tape, o, noise);
  const Var loss = mean(sub(scale(out.log_prob, alpha), q(tape, o, out.action)));
  optimizer.zero_grad();
  tape.backward(loss);
  optimizer.step();
  return {loss.scalar(), out.log_prob.value()};
}

Matrix soft_targets(GaussianPolicy& policy, const nn::Mlp& target1, const nn::Mlp& target2,
                    const Batch& batch, double alpha, double gamma, Rng& rng) {
  const GaussianPolicy::Sample next = policy.sample(batch.next_obs, rng);
  Matrix x(batch.next_obs.rows(), batch.next_obs.cols() + next.action.cols());
  x << batch.next_obs, next.action;
  const Matrix q = target1.forward(x).cwiseMin(target2.forward(x));
  const Matrix soft_v = q - alpha * next.log_prob;
  return (batch.reward.array() + gamma * (1.0 - batch.done.array()) * soft_v.array()).matrix();
}

SacAgent::SacAgent(int obs_dim, int act_dim, const SacConfig& config, std::uint64_t seed)
    : config_(config), rng_(seed) {
  config_.validate();
  Rng init(mix_seed(seed, 0x5ac));
  policy_ = GaussianPolicy(obs_dim, act_dim, config_.hidden, init);
  std::vector<Eigen::Index> widths{obs_dim + act_dim};
  widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
  widths.push_back(1);
  q1_ = nn::Mlp("q1", widths, nn::Activation::relu, nn::Activation::identity, init);
  q2_ = nn::Mlp("q2", widths, nn::Activation::relu, nn::Activation::identity, init);
  q1_target_ = q1_;
  q2_target_ = q2_;
  log_alpha_ = nn::Parameter("log_alpha", Matrix::Constant(1, 1, std::log(config_.initial_alpha)));

  actor_opt_ = nn::Adam(policy_.parameters(), {config_.actor_lr});
  std::vector<nn::Parameter*> critics = q1_.parameters();
  const std::vector<nn::Parameter*> second = q2_.parameters();
  critics.insert(critics.end(), second.begin(), second.end());
  critic_opt_ = nn::Adam(critics, {config_.critic_lr});
  alpha_opt_ = nn::Adam({&log_alpha_}, {config_.alpha_lr});
}

GaussianPolicy::Sample SacAgent::act(const Matrix& obs, bool deterministic) {
  if (!deterministic) return policy_.sample(obs, rng_);
  GaussianPolicy::Sample s;
  s.action = policy_.deterministic(obs);
  s.raw = s.action.array().atanh().matrix();
  s.log_prob = Matrix::Zero(obs.rows(), 1);
  return s;
}

double SacAgent::alpha() const { return std::exp(log_alpha_.value(0, 0)); }

void SacAgent::set_alpha(double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("temperature must be positive");
  log_alpha_.value(0, 0) = std::log(alpha);
}

QFunction SacAgent::min_q() {
  return [this](Tape& tape, const Var& obs, const Var& action) {
    const Var x = concat_cols(obs, action);
    return nn::min(q1_.forward(tape, x, false), q2_.forward(tape, x, false));
  };
}

CriticLosses SacAgent::critic_update(const Batch& batch) {
  const Matrix y = soft_targets(policy_, q1_target_, q2_target_, batch, alpha(), config_.gamma, rng_);
  Tape tape;
  const Var x = concat_cols(tape.constant(batch.obs), tape.constant(batch.action));
  const Var target = tape.constant(y);
  const Var l1 = mean(square(sub(q1_.forward(tape, x), target)));
  const Var l2 = mean(square(sub(q2_.forward(tape, x), target)));
  critic_opt_.zero_grad();
  tape.backward(add(l1, l2));
  critic_opt_.step();
  return {l1.scalar(), l2.scalar()};
}

ActorResult SacAgent::actor_update(const Matrix& obs) {
  return sac::actor_update(policy_, actor_opt_, min_q(), alpha(), obs, rng_);
}

double SacAgent::temperature_update(const Matrix& log_prob) {
  if (!config_.auto_temperature) return alpha();
  const double gap = log_prob.mean() + config_.target_entropy;
  alpha_opt_.zero_grad();
  log_alpha_.grad(0, 0) = -alpha() * gap;
  alpha_opt_.step();
  return alpha();
}

void SacAgent::update_targets() {
  q1_target_.polyak_from(q1_, config_.tau);
  q2_target_.polyak_from(q2_, config_.tau);
}

UpdateStats SacAgent::update(const Batch& batch) {
  UpdateStats s;
  s.critic = critic_update(batch);
  const ActorResult actor = actor_update(batch.obs);
  s.actor_loss = actor.loss;
  s.entropy = -actor.log_prob.mean();
  s.alpha = temperature_update(actor.log_prob);
  update_targets();
  return s;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
  if (!(warmup_steps >= 0 && warmup_steps < total_steps))
    throw ConfigError("train: need 0 <= warmup_steps < total_steps");
  if (snapshot_interval < 1) throw ConfigError("train: snapshot interval must be >= 1");
  if (replay_capacity == 0) throw ConfigError("train: replay capacity must be positive");
  if (smoothing_window < 1) throw ConfigError("train: smoothing window must be >= 1");
}

Matrix policy_input(const Observation& obs) {
  const std::array<double, 5> f = normalize_observation(obs);
  Matrix m(1, 5);
  for (int j = 0; j < 5; ++j) m(0, j) = f[j];
  return m;
}

TrainResult train(const TrainConfig& tc, const SacConfig& sc, const ScenarioConfig& scenario,
                  const EpisodeCallback& on_episode) {
  tc.validate();
  sc.validate();
  AgentEnv env(scenario);
  SacAgent agent(5, 2, sc, mix_seed(tc.seed, 11));
  Rng rng(mix_seed(tc.seed, 12));
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  ReplayBuffer buffer(tc.replay_capacity, 5, 2);

  TrainResult result;
  long episode = 0;
  int length = 0;
  Observation obs = env.reset(mix_seed(tc.seed, 1000 + episode));
  UpdateStats last{};
  for (long step = 1; step <= tc.total_steps; ++step) {
    const Matrix x = policy_input(obs);
    std::array<double, 2> u{};
    std::array<double, 2> raw{};
    if (step <= tc.warmup_steps) {
      for (int j = 0; j < 2; ++j) {
        u[j] = uniform(rng);
        raw[j] = std::atanh(std::clamp(u[j], -1.0 + 1e-12, 1.0 - 1e-12));
      }
    } else {
      const GaussianPolicy::Sample s = agent.act(x, false);
      for (int j = 0; j < 2; ++j) {
        u[j] = s.action(0, j);
        raw[j] = s.raw(0, j);
      }
    }
    const StepResult r = env.step_unit(u[0], u[1]);
    ++length;
    const Matrix x2 = policy_input(r.observation);
    buffer.add({x.data(), 5}, u, raw, r.reward.total, {x2.data(), 5}, r.collision);

    if (step > tc.warmup_steps && buffer.size() >= sc.batch_size) {
      last = agent.update(buffer.sample(sc.batch_size, rng));
      if (!all_finite(last))
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (seed " +
                           std::to_string(tc.seed) + ")");
    }

    if (!r.done) {
      obs = r.observation;
      continue;
    }
    EpisodeRecord rec;
    rec.episode = episode;
    rec.step = step;
    rec.ret = env.episode_return();
    rec.length = length;
    rec.ego_hit = env.ego_hit();
    result.episodes.push_back(rec);
    if (on_episode) on_episode(rec, last);
    if ((episode + 1) % tc.snapshot_interval == 0 && (!tc.cutoff_step || step <= *tc.cutoff_step)) {
      SnapshotRecord snap;
      snap.step = step;
      snap.episode = episode;
      snap.policy = agent.policy().to_checkpoint({{"step", std::to_string(step)},
                                                  {"seed", std::to_string(tc.seed)}});
      result.snapshots.push_back(std::move(snap));
    }
    ++episode;
    length = 0;
    obs = env.reset(mix_seed(tc.seed, 1000 + episode));
  }

  std::vector<double> returns;
  for (const EpisodeRecord& e : result.episodes) returns.push_back(e.ret);
  const std::vector<double> smooth = moving_average(returns, tc.smoothing_window);
  std::vector<CurvePoint> curve;
  for (std::size_t i = 0; i < result.episodes.size(); ++i) {
    result.episodes[i].smoothed = smooth[i];
    curve.push_back({static_cast<double>(result.episodes[i].step), smooth[i]});
  }
  if (tc.cutoff_step) {
    result.cutoff_step = *tc.cutoff_step;
  } else if (!curve.empty()) {
    result.cutoff_step = static_cast<long>(improvement_cutoff(curve, tc.cutoff_fraction));
    std::erase_if(result.snapshots, [&](const SnapshotRecord& s) { return s.step > result.cutoff_step; });
  } else {
    result.cutoff_step = tc.total_steps;
  }

  if (!tc.snapshot_dir.empty()) {
    std::filesystem::create_directories(tc.snapshot_dir);
    for (SnapshotRecord& s : result.snapshots) {
      s.path = tc.snapshot_dir / ("policy_step_" + std::to_string(s.step) + ".ckpt");
      nn::save_checkpoint(s.path, s.policy);
    }
  }
  result.final_policy = agent.policy().to_checkpoint({{"step", std::to_string(tc.total_steps)},
                                                      {"seed", std::to_string(tc.seed)}});
  return result;
}

void write_return_curve(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write return curve " + path.string());
  out << "episode,step,return,smoothed_return\n";
  for (const EpisodeRecord& e : episodes)
    out << e.episode << ',' << e.step << ',' << io::format_double(e.ret) << ','
        << io::format_double(e.smoothed) << '\n';
}

std::vector<EpisodeRecord> read_return_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("return curve not found: " + path.string());
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line) || io::trim_cr(line) != "episode,step,return,smoothed_return")
    throw FormatError("unexpected return curve header", 1);
  std::vector<EpisodeRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = io::trim_cr(line);
    if (row.empty()) continue;
    const auto f = io::split(row, ',');
    if (f.size() != 4) throw FormatError("expected 4 fields", line_no);
    EpisodeRecord e;
    e.episode = io::parse_long(f[0], line_no);
    e.step = io::parse_long(f[1], line_no);
    e.ret = io::parse_double(f[2], line_no);
    e.smoothed = io::parse_double(f[3], line_no);
    out.push_back(e);
  }
  return out;
}

}  // namespace advdiff::sac
