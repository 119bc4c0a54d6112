#include "advdiff/difficulty_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "advdiff/error.hpp"
#include "io_util.hpp"

namespace advdiff {

using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound, nn::Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Row (b*T + j) = tokens(b, j) * w.row(j) + bias.row(j) + pos.row(j).
Var embed_tokens(const Matrix& tokens, const Var& w, const Var& bias, const Var& pos) {
  const Eigen::Index n = tokens.rows();
  const Eigen::Index t = tokens.cols();
  const Eigen::Index d = w.cols();
  Matrix out(n * t, d);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index j = 0; j < t; ++j)
      out.row(b * t + j) = tokens(b, j) * w.value().row(j) + bias.value().row(j) + pos.value().row(j);
  return w.tape()->record(std::move(out), {w, bias, pos},
                          [tokens, w, bias, pos](Tape& tape, const Matrix&, const Matrix& g) {
                            const Eigen::Index n = tokens.rows();
                            const Eigen::Index t = tokens.cols();
                            Matrix gw = Matrix::Zero(t, g.cols());
                            Matrix gb = Matrix::Zero(t, g.cols());
                            for (Eigen::Index b = 0; b < n; ++b)
                              for (Eigen::Index j = 0; j < t; ++j) {
                                gw.row(j) += tokens(b, j) * g.row(b * t + j);
                                gb.row(j) += g.row(b * t + j);
                              }
                            if (tape.requires_grad(w.id())) tape.accumulate(w, gw);
                            if (tape.requires_grad(bias.id())) tape.accumulate(bias, gb);
                            if (tape.requires_grad(pos.id())) tape.accumulate(pos, gb);
                          });
}

Matrix embed_tokens(const Matrix& tokens, const Matrix& w, const Matrix& bias, const Matrix& pos) {
  const Eigen::Index t = tokens.cols();
  Matrix out(tokens.rows() * t, w.cols());
  for (Eigen::Index b = 0; b < tokens.rows(); ++b)
    for (Eigen::Index j = 0; j < t; ++j)
      out.row(b * t + j) = tokens(b, j) * w.row(j) + bias.row(j) + pos.row(j);
  return out;
}

void require_finite(const Matrix& m, const std::string& stage) {
  if (!nn::all_finite(m)) throw NumericError("difficulty model: non-finite activation in " + stage);
}

const std::string& meta_at(const nn::Checkpoint& c, const std::string& key) {
  const auto it = c.meta.find(key);
  if (it == c.meta.end()) throw ArtifactError("model checkpoint lacks '" + key + "'");
  return it->second;
}

Matrix sample_tokens(std::span<const ScenarioSample> samples) {
  Matrix m(static_cast<Eigen::Index>(samples.size()), kModelTokens);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto t = model_tokens(samples[i].x_scd, samples[i].state);
    for (int j = 0; j < kModelTokens; ++j) m(static_cast<Eigen::Index>(i), j) = t[j];
  }
  return m;
}

Matrix sample_targets(std::span<const ScenarioSample> samples, const ActionBounds& bounds) {
  Matrix m(static_cast<Eigen::Index>(samples.size()), 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto u = bounds.to_unit(samples[i].action);
    m(static_cast<Eigen::Index>(i), 0) = u[0];
    m(static_cast<Eigen::Index>(i), 1) = u[1];
  }
  return m;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

void DifficultyModelConfig::validate() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("model: d_model must be a positive multiple of heads");
  if (layers < 1) throw ConfigError("model: need at least one encoder layer");
  if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
  if (head_width < 1 || head_layers < 1) throw ConfigError("model: head dimensions must be positive");
}

AttentionReport attention_report(const Matrix& theta) {
  if (theta.rows() != theta.cols() || theta.rows() == 0)
    throw ShapeError("attention_report: score matrix must be square");
  AttentionReport r;
  r.theta = theta;
  const Eigen::Index n = theta.cols();
  r.theta_tilde.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) r.theta_tilde[j] = theta.col(j).sum();
  r.lambda.resize(static_cast<std::size_t>(n));
  std::iota(r.lambda.begin(), r.lambda.end(), 0);
  std::stable_sort(r.lambda.begin(), r.lambda.end(),
                   [&](int a, int b) { return r.theta_tilde[a] > r.theta_tilde[b]; });
  for (int idx : r.lambda) r.upsilon.push_back(r.theta_tilde[idx]);
  return r;
}

std::array<double, kModelTokens> model_tokens(double x_scd, const Observation& obs) {
  const std::array<double, 5> f = normalize_observation(obs);
  return {x_scd, f[0], f[1], f[2], f[3], f[4]};
}

DifficultyModel::DifficultyModel(const DifficultyModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Rng rng(seed);
  const int d = config_.d_model;
  embed_weight_ = nn::Parameter("embed.weight", uniform(kModelTokens, d, 1.0, rng));
  embed_bias_ = nn::Parameter("embed.bias", Matrix::Zero(kModelTokens, d));
  position_ = nn::Parameter("embed.position", uniform(kModelTokens, d, 0.1, rng));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    EncoderLayer layer;
    layer.ln1_gain = nn::Parameter(p + ".ln1.gain", Matrix::Ones(1, d));
    layer.ln1_shift = nn::Parameter(p + ".ln1.shift", Matrix::Zero(1, d));
    layer.q = nn::Dense(p + ".q", d, d, nn::Activation::identity, rng);
    layer.k = nn::Dense(p + ".k", d, d, nn::Activation::identity, rng);
    layer.v = nn::Dense(p + ".v", d, d, nn::Activation::identity, rng);
    layer.o = nn::Dense(p + ".o", d, d, nn::Activation::identity, rng);
    layer.ln2_gain = nn::Parameter(p + ".ln2.gain", Matrix::Ones(1, d));
    layer.ln2_shift = nn::Parameter(p + ".ln2.shift", Matrix::Zero(1, d));
    layer.mlp_in = nn::Dense(p + ".mlp_in", d, config_.mlp_ratio * d, nn::Activation::relu, rng);
    layer.mlp_out = nn::Dense(p + ".mlp_out", config_.mlp_ratio * d, d, nn::Activation::identity, rng);
    layers_.push_back(std::move(layer));
  }
  final_gain_ = nn::Parameter("final_ln.gain", Matrix::Ones(1, d));
  final_shift_ = nn::Parameter("final_ln.shift", Matrix::Zero(1, d));
  std::vector<Eigen::Index> widths{d};
  for (int i = 0; i + 1 < config_.head_layers; ++i) widths.push_back(config_.head_width);
  widths.push_back(2);
  head_ = nn::Mlp("head", widths, nn::Activation::relu, nn::Activation::identity, rng);
}

DifficultyModel::TapeOutput DifficultyModel::forward(Tape& tape, const Matrix& tokens, bool trainable) {
  if (tokens.cols() != kModelTokens) throw ShapeError("difficulty model: expected 6 tokens per row");
  auto bind = [&](nn::Parameter& p) { return trainable ? tape.parameter(p) : tape.frozen(p); };
  TapeOutput out;
  Var z = embed_tokens(tokens, bind(embed_weight_), bind(embed_bias_), bind(position_));
  require_finite(z.value(), "embedding");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    EncoderLayer& L = layers_[l];
    const Var h = layer_norm(z, bind(L.ln1_gain), bind(L.ln1_shift));
    Matrix* scores = l + 1 == layers_.size() ? &out.scores : nullptr;
    const Var a = multi_head_attention(L.q.forward(tape, h, trainable), L.k.forward(tape, h, trainable),
                                       L.v.forward(tape, h, trainable), kModelTokens, config_.heads,
                                       scores);
    z = add(z, L.o.forward(tape, a, trainable));
    const Var h2 = layer_norm(z, bind(L.ln2_gain), bind(L.ln2_shift));
    z = add(z, L.mlp_out.forward(tape, L.mlp_in.forward(tape, h2, trainable), trainable));
    require_finite(z.value(), "encoder layer " + std::to_string(l));
  }
  const Var y = layer_norm(take_rows(z, 0, kModelTokens), bind(final_gain_), bind(final_shift_));
  out.unit_action = nn::tanh(head_.forward(tape, y, trainable));
  require_finite(out.unit_action.value(), "head");
  return out;
}

Matrix DifficultyModel::sample_scores(const Matrix& scores, Eigen::Index b) const {
  Matrix theta = Matrix::Zero(kModelTokens, kModelTokens);
  for (int h = 0; h < config_.heads; ++h)
    theta += scores.block((b * config_.heads + h) * kModelTokens, 0, kModelTokens, kModelTokens);
  return theta / static_cast<double>(config_.heads);
}

Matrix DifficultyModel::predict_unit(const Matrix& tokens, Matrix* scores) {
  if (tokens.cols() != kModelTokens) throw ShapeError("difficulty model: expected 6 tokens per row");
  Matrix z = embed_tokens(tokens, embed_weight_.value, embed_bias_.value, position_.value);
  if (scores) scores->resize(tokens.rows() * config_.heads * kModelTokens, kModelTokens);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    EncoderLayer& L = layers_[l];
    const bool last = l + 1 == layers_.size();
    const Matrix h = nn::layer_norm(z, L.ln1_gain.value, L.ln1_shift.value);
    const Matrix q = L.q.forward(h), k = L.k.forward(h), v = L.v.forward(h);
    const Eigen::Index dk = config_.d_model / config_.heads;
    Matrix a(z.rows(), z.cols());
    for (Eigen::Index g = 0; g < tokens.rows(); ++g)
      for (int hd = 0; hd < config_.heads; ++hd) {
        const auto blk = [&](const Matrix& m) {
          return Matrix(m.block(g * kModelTokens, hd * dk, kModelTokens, dk));
        };
        nn::AttentionResult r = nn::attention(blk(q), blk(k), blk(v));
        a.block(g * kModelTokens, hd * dk, kModelTokens, dk) = r.output;
        if (last && scores)
          scores->block((g * config_.heads + hd) * kModelTokens, 0, kModelTokens, kModelTokens) = r.scores;
      }
    z += L.o.forward(a);
    z += L.mlp_out.forward(L.mlp_in.forward(nn::layer_norm(z, L.ln2_gain.value, L.ln2_shift.value)));
  }
  Matrix first(tokens.rows(), z.cols());
  for (Eigen::Index b = 0; b < tokens.rows(); ++b) first.row(b) = z.row(b * kModelTokens);
  const Matrix y = nn::layer_norm(first, final_gain_.value, final_shift_.value);
  Matrix out = head_.forward(y).array().tanh().matrix();
  require_finite(out, "head");
  return out;
}

DifficultyModel::Prediction DifficultyModel::predict(double x_scd, const Observation& obs,
                                                     const ActionBounds& bounds) {
  const auto t = model_tokens(x_scd, obs);
  Matrix tokens(1, kModelTokens);
  for (int j = 0; j < kModelTokens; ++j) tokens(0, j) = t[j];
  Matrix scores;
  const Matrix unit = predict_unit(tokens, &scores);
  Prediction p;
  p.unit = {unit(0, 0), unit(0, 1)};
  p.action = bounds.from_unit(p.unit[0], p.unit[1]);
  p.report = attention_report(sample_scores(scores, 0));
  return p;
}

std::vector<nn::Parameter*> DifficultyModel::parameters() {
  std::vector<nn::Parameter*> ps{&embed_weight_, &embed_bias_, &position_};
  for (EncoderLayer& L : layers_) {
    ps.push_back(&L.ln1_gain);
    ps.push_back(&L.ln1_shift);
    L.q.collect(ps);
    L.k.collect(ps);
    L.v.collect(ps);
    L.o.collect(ps);
    ps.push_back(&L.ln2_gain);
    ps.push_back(&L.ln2_shift);
    L.mlp_in.collect(ps);
    L.mlp_out.collect(ps);
  }
  ps.push_back(&final_gain_);
  ps.push_back(&final_shift_);
  const std::vector<nn::Parameter*> head = head_.parameters();
  ps.insert(ps.end(), head.begin(), head.end());
  return ps;
}

nn::Parameter* DifficultyModel::find(const std::string& name) {
  for (nn::Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

nn::Checkpoint DifficultyModel::to_checkpoint(std::map<std::string, std::string> meta) {
  meta["kind"] = "difficulty_model";
  meta["d_model"] = std::to_string(config_.d_model);
  meta["heads"] = std::to_string(config_.heads);
  meta["layers"] = std::to_string(config_.layers);
  meta["mlp_ratio"] = std::to_string(config_.mlp_ratio);
  meta["head_width"] = std::to_string(config_.head_width);
  meta["head_layers"] = std::to_string(config_.head_layers);
  const std::vector<nn::Parameter*> ps = parameters();
  return nn::snapshot(ps, std::move(meta));
}

DifficultyModel DifficultyModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (meta_at(ckpt, "kind") != "difficulty_model")
    throw ArtifactError("checkpoint does not hold a difficulty model");
  DifficultyModelConfig c;
  c.d_model = static_cast<int>(io::parse_long(meta_at(ckpt, "d_model"), 0));
  c.heads = static_cast<int>(io::parse_long(meta_at(ckpt, "heads"), 0));
  c.layers = static_cast<int>(io::parse_long(meta_at(ckpt, "layers"), 0));
  c.mlp_ratio = static_cast<int>(io::parse_long(meta_at(ckpt, "mlp_ratio"), 0));
  c.head_width = static_cast<int>(io::parse_long(meta_at(ckpt, "head_width"), 0));
  c.head_layers = static_cast<int>(io::parse_long(meta_at(ckpt, "head_layers"), 0));
  DifficultyModel m(c, 0);
  const std::vector<nn::Parameter*> ps = m.parameters();
  nn::restore(ckpt, ps);
  return m;
}

// ---------------------------------------------------------------- training

void ModelTrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("model training: batch size must be >= 1");
  if (epochs < 1) throw ConfigError("model training: epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("model training: learning rate must be >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw ConfigError("model training: holdout fraction must lie in [0, 1)");
}

double evaluate_mse(DifficultyModel& model, std::span<const ScenarioSample> samples,
                    const ActionBounds& bounds) {
  if (samples.empty()) return 0.0;
  const Matrix pred = model.predict_unit(sample_tokens(samples));
  return (pred - sample_targets(samples, bounds)).array().square().mean();
}

ModelTrainResult train_model(DifficultyModel& model, std::span<const ScenarioSample> samples,
                             const ActionBounds& bounds, const ModelTrainConfig& config,
                             const EpochCallback& on_epoch) {
  config.validate();
  if (samples.empty()) throw ConfigError("model training: empty dataset");
  nn::Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(samples.size()));
  const std::size_t n_train = samples.size() - n_hold;
  if (static_cast<std::size_t>(config.batch_size) > n_train)
    throw ConfigError("model training: batch size exceeds the training split");

  const Matrix tokens = sample_tokens(samples);
  const Matrix targets = sample_targets(samples, bounds);
  const std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<long>(n_train));
  const std::vector<std::size_t> hold_idx(order.begin() + static_cast<long>(n_train), order.end());
  const Matrix hold_tokens = gather_rows(tokens, hold_idx);
  const Matrix hold_targets = gather_rows(targets, hold_idx);

  nn::Adam adam(model.parameters(), {config.learning_rate});
  ModelTrainResult result;
  std::vector<std::size_t> pool = train_idx;
  double best = std::numeric_limits<double>::infinity();
  for (long epoch = 1; epoch <= config.epochs; ++epoch) {
    for (long i = 0; i < config.batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
    }
    const std::span<const std::size_t> batch(pool.data(), static_cast<std::size_t>(config.batch_size));
    Tape tape;
    const auto out = model.forward(tape, gather_rows(tokens, batch));
    const Var loss = mean(square(sub(out.unit_action, tape.constant(gather_rows(targets, batch)))));
    if (!std::isfinite(loss.scalar()))
      throw NumericError("model training diverged at epoch " + std::to_string(epoch) + " (seed " +
                         std::to_string(config.seed) + ")");
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
    result.loss.push_back(loss.scalar());

    double hold = 0.0;
    if (n_hold > 0) hold = (model.predict_unit(hold_tokens) - hold_targets).array().square().mean();
    result.holdout_loss.push_back(hold);
    if (hold < best) {
      best = hold;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, loss.scalar(), hold);
  }
  return result;
}

// ---------------------------------------------------------------- deployment

DeploySession::DeploySession(DifficultyModel& model, const ScenarioConfig& scenario)
    : model_(&model), env_(scenario) {}

void DeploySession::reset(std::uint64_t episode_seed) { obs_ = env_.reset(episode_seed); }

DeployStep DeploySession::step(double x_scd) {
  if (env_.done()) throw Error("deploy: episode already finished");
  DeployStep s;
  s.x_scd = std::clamp(x_scd, 0.0, 1.0);
  const DifficultyModel::Prediction p = model_->predict(s.x_scd, obs_, env_.bounds());
  const StepResult r = env_.step(p.action);
  obs_ = r.observation;
  s.t = env_.world().time();
  s.vehicles = env_.world().vehicles();
  s.action = env_.last_action();
  s.reward = r.reward;
  s.collision = r.collision;
  s.ego_hit = r.ego_hit;
  s.lambda = p.report.lambda;
  s.upsilon = p.report.upsilon;
  return s;
}

DeployResult deploy(DifficultyModel& model, const ScenarioConfig& scenario, const DifficultySchedule& schedule,
                    std::uint64_t episode_seed) {
  DeploySession session(model, scenario);
  session.reset(episode_seed);
  DeployResult result;
  while (!session.done()) result.steps.push_back(session.step(schedule(session.env().world().time())));
  result.episode_return = session.env().episode_return();
  result.min_gap = session.env().min_gap();
  result.ego_hit = session.env().ego_hit();
  return result;
}

void write_deploy_trace(std::ostream& out, const DeployResult& result) {
  write_trace_header(out);
  for (const DeployStep& s : result.steps) append_trace(out, s.t, s.vehicles);
}

void write_deploy_steps(std::ostream& out, const DeployResult& result) {
  out << "t,x_scd,action_d_fn,action_sf_dot,r1,r2,r3,total,collision";
  for (int j = 0; j < kModelTokens; ++j) out << ",lambda" << j;
  for (int j = 0; j < kModelTokens; ++j) out << ",upsilon" << j;
  out << '\n';
  for (const DeployStep& s : result.steps) {
    out << io::format_double(s.t) << ',' << io::format_double(s.x_scd) << ','
        << io::format_double(s.action.d_fn) << ',' << io::format_double(s.action.sf_dot) << ','
        << io::format_double(s.reward.risk) << ',' << io::format_double(s.reward.speed) << ','
        << io::format_double(s.reward.collision) << ',' << io::format_double(s.reward.total) << ','
        << (s.collision ? 1 : 0);
    for (int l : s.lambda) out << ',' << l;
    for (double u : s.upsilon) out << ',' << io::format_double(u);
    out << '\n';
  }
}

}  // namespace advdiff
