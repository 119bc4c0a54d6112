#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <filesystem>
#include <set>

#include "advdiff/error.hpp"
#include "advdiff/sac.hpp"
#include "oracles.hpp"
#include "sac_experiments.hpp"

using namespace advdiff;
using namespace advdiff::sac;

namespace {

void add_scalar_transition(ReplayBuffer& b, double obs, double reward, bool done) {
  const double o[1] = {obs}, a[1] = {0.0};
  b.add(o, a, a, reward, o, done);
}

}  // namespace

TEST(Replay, RingKeepsNewestTransitions) {
  ReplayBuffer b(20, 1, 1);
  for (int i = 0; i < 25; ++i) add_scalar_transition(b, i, i * 10.0, i % 2 == 0);
  EXPECT_EQ(b.size(), 20u);
  std::vector<std::size_t> all(20);
  for (std::size_t i = 0; i < 20; ++i) all[i] = i;
  const Batch batch = b.gather(all);
  std::set<double> seen;
  for (Eigen::Index i = 0; i < 20; ++i) {
    seen.insert(batch.obs(i, 0));
    EXPECT_EQ(batch.reward(i, 0), batch.obs(i, 0) * 10.0);
    EXPECT_EQ(batch.done(i, 0), static_cast<int>(batch.obs(i, 0)) % 2 == 0 ? 1.0 : 0.0);
  }
  EXPECT_EQ(*seen.begin(), 5.0);
  EXPECT_EQ(*seen.rbegin(), 24.0);
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Replay, RejectsOversizedBatchAndBadShapes) {
  ReplayBuffer b(10, 2, 1);
  Rng rng(1);
  EXPECT_THROW(b.sample_indices(1, rng), ConfigError);
  const double o[1] = {0.0};
  EXPECT_THROW(b.add(o, o, o, 0.0, o, false), ShapeError);
  EXPECT_THROW(ReplayBuffer(0, 1, 1), ConfigError);
}

TEST(Replay, SamplingIsUniformWithoutReplacement) {
  ReplayBuffer b(20, 1, 1);
  for (int i = 0; i < 25; ++i) add_scalar_transition(b, i, 0.0, false);
  Rng rng(5);
  std::vector<double> counts(20, 0.0);
  const int draws = 20000;
  for (int k = 0; k < draws; ++k) {
    const auto idx = b.sample_indices(5, rng);
    ASSERT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 5u);
    for (std::size_t i : idx) counts[i] += 1.0;
  }
  const double expected = draws * 5.0 / 20.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(19);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));
  EXPECT_GT(p, 1e-3) << "chi2 = " << chi2;
}

TEST(Policy, LogStdBoundIsSmoothAndMonotone) {
  Matrix raw(1, 7);
  raw << -100, -25, -5, 0, 1, 5, 100;
  const Matrix b = bounded_log_std(raw, -20.0, 2.0);
  // The outer softplus overshoots the upper bound by log1p(exp(-22)).
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    EXPECT_GE(b(0, j), -20.0);
    EXPECT_LE(b(0, j), 2.0 + 1e-9);
    if (j) EXPECT_GT(b(0, j), b(0, j - 1) - 1e-15);
  }
  EXPECT_NEAR(b(0, 3), 0.0, 0.2);
}

TEST(Policy, LogProbMatchesCdfDerivative) {
  Rng rng(11);
  GaussianPolicy policy(3, 1, {8}, rng);
  const Matrix obs = oracle::random_matrix(1, 3, rng);
  Tape tape;
  const PolicyOutput out = policy.forward(tape, tape.constant(obs), Matrix::Zero(1, 1), false);
  const double mu = out.mean.value()(0, 0), sigma = std::exp(out.log_std.value()(0, 0));
  for (double a = -0.95; a <= 0.95; a += 0.05) {
    const double h = 1e-6;
    const double density =
        (oracle::tanh_normal_cdf(a + h, mu, sigma) - oracle::tanh_normal_cdf(a - h, mu, sigma)) / (2 * h);
    const double lp = policy.log_prob(obs, Matrix::Constant(1, 1, a))(0, 0);
    EXPECT_NEAR(std::exp(lp), density, 1e-6 * (1.0 + density)) << a;
  }
  const double mass = oracle::simpson([&](double u) {
    const double a = std::tanh(u);
    return std::exp(policy.log_prob(obs, Matrix::Constant(1, 1, a))(0, 0)) * (1.0 - a * a);
  }, mu - 12 * sigma, mu + 12 * sigma, 8000);
  EXPECT_NEAR(mass, 1.0, 1e-6);
}

TEST(Policy, SampleAndForwardAgreeOnLogProb) {
  Rng rng(12);
  GaussianPolicy policy(5, 2, {16, 16}, rng);
  const Matrix obs = oracle::random_matrix(64, 5, rng);
  Rng sample_rng(3);
  const GaussianPolicy::Sample s = policy.sample(obs, sample_rng);
  EXPECT_LE(s.action.cwiseAbs().maxCoeff(), 1.0);
  const Matrix lp = policy.log_prob(obs, s.action);
  for (Eigen::Index i = 0; i < obs.rows(); ++i) {
    if (s.action.row(i).cwiseAbs().maxCoeff() < 0.999999) EXPECT_NEAR(lp(i, 0), s.log_prob(i, 0), 1e-6);
  }
  const Matrix det = policy.deterministic(obs);
  Tape tape;
  const PolicyOutput out = policy.forward(tape, tape.constant(obs), Matrix::Zero(64, 2), false);
  EXPECT_LE((out.action.value() - det).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Policy, StableJacobianForLargePreactivations) {
  Rng rng(13);
  GaussianPolicy policy(1, 1, {4}, rng);
  Tape tape;
  Matrix noise(1, 1);
  noise << 1e4;
  const PolicyOutput out = policy.forward(tape, tape.constant(Matrix::Ones(1, 1)), noise, false);
  EXPECT_TRUE(std::isfinite(out.log_prob.value()(0, 0)));
}

TEST(Policy, CheckpointRoundTrip) {
  Rng rng(14);
  GaussianPolicy policy(5, 2, {8, 8}, rng);
  const nn::Checkpoint c = policy.to_checkpoint({{"step", "42"}});
  EXPECT_EQ(c.meta.at("kind"), "gaussian_policy");
  EXPECT_EQ(c.meta.at("step"), "42");
  GaussianPolicy back = GaussianPolicy::from_checkpoint(c);
  const Matrix obs = oracle::random_matrix(3, 5, rng);
  EXPECT_EQ(back.deterministic(obs), policy.deterministic(obs));
  nn::Checkpoint wrong = c;
  wrong.meta["kind"] = "other";
  EXPECT_THROW(GaussianPolicy::from_checkpoint(wrong), ArtifactError);
}

TEST(SoftTargets, DiscountAndTerminalHandling) {
  SacConfig cfg;
  cfg.hidden = {8};
  SacAgent agent(2, 1, cfg, 3);
  Batch b{oracle::random_matrix(6, 2, agent.rng()), oracle::random_matrix(6, 1, agent.rng(), 0.9),
          oracle::random_matrix(6, 1, agent.rng(), 5.0), oracle::random_matrix(6, 2, agent.rng()),
          Matrix::Zero(6, 1)};
  const Matrix y0 = soft_targets(agent.policy(), agent.target(0), agent.target(1), b, 0.7, 0.0, agent.rng());
  EXPECT_EQ(y0, b.reward);
  b.done = Matrix::Ones(6, 1);
  const Matrix yd = soft_targets(agent.policy(), agent.target(0), agent.target(1), b, 0.7, 0.99, agent.rng());
  EXPECT_EQ(yd, b.reward);
  b.done(2, 0) = 0.0;
  const Matrix y = soft_targets(agent.policy(), agent.target(0), agent.target(1), b, 0.7, 0.99, agent.rng());
  EXPECT_NE(y(2, 0), b.reward(2, 0));
}

TEST(SoftTargets, MatchesManualBackup) {
  SacConfig cfg;
  cfg.hidden = {8};
  SacAgent agent(2, 1, cfg, 4);
  const Batch b{Matrix::Zero(1, 2), Matrix::Zero(1, 1), Matrix::Constant(1, 1, 1.5),
                oracle::random_matrix(1, 2, agent.rng()), Matrix::Zero(1, 1)};
  Rng r1(9), r2(9);
  const Matrix y = soft_targets(agent.policy(), agent.target(0), agent.target(1), b, 0.3, 0.9, r1);
  const GaussianPolicy::Sample s = agent.policy().sample(b.next_obs, r2);
  Matrix x(1, 3);
  x << b.next_obs, s.action;
  const double q = std::min(agent.target(0).forward(x)(0, 0), agent.target(1).forward(x)(0, 0));
  EXPECT_NEAR(y(0, 0), 1.5 + 0.9 * (q - 0.3 * s.log_prob(0, 0)), 1e-12);
}

TEST(Temperature, MovesTowardTargetEntropy) {
  SacConfig cfg;
  cfg.hidden = {8};
  cfg.alpha_lr = 0.01;
  SacAgent agent(2, 2, cfg, 5);
  const double a0 = agent.alpha();
  EXPECT_DOUBLE_EQ(a0, 1.0);
  // log_prob above -target_entropy means too little entropy: alpha grows.
  EXPECT_GT(agent.temperature_update(Matrix::Constant(8, 1, 10.0)), a0);
  agent.set_alpha(1.0);
  EXPECT_LT(agent.temperature_update(Matrix::Constant(8, 1, -10.0)), 1.0);
}

TEST(Temperature, ZeroRateOrFixedTemperatureHoldsAlpha) {
  SacConfig cfg;
  cfg.hidden = {8};
  cfg.alpha_lr = 0.0;
  SacAgent frozen(2, 2, cfg, 5);
  EXPECT_DOUBLE_EQ(frozen.temperature_update(Matrix::Constant(8, 1, 10.0)), 1.0);
  cfg.alpha_lr = 0.01;
  cfg.auto_temperature = false;
  SacAgent fixed(2, 2, cfg, 5);
  EXPECT_DOUBLE_EQ(fixed.temperature_update(Matrix::Constant(8, 1, 10.0)), 1.0);
}

TEST(Targets, PolyakAveraging) {
  SacConfig cfg;
  cfg.hidden = {8};
  cfg.tau = 0.25;
  SacAgent agent(2, 1, cfg, 6);
  for (nn::Parameter* p : agent.critic(0).parameters()) p->value.array() += 1.0;
  std::vector<Matrix> before, online;
  for (nn::Parameter* p : agent.target(0).parameters()) before.push_back(p->value);
  for (nn::Parameter* p : agent.critic(0).parameters()) online.push_back(p->value);
  agent.update_targets();
  const auto t = agent.target(0).parameters();
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_LE((t[i]->value - (0.25 * online[i] + 0.75 * before[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Config, Validation) {
  SacConfig c;
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.initial_alpha = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  TrainConfig t;
  t.snapshot_interval = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(SacOracle, SoftPolicyEvaluationOnTwoStateChain) {
  const experiments::SoftMdpResult r = experiments::run_soft_mdp(1);
  EXPECT_LE(r.max_error, 0.05) << "oracle |Q| up to " << r.q_scale;
}

TEST(SacOracle, BanditPolicyMatchesBoltzmann) {
  EXPECT_LE(experiments::run_bandit(2), 0.05);
}

namespace {

struct SmallRun {
  TrainConfig tc;
  SacConfig sc;
  ScenarioConfig scenario;
  SmallRun() {
    tc.total_steps = 600;
    tc.warmup_steps = 100;
    tc.snapshot_interval = 2;
    tc.smoothing_window = 3;
    tc.seed = 9;
    sc.hidden = {16, 16};
    sc.batch_size = 32;
    scenario.world.episode_max_steps = 60;
  }
};

}  // namespace

TEST(Train, DeterministicBookkeeping) {
  const SmallRun run;
  std::vector<EpisodeRecord> seen;
  const TrainResult a = train(run.tc, run.sc, run.scenario,
                              [&](const EpisodeRecord& r, const UpdateStats&) { seen.push_back(r); });
  const TrainResult b = train(run.tc, run.sc, run.scenario);
  ASSERT_FALSE(a.episodes.empty());
  ASSERT_EQ(a.episodes.size(), b.episodes.size());
  ASSERT_EQ(seen.size(), a.episodes.size());
  long prev = 0;
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    EXPECT_EQ(a.episodes[i].ret, b.episodes[i].ret);
    EXPECT_EQ(a.episodes[i].episode, static_cast<long>(i));
    EXPECT_EQ(a.episodes[i].step - prev, a.episodes[i].length);
    EXPECT_LE(a.episodes[i].length, 60);
    prev = a.episodes[i].step;
  }
  for (const SnapshotRecord& s : a.snapshots) {
    EXPECT_EQ((s.episode + 1) % 2, 0);
    EXPECT_LE(s.step, a.cutoff_step);
  }
  EXPECT_EQ(a.final_policy.meta.at("kind"), "gaussian_policy");
}

TEST(Train, FixedCutoffAndSnapshotFiles) {
  SmallRun run;
  run.tc.cutoff_step = 300;
  run.tc.snapshot_dir = std::filesystem::temp_directory_path() / "advdiff_train_test";
  std::filesystem::remove_all(run.tc.snapshot_dir);
  const TrainResult r = train(run.tc, run.sc, run.scenario);
  EXPECT_EQ(r.cutoff_step, 300);
  ASSERT_FALSE(r.snapshots.empty());
  for (const SnapshotRecord& s : r.snapshots) {
    EXPECT_LE(s.step, 300);
    EXPECT_TRUE(std::filesystem::exists(s.path));
    EXPECT_EQ(s.path.filename().string(), "policy_step_" + std::to_string(s.step) + ".ckpt");
  }
  const auto curve = run.tc.snapshot_dir / "curve.csv";
  write_return_curve(curve, r.episodes);
  const std::vector<EpisodeRecord> back = read_return_curve(curve);
  ASSERT_EQ(back.size(), r.episodes.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].ret, r.episodes[i].ret);
    EXPECT_EQ(back[i].smoothed, r.episodes[i].smoothed);
    EXPECT_EQ(back[i].step, r.episodes[i].step);
  }
  std::filesystem::remove_all(run.tc.snapshot_dir);
}
