#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "advdiff/env_agent.hpp"
#include "advdiff/error.hpp"
#include "advdiff/frenet_world.hpp"
#include "oracles.hpp"

using namespace advdiff;

namespace {

TrafficParams traffic(double density, std::uint64_t seed = 0) {
  TrafficParams t;
  t.density = density;
  t.seed = seed;
  return t;
}

VehicleState at(double s, double d) {
  VehicleState v;
  v.s = s;
  v.d = d;
  return v;
}

}  // namespace

TEST(Road, LaneCentersAndBounds) {
  const RoadModel r;
  EXPECT_DOUBLE_EQ(r.lane_center(0), -3.5);
  EXPECT_DOUBLE_EQ(r.lane_center(1), 0.0);
  EXPECT_DOUBLE_EQ(r.lane_center(2), 3.5);
  EXPECT_DOUBLE_EQ(r.lateral_bound(), 5.25);
  EXPECT_EQ(r.nearest_lane(3.0), 2);
  EXPECT_EQ(r.center_lane(), 1);
  RoadModel bad;
  bad.lane_count = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(World, EmptyTrafficHasTwoVehicles) {
  const World w = World::create({}, traffic(0.0), 3);
  ASSERT_EQ(w.vehicles().size(), 2u);
  EXPECT_EQ(w.ego().role, Role::ego);
  EXPECT_EQ(w.env_agent().role, Role::env_agent);
  EXPECT_EQ(w.ego().lane, RoadModel{}.center_lane());
  EXPECT_EQ(std::abs(w.env_agent().lane - w.ego().lane), 1);
  EXPECT_LE(w.env_agent().s, w.ego().s);
}

TEST(World, TrafficSpawnWithinRangeAndSpeeds) {
  const World w = World::create({}, traffic(1.0, 7), 7);
  ASSERT_GT(w.vehicles().size(), 2u);
  for (std::size_t i = 2; i < w.vehicles().size(); ++i) {
    const VehicleState& v = w.vehicles()[i];
    EXPECT_GE(v.v_s, 8.0);
    EXPECT_LE(v.v_s, 12.0);
    EXPECT_LE(std::abs(v.s - w.ego().s), 180.0);
    for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(check_collision(v, w.vehicles()[j]));
  }
}

TEST(World, CreationIsDeterministic) {
  const World a = World::create({}, traffic(1.5), 42);
  const World b = World::create({}, traffic(1.5), 42);
  EXPECT_TRUE(a == b);
  const World c = World::create({}, traffic(1.5), 43);
  EXPECT_FALSE(a == c);
}

TEST(World, RejectsImpossibleDensity) {
  EXPECT_THROW(World::create({}, traffic(40.0), 1), ConfigError);
}

TEST(World, ObservationSignConvention) {
  World w = World::create({}, traffic(0.0), 5);
  const Observation o = w.observe();
  EXPECT_EQ(o.delta_s, w.env_agent().s - w.ego().s);
  EXPECT_EQ(o.delta_d, w.env_agent().d - w.ego().d);
  EXPECT_EQ(o.delta_v_s, w.env_agent().v_s - w.ego().v_s);
  EXPECT_EQ(o.v_s, w.env_agent().v_s);
  EXPECT_EQ(o.a_s, w.env_agent().a_s);
  EXPECT_DOUBLE_EQ(std::abs(o.delta_d), 3.5);
}

TEST(World, StepIntegratesAndClamps) {
  World w = World::create({}, traffic(0.0), 5);
  const VehicleState env = w.env_agent();
  const StepResult r = w.step({9.0, 0.0}, 0.1);
  EXPECT_EQ(w.env_agent().s, env.s + env.v_s * 0.1);
  EXPECT_DOUBLE_EQ(w.env_agent().v_s, env.v_s + 0.4);
  EXPECT_EQ(w.env_agent().a_s, 4.0);
  EXPECT_EQ(w.env_agent().d, env.d);
  EXPECT_EQ(r.step_index, 1);
  EXPECT_FALSE(r.done);
}

TEST(World, ConstantSpeedAdvancesExactly) {
  WorldConfig cfg;
  cfg.ego_speed = 10.0;
  World w = World::create(cfg, traffic(0.0), 1);
  const double s0 = w.ego().s;
  w.step({0.0, 0.0}, 0.1);
  EXPECT_EQ(w.ego().s, s0 + 1.0);
}

TEST(World, RejectsNonFiniteControl) {
  World w = World::create({}, traffic(0.0), 1);
  EXPECT_THROW(w.step({std::nan(""), 0.0}), NumericError);
  EXPECT_THROW(w.step({0.0, INFINITY}), NumericError);
}

TEST(World, EpisodeContract) {
  WorldConfig cfg;
  cfg.episode_max_steps = 5;
  World w = World::create(cfg, traffic(0.0), 1);
  for (int i = 0; i < 4; ++i) EXPECT_FALSE(w.step({0.0, 0.0}).done);
  EXPECT_TRUE(w.step({0.0, 0.0}).done);
  const World frozen = w;
  EXPECT_THROW(w.step({0.0, 0.0}), Error);
  EXPECT_TRUE(w == frozen);
}

TEST(World, RammingTheEgoEndsTheEpisode) {
  World w = World::create({}, traffic(0.0), 9);
  StepResult r;
  const double dir = w.ego().d > w.env_agent().d ? 3.0 : -3.0;
  for (int i = 0; i < 400 && !w.done(); ++i) {
    const Observation o = w.observe();
    r = w.step({o.delta_s < 0 ? 4.0 : -4.0, std::abs(o.delta_d) > 0.1 ? dir : 0.0});
  }
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.ego_hit);
  EXPECT_TRUE(r.collision);
  EXPECT_EQ(r.reward.collision, 200.0);
}

TEST(Collision, Examples) {
  EXPECT_TRUE(check_collision(at(0, 0), at(0, 0)));
  EXPECT_FALSE(check_collision(at(0, 0), at(5.037, 0)));
  EXPECT_TRUE(check_collision(at(0, 0), at(5.0, 2.0)));
  EXPECT_FALSE(check_collision(at(0, 0), at(0, 2.077)));
  EXPECT_DOUBLE_EQ(footprint_gap(at(0, 0), at(10.037, 0)), 5.0);
  EXPECT_EQ(footprint_gap(at(0, 0), at(1, 1)), 0.0);
}

TEST(CollisionProperty, SymmetricAndConsistentWithGap) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> s(-8.0, 8.0), d(-4.0, 4.0);
  for (int i = 0; i < 5000; ++i) {
    const VehicleState a = at(s(rng), d(rng)), b = at(s(rng), d(rng));
    EXPECT_EQ(check_collision(a, b), check_collision(b, a));
    EXPECT_EQ(footprint_gap(a, b), footprint_gap(b, a));
    if (footprint_gap(a, b) > 0.0) EXPECT_FALSE(check_collision(a, b));
  }
}

TEST(Idm, MatchesFormula) {
  const IdmParams p;
  EXPECT_NEAR(idm_acceleration(p, 10.0, std::nullopt, 0.0), 0.0, 1e-12);
  const double braking = idm_acceleration(p, 10.0, 2.0, 0.0);
  EXPECT_LE(braking, -3.0);
  EXPECT_NEAR(braking, oracle::idm(10.0, 10.0, 2.0, 0.0), 1e-9);
  EXPECT_NEAR(idm_acceleration(p, 8.0, 30.0, 9.0), oracle::idm(8.0, 10.0, 30.0, 9.0), 1e-9);
}

TEST(EgoPolicy, LaneCenteredFreeRoadIsIdle) {
  WorldConfig cfg;
  cfg.ego_speed = cfg.idm.desired_speed;
  World w = World::create(cfg, traffic(0.0), 2);
  const Control c = ego_policy(w);
  EXPECT_NEAR(c.v_d, 0.0, 1e-12);
  EXPECT_LE(std::abs(c.a_s), 1e-12);
}

TEST(WorldProperty, DeterminismAndBoundsUnderRandomControls) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> a(-8.0, 8.0), vd(-6.0, 6.0);
  const WorldConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    SCOPED_TRACE(trial);
    World w1 = World::create(cfg, traffic(1.0), trial);
    World w2 = World::create(cfg, traffic(1.0), trial);
    while (!w1.done()) {
      const Control c{a(rng), vd(rng)};
      std::vector<double> s_before;
      std::vector<double> v_before;
      for (const VehicleState& v : w1.vehicles()) {
        s_before.push_back(v.s);
        v_before.push_back(v.v_s);
      }
      const StepResult r1 = w1.step(c);
      const StepResult r2 = w2.step(c);
      ASSERT_TRUE(w1 == w2);
      ASSERT_EQ(r1.reward.total, r2.reward.total);
      EXPECT_TRUE(r1.observation.finite());
      EXPECT_EQ(r1.done, r1.collision || r1.step_index >= cfg.episode_max_steps);
      for (std::size_t i = 0; i < w1.vehicles().size(); ++i) {
        const VehicleState& v = w1.vehicles()[i];
        EXPECT_EQ(v.s, s_before[i] + v_before[i] * cfg.dt);
        EXPECT_GE(v.v_s, 0.0);
        EXPECT_LE(v.v_s, cfg.limits.v_cap);
        EXPECT_LE(std::abs(v.a_s), cfg.limits.a_max + 1e-12);
        EXPECT_LE(std::abs(v.v_d), cfg.limits.v_d_max + 1e-12);
        EXPECT_LE(std::abs(v.d), cfg.road.lateral_bound());
      }
    }
  }
}

TEST(Trace, RowsPerVehicle) {
  const World w = World::create({}, traffic(0.0), 1);
  std::ostringstream out;
  write_trace_header(out);
  append_trace(out, 0.5, w.vehicles());
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,id,role,s,d,v_s,a_s");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("0.5,0,ego,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("0.5,1,env_agent,", 0), 0u);
}

TEST(AgentEnv, ResetIsSeededAndBookkeeps) {
  ScenarioConfig sc;
  AgentEnv env(sc);
  const Observation o1 = env.reset(77);
  const World first = env.world();
  const Observation o2 = env.reset(77);
  EXPECT_TRUE(env.world() == first);
  EXPECT_EQ(o1.delta_s, o2.delta_s);
  double ret = 0.0;
  double gap = footprint_gap(env.world().ego(), env.world().env_agent());
  while (!env.done()) {
    const StepResult r = env.step_unit(0.3, 0.2);
    ret += r.reward.total;
    gap = std::min(gap, footprint_gap(env.world().ego(), env.world().env_agent()));
    EXPECT_TRUE(env.bounds().contains(env.last_action()));
  }
  EXPECT_DOUBLE_EQ(env.episode_return(), ret);
  EXPECT_DOUBLE_EQ(env.min_gap(), gap);
}

TEST(AgentEnv, DensityRandomizationIsSeeded) {
  ScenarioConfig sc;
  const TrafficParams a = sample_traffic(sc, 5), b = sample_traffic(sc, 5);
  EXPECT_EQ(a.density, b.density);
  EXPECT_GE(a.density, 0.5);
  EXPECT_LE(a.density, 2.0);
  sc.randomization.enabled = false;
  EXPECT_EQ(sample_traffic(sc, 5).density, sc.traffic.density);
}
