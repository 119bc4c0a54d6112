#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "advdiff/error.hpp"
#include "advdiff/policy_group.hpp"
#include "advdiff/scenario_dataset.hpp"

using namespace advdiff;

namespace {

std::vector<sac::GaussianPolicy> random_group(std::uint64_t seed) {
  nn::Rng rng(seed);
  std::vector<sac::GaussianPolicy> g;
  for (int i = 0; i < kGroupLevels; ++i) g.emplace_back(5, 2, std::vector<Eigen::Index>{8}, rng);
  return g;
}

ScenarioConfig short_episodes() {
  ScenarioConfig sc;
  sc.world.episode_max_steps = 40;
  return sc;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class DatasetFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("advdiff_ds_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

}  // namespace

TEST(Dataset, LabelsAndCapSemantics) {
  auto group = random_group(1);
  GenerateConfig cfg;
  cfg.n_sc = 100;
  cfg.n_episode = 1000;
  cfg.seed = 3;
  const Dataset ds = generate_dataset(group, short_episodes(), cfg);
  std::set<double> labels;
  for (const ScenarioSample& s : ds.samples) labels.insert(s.x_scd);
  EXPECT_EQ(labels, (std::set<double>{0.2, 0.4, 0.6, 0.8, 1.0}));
  ASSERT_EQ(ds.manifest.class_counts.size(), 5u);
  for (long c : ds.manifest.class_counts) {
    EXPECT_GE(c, 100);
    EXPECT_LT(c, 100 + 40);
  }
  EXPECT_TRUE(ds.manifest.complete());
  // Classes are generated level by level, so labels never decrease.
  for (std::size_t i = 1; i < ds.samples.size(); ++i) EXPECT_LE(ds.samples[i - 1].x_scd, ds.samples[i].x_scd);
  const ActionBounds b = ActionBounds::for_road(RoadModel{});
  for (const ScenarioSample& s : ds.samples) {
    EXPECT_TRUE(s.state.finite());
    EXPECT_TRUE(b.contains(s.action));
  }
}

TEST(Dataset, ShortfallIsFlagged) {
  auto group = random_group(2);
  GenerateConfig cfg;
  cfg.n_sc = 100000;
  cfg.n_episode = 2;
  const Dataset ds = generate_dataset(group, short_episodes(), cfg);
  EXPECT_FALSE(ds.manifest.complete());
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_TRUE(ds.manifest.shortfall[i]);
    EXPECT_EQ(ds.manifest.episodes_used[i], 2);
    EXPECT_LE(ds.manifest.class_counts[i], 80);
  }
}

TEST(Dataset, RejectsBadConfig) {
  auto group = random_group(2);
  GenerateConfig cfg;
  cfg.n_sc = 0;
  EXPECT_THROW(generate_dataset(group, short_episodes(), cfg), ConfigError);
  std::vector<sac::GaussianPolicy> none;
  EXPECT_THROW(generate_dataset(none, short_episodes(), GenerateConfig{}), ConfigError);
}

TEST_F(DatasetFiles, RegenerationIsByteIdentical) {
  GenerateConfig cfg;
  cfg.n_sc = 60;
  cfg.seed = 11;
  cfg.policy_group = "group.json";
  auto g1 = random_group(4);
  auto g2 = random_group(4);
  write_dataset(dir_ / "a.csv", generate_dataset(g1, short_episodes(), cfg));
  write_dataset(dir_ / "b.csv", generate_dataset(g2, short_episodes(), cfg));
  EXPECT_EQ(slurp(dir_ / "a.csv"), slurp(dir_ / "b.csv"));
  EXPECT_EQ(slurp(manifest_path(dir_ / "a.csv")), slurp(manifest_path(dir_ / "b.csv")));
  cfg.seed = 12;
  write_dataset(dir_ / "c.csv", generate_dataset(g1, short_episodes(), cfg));
  EXPECT_NE(slurp(dir_ / "a.csv"), slurp(dir_ / "c.csv"));
}

TEST_F(DatasetFiles, RoundTripIsValueExact) {
  GenerateConfig cfg;
  cfg.n_sc = 50;
  cfg.seed = 5;
  cfg.policy_group = "somewhere/group.json";
  auto group = random_group(5);
  const Dataset ds = generate_dataset(group, short_episodes(), cfg);
  write_dataset(dir_ / "d.csv", ds);
  const Dataset back = read_dataset(dir_ / "d.csv");
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const ScenarioSample &a = ds.samples[i], &b = back.samples[i];
    EXPECT_EQ(a.x_scd, b.x_scd);
    EXPECT_EQ(a.state.to_array(), b.state.to_array());
    EXPECT_EQ(a.action.d_fn, b.action.d_fn);
    EXPECT_EQ(a.action.sf_dot, b.action.sf_dot);
  }
  EXPECT_EQ(back.manifest.class_counts, ds.manifest.class_counts);
  EXPECT_EQ(back.manifest.labels, ds.manifest.labels);
  EXPECT_EQ(back.manifest.seed, 5u);
  EXPECT_EQ(back.manifest.policy_group, "somewhere/group.json");
}

TEST_F(DatasetFiles, EmptyDatasetIsHeaderOnly) {
  write_dataset(dir_ / "e.csv", Dataset{});
  EXPECT_EQ(slurp(dir_ / "e.csv"), std::string(kDatasetHeader) + "\n");
  EXPECT_TRUE(read_dataset(dir_ / "e.csv").samples.empty());
}

TEST_F(DatasetFiles, MalformedRowsNameTheLine) {
  {
    std::ofstream out(dir_ / "bad.csv");
    out << kDatasetHeader << "\n0.2,1,2,3,4,5,6,7\n0.2,1,2,3,4,5,6\n";
  }
  try {
    read_dataset(dir_ / "bad.csv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  {
    std::ofstream out(dir_ / "nan.csv");
    out << kDatasetHeader << "\n0.2,1,2,x,4,5,6,7\n";
  }
  EXPECT_THROW(read_dataset(dir_ / "nan.csv"), FormatError);
  {
    std::ofstream out(dir_ / "hdr.csv");
    out << "x,y\n";
  }
  EXPECT_THROW(read_dataset(dir_ / "hdr.csv"), FormatError);
  EXPECT_THROW(read_dataset(dir_ / "missing.csv"), ArtifactError);
}

TEST_F(DatasetFiles, VersionMismatchRejected) {
  write_dataset(dir_ / "v.csv", Dataset{});
  std::string m = slurp(manifest_path(dir_ / "v.csv"));
  const auto pos = m.find("\"version\": 1");
  ASSERT_NE(pos, std::string::npos);
  m.replace(pos, 12, "\"version\": 9");
  std::ofstream(manifest_path(dir_ / "v.csv")) << m;
  EXPECT_THROW(read_dataset(dir_ / "v.csv"), FormatError);
}

TEST(ClassStats, MatchesDirectComputation) {
  std::vector<ScenarioSample> s{{0.4, {1, 2, 3, 4, 5}, {1, 10}},
                                {0.2, {2, 0, 0, 0, 0}, {0, 0}},
                                {0.4, {3, 2, 3, 4, 5}, {-1, 12}},
                                {0.4, {8, 2, 3, 4, 5}, {0, 14}}};
  const std::vector<ClassStats> c = class_stats(s);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].label, 0.2);
  EXPECT_EQ(c[0].count, 1);
  for (const FieldStats& f : c[0].fields) EXPECT_EQ(f.std, 0.0);
  EXPECT_EQ(c[1].count, 3);
  EXPECT_DOUBLE_EQ(c[1].fields[0].mean, 4.0);
  EXPECT_DOUBLE_EQ(c[1].fields[0].std, std::sqrt((9.0 + 1.0 + 16.0) / 3.0));
  EXPECT_DOUBLE_EQ(c[1].fields[6].mean, 12.0);
  EXPECT_DOUBLE_EQ(c[1].fields[6].std, std::sqrt(8.0 / 3.0));
  EXPECT_THROW(class_stats(std::vector<ScenarioSample>{}), ConfigError);
}
