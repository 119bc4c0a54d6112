#include "advdiff/policy_group.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "advdiff/error.hpp"

namespace advdiff {

namespace {

constexpr int kManifestVersion = 1;

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double level_difficulty(int level) { return level / static_cast<double>(kGroupLevels); }

std::size_t nearest_snapshot(std::span<const long> steps, double target) {
  if (steps.empty()) throw ConfigError("policy group: no snapshots to choose from");
  std::size_t best = 0;
  for (std::size_t j = 1; j < steps.size(); ++j) {
    const double dj = std::abs(target - static_cast<double>(steps[j]));
    const double db = std::abs(target - static_cast<double>(steps[best]));
    if (dj < db || (dj == db && steps[j] < steps[best])) best = j;
  }
  return best;
}

double curve_value_at(std::span<const CurvePoint> c, double step) {
  if (c.empty()) throw ConfigError("curve_value_at: empty curve");
  if (step <= c.front().step) return c.front().value;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (step <= c[i].step) {
      const double w = (step - c[i - 1].step) / (c[i].step - c[i - 1].step);
      return c[i - 1].value + w * (c[i].value - c[i - 1].value);
    }
  }
  return c.back().value;
}

GroupSelection build_group(std::span<const long> snapshot_steps, std::span<const CurvePoint> smoothed) {
  if (snapshot_steps.empty()) throw ConfigError("policy group: no snapshots to choose from");
  if (smoothed.empty()) throw ConfigError("policy group: empty return curve");
  GroupSelection g;
  g.monotone_curve = isotonic_curve(smoothed);
  g.max_return = g.monotone_curve.back().value;
  for (int i = 1; i <= kGroupLevels; ++i) {
    GroupMember m;
    m.level = i;
    m.difficulty = level_difficulty(i);
    m.target_return = m.difficulty * g.max_return;
    m.target_step = gamma_inverse(g.monotone_curve, m.target_return);
    m.snapshot = nearest_snapshot(snapshot_steps, m.target_step);
    m.step = snapshot_steps[m.snapshot];
    m.smoothed_return_at_step = curve_value_at(g.monotone_curve, static_cast<double>(m.step));
    g.members.push_back(m);
  }
  return g;
}

void write_group_manifest(const std::filesystem::path& path, const PolicyGroup& group) {
  const std::filesystem::path base = path.parent_path().empty() ? "." : path.parent_path();
  nlohmann::json levels = nlohmann::json::array();
  for (const PolicyGroupEntry& e : group.levels) {
    const std::filesystem::path abs = std::filesystem::absolute(e.checkpoint_path).lexically_normal();
    std::filesystem::path p = abs.lexically_relative(std::filesystem::absolute(base).lexically_normal());
    if (p.empty()) p = abs;
    levels.push_back({{"difficulty_label", e.difficulty_label},
                      {"checkpoint_path", p.generic_string()},
                      {"step", e.step},
                      {"smoothed_return_at_step", e.smoothed_return_at_step}});
  }
  const nlohmann::json doc{{"version", kManifestVersion}, {"levels", levels}};
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write policy group manifest " + path.string());
  out << doc.dump(2) << '\n';
}

PolicyGroup read_group_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("policy group manifest not found: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
    if (doc.at("version").get<int>() != kManifestVersion)
      throw FormatError("unsupported policy group manifest version");
    PolicyGroup g;
    for (const nlohmann::json& l : doc.at("levels")) {
      PolicyGroupEntry e;
      e.difficulty_label = l.at("difficulty_label").get<double>();
      e.checkpoint_path = l.at("checkpoint_path").get<std::string>();
      if (e.checkpoint_path.is_relative()) e.checkpoint_path = path.parent_path() / e.checkpoint_path;
      e.step = l.at("step").get<long>();
      e.smoothed_return_at_step = l.at("smoothed_return_at_step").get<double>();
      g.levels.push_back(std::move(e));
    }
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
}

std::vector<sac::GaussianPolicy> load_group_policies(const PolicyGroup& group) {
  std::vector<sac::GaussianPolicy> out;
  for (const PolicyGroupEntry& e : group.levels)
    out.push_back(sac::GaussianPolicy::from_checkpoint(nn::load_checkpoint(e.checkpoint_path)));
  return out;
}

std::vector<LevelMetrics> evaluate_group(std::span<sac::GaussianPolicy> policies, int episodes,
                                         const ScenarioConfig& scenario, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate_group: episodes must be >= 1");
  if (policies.empty()) throw ConfigError("evaluate_group: empty policy group");
  std::vector<LevelMetrics> out;
  AgentEnv env(scenario);
  for (std::size_t i = 0; i < policies.size(); ++i) {
    LevelMetrics m;
    m.level = static_cast<int>(i) + 1;
    for (int e = 0; e < episodes; ++e) {
      Observation obs = env.reset(mix_seed(seed, static_cast<std::uint64_t>(e)));
      while (!env.done()) {
        const sac::Matrix a = policies[i].deterministic(sac::policy_input(obs));
        obs = env.step_unit(a(0, 0), a(0, 1)).observation;
      }
      m.mean_return += env.episode_return();
      m.collision_rate += env.ego_hit() ? 1.0 : 0.0;
      m.mean_min_gap += env.min_gap();
    }
    m.mean_return /= episodes;
    m.collision_rate /= episodes;
    m.mean_min_gap /= episodes;
    out.push_back(m);
  }
  return out;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: inputs differ in length");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace advdiff
