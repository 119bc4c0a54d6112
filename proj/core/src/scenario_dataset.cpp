#include "advdiff/scenario_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "advdiff/error.hpp"
#include "advdiff/policy_group.hpp"
#include "io_util.hpp"

namespace advdiff {

bool DatasetManifest::complete() const {
  return std::none_of(shortfall.begin(), shortfall.end(), [](bool b) { return b; });
}

Dataset generate_dataset(std::span<sac::GaussianPolicy> policies, const ScenarioConfig& scenario,
                         const GenerateConfig& config) {
  if (policies.empty()) throw ConfigError("dataset: empty policy group");
  if (config.n_sc < 1 || config.n_episode < 1) throw ConfigError("dataset: n_sc and n_episode must be >= 1");
  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.n_sc = config.n_sc;
  m.n_episode = config.n_episode;
  m.seed = config.seed;
  m.policy_group = config.policy_group;

  AgentEnv env(scenario);
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const double label = level_difficulty(static_cast<int>(i) + 1);
    sac::Rng rng(mix_seed(config.seed, 7000 + i));
    long count = 0;
    long episode = 0;
    for (; episode < config.n_episode && count < config.n_sc; ++episode) {
      Observation obs = env.reset(mix_seed(mix_seed(config.seed, i), static_cast<std::uint64_t>(episode)));
      while (!env.done()) {
        const sac::Matrix x = sac::policy_input(obs);
        const sac::Matrix a =
            config.stochastic ? policies[i].sample(x, rng).action : policies[i].deterministic(x);
        const StepResult r = env.step_unit(a(0, 0), a(0, 1));
        ds.samples.push_back({label, obs, env.last_action()});
        ++count;
        obs = r.observation;
      }
    }
    m.labels.push_back(label);
    m.class_counts.push_back(count);
    m.episodes_used.push_back(episode);
    m.shortfall.push_back(count < config.n_sc);
  }
  return ds;
}

std::filesystem::path manifest_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".manifest.json");
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArtifactError("cannot write dataset " + path.string());
    out << kDatasetHeader << '\n';
    for (const ScenarioSample& s : ds.samples) {
      const double v[8] = {s.x_scd,     s.state.delta_s, s.state.delta_d,  s.state.delta_v_s,
                           s.state.v_s, s.state.a_s,     s.action.d_fn,    s.action.sf_dot};
      for (int j = 0; j < 8; ++j) out << (j ? "," : "") << io::format_double(v[j]);
      out << '\n';
    }
  }
  const DatasetManifest& m = ds.manifest;
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t i = 0; i < m.class_counts.size(); ++i)
    classes.push_back({{"label", m.labels[i]},
                       {"count", m.class_counts[i]},
                       {"episodes", m.episodes_used[i]},
                       {"shortfall", static_cast<bool>(m.shortfall[i])}});
  const nlohmann::json doc{{"version", m.version},   {"n_sc", m.n_sc},
                           {"n_episode", m.n_episode}, {"seed", m.seed},
                           {"policy_group", m.policy_group}, {"classes", classes}};
  std::ofstream out(manifest_path(path), std::ios::binary);
  if (!out) throw ArtifactError("cannot write dataset manifest for " + path.string());
  out << doc.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("dataset not found: " + path.string());
  Dataset ds;
  std::string line;
  if (!std::getline(in, line) || io::trim_cr(line) != kDatasetHeader)
    throw FormatError("dataset header mismatch, expected '" + std::string(kDatasetHeader) + "'", 1);
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = io::trim_cr(line);
    if (row.empty()) continue;
    const auto f = io::split(row, ',');
    if (f.size() != 8)
      throw FormatError("expected 8 fields, found " + std::to_string(f.size()), line_no);
    double v[8];
    for (int j = 0; j < 8; ++j) v[j] = io::parse_double(f[j], line_no);
    ds.samples.push_back({v[0], {v[1], v[2], v[3], v[4], v[5]}, {v[6], v[7]}});
  }

  const std::filesystem::path mp = manifest_path(path);
  if (!std::filesystem::exists(mp)) return ds;
  std::ifstream min(mp);
  try {
    const nlohmann::json doc = nlohmann::json::parse(min);
    DatasetManifest& m = ds.manifest;
    m.version = doc.at("version").get<int>();
    if (m.version != kDatasetVersion)
      throw FormatError("unsupported dataset version " + std::to_string(m.version));
    m.n_sc = doc.at("n_sc").get<long>();
    m.n_episode = doc.at("n_episode").get<long>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.policy_group = doc.at("policy_group").get<std::string>();
    for (const nlohmann::json& c : doc.at("classes")) {
      m.labels.push_back(c.at("label").get<double>());
      m.class_counts.push_back(c.at("count").get<long>());
      m.episodes_used.push_back(c.at("episodes").get<long>());
      m.shortfall.push_back(c.at("shortfall").get<bool>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(mp.string() + ": " + ex.what());
  }
  return ds;
}

std::vector<ClassStats> class_stats(std::span<const ScenarioSample> samples) {
  if (samples.empty()) throw ConfigError("class_stats: empty dataset");
  struct Acc {
    long n = 0;
    std::array<double, 7> sum{};
    std::array<double, 7> sq{};
  };
  std::map<double, Acc> by_label;
  for (const ScenarioSample& s : samples) {
    const std::array<double, 7> v{s.state.delta_s, s.state.delta_d, s.state.delta_v_s, s.state.v_s,
                                  s.state.a_s,     s.action.d_fn,   s.action.sf_dot};
    Acc& a = by_label[s.x_scd];
    ++a.n;
    for (int j = 0; j < 7; ++j) a.sum[j] += v[j];
  }
  for (const ScenarioSample& s : samples) {
    const std::array<double, 7> v{s.state.delta_s, s.state.delta_d, s.state.delta_v_s, s.state.v_s,
                                  s.state.a_s,     s.action.d_fn,   s.action.sf_dot};
    Acc& a = by_label[s.x_scd];
    for (int j = 0; j < 7; ++j) {
      const double d = v[j] - a.sum[j] / a.n;
      a.sq[j] += d * d;
    }
  }
  std::vector<ClassStats> out;
  for (const auto& [label, a] : by_label) {
    ClassStats c;
    c.label = label;
    c.count = a.n;
    for (int j = 0; j < 7; ++j) c.fields[j] = {a.sum[j] / a.n, std::sqrt(a.sq[j] / a.n)};
    out.push_back(c);
  }
  return out;
}

}  // namespace advdiff
