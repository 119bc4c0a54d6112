#include "advdiff/cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "advdiff/cli/config.hpp"
#include "advdiff/cli/live_server.hpp"
#include "advdiff/difficulty_model.hpp"
#include "advdiff/error.hpp"
#include "advdiff/nn/checkpoint.hpp"
#include "advdiff/policy_group.hpp"
#include "advdiff/scenario_dataset.hpp"

namespace advdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Config file (falls back to $ADVDIFF_CONFIG)");
  sub->add_option("--seed", c.seed, "Random seed (overrides general.seed)");
}

ToolkitConfig resolve(const Common& c, const std::string& command) {
  const auto path = resolve_config_path(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config));
  ToolkitConfig cfg = path ? load_config(*path) : ToolkitConfig{};
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  std::cerr << "# advdiff " << command << ": resolved config"
            << (path ? " (" + path->string() + ")" : std::string(" (defaults)")) << '\n'
            << dump_config(cfg) << std::flush;
  return cfg;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_text(const fs::path& file, const std::string& text) {
  ensure_parent(file);
  std::ofstream out(file);
  if (!out) throw ArtifactError("cannot write " + file.string());
  out << text;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ArtifactError("not found: " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

ActionBounds bounds_of(const ToolkitConfig& cfg) {
  return ActionBounds::for_road(cfg.scenario.world.road, cfg.scenario.action_max_speed);
}

DifficultyModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw ArtifactError("model checkpoint not found: " + path.string());
  return DifficultyModel::from_checkpoint(nn::load_checkpoint(path));
}

// ------------------------------------------------------------------- train

int cmd_train(const Common& common, const fs::path& out) {
  const ToolkitConfig cfg = resolve(common, "train");
  sac::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.snapshot_dir = out / "snapshots";
  fs::create_directories(tc.snapshot_dir);
  write_text(out / "config.cfg", dump_config(cfg));

  const sac::TrainResult result = sac::train(tc, cfg.sac, cfg.scenario, [](const sac::EpisodeRecord& e, const sac::UpdateStats& s) {
    if (e.episode % 10 == 0)
      std::cerr << "episode " << e.episode << " step " << e.step << " return " << e.ret << " smoothed "
                << e.smoothed << " alpha " << s.alpha << '\n';
  });
  sac::write_return_curve(out / "return_curve.csv", result.episodes);
  nn::save_checkpoint(out / "final_policy.ckpt", result.final_policy);

  json snaps = json::array();
  for (const sac::SnapshotRecord& s : result.snapshots)
    snaps.push_back({{"step", s.step}, {"episode", s.episode}, {"path", fs::relative(s.path, out).generic_string()}});
  const json run{{"seed", cfg.seed},
                 {"total_steps", tc.total_steps},
                 {"episodes", result.episodes.size()},
                 {"cutoff_step", result.cutoff_step},
                 {"snapshots", std::move(snaps)}};
  write_text(out / "run.json", run.dump(2) + "\n");
  std::cout << "episodes " << result.episodes.size() << ", snapshots " << result.snapshots.size()
            << ", cutoff step " << result.cutoff_step << ", written to " << out.string() << '\n';
  return kExitOk;
}

// ------------------------------------------------------------- build-group

int cmd_build_group(const Common& common, const fs::path& run_dir, fs::path out, int episodes) {
  const ToolkitConfig cfg = resolve(common, "build-group");
  if (out.empty()) out = run_dir / "group.json";
  const json run = read_json(run_dir / "run.json");
  std::vector<long> steps;
  std::vector<fs::path> paths;
  try {
    for (const json& s : run.at("snapshots")) {
      steps.push_back(s.at("step").get<long>());
      paths.push_back(run_dir / s.at("path").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw FormatError((run_dir / "run.json").string() + ": " + e.what());
  }
  if (steps.empty()) throw ArtifactError("run has no snapshots: " + run_dir.string());

  const std::vector<sac::EpisodeRecord> records = sac::read_return_curve(run_dir / "return_curve.csv");
  std::vector<CurvePoint> curve;
  for (const sac::EpisodeRecord& r : records) curve.push_back({static_cast<double>(r.step), r.smoothed});
  const GroupSelection sel = build_group(steps, curve);

  PolicyGroup group;
  for (const GroupMember& m : sel.members)
    group.levels.push_back({m.difficulty, fs::absolute(paths[m.snapshot]), m.step, m.smoothed_return_at_step});
  write_group_manifest(out, group);
  std::cout << "best smoothed return " << sel.max_return << '\n';
  for (const GroupMember& m : sel.members)
    std::cout << "level " << m.level << ": target return " << m.target_return << ", target step " << m.target_step
              << ", snapshot step " << m.step << '\n';

  const int n = episodes > 0 ? episodes : cfg.group_eval_episodes;
  std::vector<sac::GaussianPolicy> policies = load_group_policies(group);
  const std::vector<LevelMetrics> metrics = evaluate_group(policies, n, cfg.scenario, cfg.seed);
  std::ostringstream csv;
  csv << "level,difficulty,mean_return,collision_rate,mean_min_gap\n";
  std::vector<double> levels, rates;
  for (const LevelMetrics& m : metrics) {
    csv << m.level << ',' << level_difficulty(m.level) << ',' << m.mean_return << ',' << m.collision_rate << ','
        << m.mean_min_gap << '\n';
    std::cout << "level " << m.level << ": mean return " << m.mean_return << ", collision rate "
              << m.collision_rate << ", mean min gap " << m.mean_min_gap << '\n';
    levels.push_back(m.level);
    rates.push_back(m.collision_rate);
  }
  write_text(out.parent_path() / "group_eval.csv", csv.str());
  std::cout << "spearman(level, collision rate) " << spearman(levels, rates) << "\nmanifest " << out.string()
            << '\n';
  return kExitOk;
}

// ------------------------------------------------------------- gen-dataset

int cmd_gen_dataset(const Common& common, const fs::path& group_path, const fs::path& out) {
  const ToolkitConfig cfg = resolve(common, "gen-dataset");
  std::vector<sac::GaussianPolicy> policies = load_group_policies(read_group_manifest(group_path));
  GenerateConfig g = cfg.dataset;
  g.seed = cfg.seed;
  g.policy_group = group_path.string();
  const Dataset ds = generate_dataset(policies, cfg.scenario, g);
  ensure_parent(out);
  write_dataset(out, ds);
  for (std::size_t i = 0; i < ds.manifest.labels.size(); ++i) {
    std::cout << "label " << ds.manifest.labels[i] << ": " << ds.manifest.class_counts[i] << " samples from "
              << ds.manifest.episodes_used[i] << " episodes";
    if (ds.manifest.shortfall[i]) std::cout << " (short of " << g.n_sc << ")";
    std::cout << '\n';
  }
  std::cout << "dataset " << out.string() << '\n';
  return kExitOk;
}

// ------------------------------------------------------------- train-model

int cmd_train_model(const Common& common, const fs::path& data, const fs::path& out, fs::path log) {
  const ToolkitConfig cfg = resolve(common, "train-model");
  const Dataset ds = read_dataset(data);
  if (ds.samples.empty()) throw ArtifactError("dataset is empty: " + data.string());
  DifficultyModel model(cfg.model, cfg.seed);
  ModelTrainConfig tc = cfg.model_train;
  tc.seed = cfg.seed;
  const ActionBounds bounds = bounds_of(cfg);
  const double initial = evaluate_mse(model, ds.samples, bounds);
  const ModelTrainResult r = train_model(model, ds.samples, bounds, tc, [&](long epoch, double loss, double hold) {
    if (epoch % 50 == 0 || epoch == tc.epochs)
      std::cerr << "epoch " << epoch << " loss " << loss << " holdout " << hold << '\n';
  });
  const double final_mse = evaluate_mse(model, ds.samples, bounds);

  ensure_parent(out);
  nn::save_checkpoint(out, model.to_checkpoint({{"seed", std::to_string(cfg.seed)}, {"dataset", data.string()}}));
  if (log.empty()) log = fs::path(out.string() + ".loss.csv");
  std::ostringstream csv;
  csv << std::setprecision(17) << "epoch,loss,holdout_loss\n";
  for (std::size_t i = 0; i < r.loss.size(); ++i) csv << i + 1 << ',' << r.loss[i] << ',' << r.holdout_loss[i] << '\n';
  write_text(log, csv.str());
  std::cout << "dataset MSE " << initial << " -> " << final_mse << ", best held-out epoch " << r.best_epoch
            << "\nmodel " << out.string() << '\n';
  return kExitOk;
}

// --------------------------------------------------------------------- run

// Piecewise-linear difficulty over time from "t,x_scd" rows.
DifficultySchedule read_schedule(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("schedule not found: " + path.string());
  std::string line;
  long n = 0;
  std::vector<std::pair<double, double>> knots;
  const auto number = [&](const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
      throw FormatError(path.string() + ": invalid number '" + s + "'", n);
    return v;
  };
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1) {
      if (line != "t,x_scd") throw FormatError(path.string() + ": expected header t,x_scd", n);
      continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw FormatError(path.string() + ": expected two fields", n);
    const double t = number(line.substr(0, comma));
    if (!knots.empty() && t <= knots.back().first) throw FormatError(path.string() + ": times must increase", n);
    knots.emplace_back(t, number(line.substr(comma + 1)));
  }
  if (knots.empty()) throw FormatError(path.string() + ": schedule has no rows");
  return [knots](double t) {
    if (t <= knots.front().first) return knots.front().second;
    if (t >= knots.back().first) return knots.back().second;
    const auto hi = std::upper_bound(knots.begin(), knots.end(), t,
                                     [](double v, const std::pair<double, double>& k) { return v < k.first; });
    const auto lo = hi - 1;
    const double w = (t - lo->first) / (hi->first - lo->first);
    return lo->second + w * (hi->second - lo->second);
  };
}

int cmd_run(const Common& common, const fs::path& model_path, std::optional<double> difficulty,
            const fs::path& schedule_path, int episodes, const fs::path& out) {
  const ToolkitConfig cfg = resolve(common, "run");
  DifficultyModel model = load_model(model_path);
  DifficultySchedule schedule;
  if (!schedule_path.empty()) {
    schedule = read_schedule(schedule_path);
  } else {
    const double x = difficulty.value_or(0.5);
    schedule = [x](double) { return x; };
  }
  if (episodes < 1) throw ConfigError("run: --episodes must be >= 1");
  fs::create_directories(out);
  for (int e = 0; e < episodes; ++e) {
    const DeployResult r = deploy(model, cfg.scenario, schedule, mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    std::ofstream trace(out / ("trace_" + std::to_string(e) + ".csv"));
    std::ofstream steps(out / ("steps_" + std::to_string(e) + ".csv"));
    if (!trace || !steps) throw ArtifactError("cannot write traces into " + out.string());
    write_deploy_trace(trace, r);
    write_deploy_steps(steps, r);
    std::cout << "episode " << e << ": steps " << r.steps.size() << ", return " << r.episode_return
              << ", min gap " << r.min_gap << ", ego hit " << (r.ego_hit ? "yes" : "no") << '\n';
  }
  return kExitOk;
}

// ------------------------------------------------------------------- serve

struct ServeArgs {
  std::string model;
  std::optional<int> port;
  std::string static_dir;
  std::string address = "0.0.0.0";
  double difficulty = 0.5;
  long frames = 0;
};

int cmd_serve(const Common& common, const ServeArgs& a) {
  const ToolkitConfig cfg = resolve(common, "serve");
  DifficultyModel model = load_model(a.model);
  LiveOptions o;
  o.address = a.address;
  o.port = a.port.value_or(cfg.serve.port);
  o.frame_rate = cfg.serve.frame_rate;
  o.static_dir = a.static_dir.empty() ? cfg.serve.static_dir : fs::path(a.static_dir);
  o.max_client_queue = cfg.serve.max_client_queue;
  o.seed = cfg.seed;
  o.initial_difficulty = a.difficulty;
  o.max_frames = a.frames;
  o.handle_signals = true;
  LiveServer server(model, cfg.scenario, o);
  server.start();
  std::cerr << "serve: listening on " << o.address << ':' << server.port() << " (stream at /stream, UI from "
            << o.static_dir.string() << ")\n";
  if (!fs::exists(o.static_dir / "index.html"))
    std::cerr << "serve: warning: no index.html in " << o.static_dir.string() << "; only /stream is available\n";
  server.run();
  std::cerr << "serve: stopped after " << server.frames() << " frames\n";
  return kExitOk;
}

// ------------------------------------------------------------------- stats

int cmd_stats(const Common& common, const fs::path& data) {
  resolve(common, "stats");
  const Dataset ds = read_dataset(data);
  const char* names[] = {"delta_s", "delta_d", "delta_v_s", "v_s", "a_s", "action_d_fn", "action_sf_dot"};
  std::cout << "samples " << ds.samples.size() << ", seed " << ds.manifest.seed << ", policy group "
            << (ds.manifest.policy_group.empty() ? "-" : ds.manifest.policy_group) << '\n';
  if (ds.samples.empty()) return kExitOk;
  std::cout << "label,count";
  for (const char* n : names) std::cout << ',' << n << "_mean," << n << "_std";
  std::cout << '\n';
  for (const ClassStats& c : class_stats(ds.samples)) {
    std::cout << c.label << ',' << c.count;
    for (const FieldStats& f : c.fields) std::cout << ',' << f.mean << ',' << f.std;
    std::cout << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Difficulty-controllable adversarial scenario toolkit", "advdiff"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  fs::path out, run_dir, group, data, model, schedule, log;
  int episodes = 0;
  double difficulty = 0.0;
  ServeArgs serve;

  CLI::App* train = app.add_subcommand("train", "Train the environment agent and store snapshots");
  add_common(train, common);
  train->add_option("--out", out, "Output directory")->default_str("run");

  CLI::App* build = app.add_subcommand("build-group", "Select the five-level policy group and evaluate it");
  add_common(build, common);
  build->add_option("--run", run_dir, "Training output directory")->required();
  build->add_option("--out", out, "Manifest path (default <run>/group.json)");
  build->add_option("--episodes", episodes, "Evaluation episodes per level (default group.eval_episodes)");

  CLI::App* gen = app.add_subcommand("gen-dataset", "Collect difficulty-labeled samples from a policy group");
  add_common(gen, common);
  gen->add_option("--group", group, "Policy group manifest")->required();
  gen->add_option("--out", out, "Dataset CSV")->default_str("dataset.csv");

  CLI::App* tm = app.add_subcommand("train-model", "Fit the difficulty model to a dataset");
  add_common(tm, common);
  tm->add_option("--data", data, "Dataset CSV")->required();
  tm->add_option("--out", out, "Model checkpoint")->default_str("model.ckpt");
  tm->add_option("--log", log, "Loss log CSV (default <out>.loss.csv)");

  CLI::App* run = app.add_subcommand("run", "Deploy the model for whole episodes and write traces");
  add_common(run, common);
  run->add_option("--model", model, "Model checkpoint")->required();
  CLI::Option* diff_opt = run->add_option("--difficulty", difficulty, "Constant difficulty in [0, 1]");
  run->add_option("--schedule", schedule, "CSV of t,x_scd knots (piecewise linear)")->excludes(diff_opt);
  run->add_option("--episodes", episodes, "Episodes")->default_val(1);
  run->add_option("--out", out, "Trace directory")->default_str("deploy");

  CLI::App* srv = app.add_subcommand("serve", "Stream a live deployment steered over WebSocket");
  add_common(srv, common);
  srv->add_option("--model", serve.model, "Model checkpoint")->required();
  srv->add_option("--port", serve.port, "Port (default serve.port; 0 picks a free one)");
  srv->add_option("--address", serve.address, "Listen address")->default_val("0.0.0.0");
  srv->add_option("--static", serve.static_dir, "UI directory served at / (default serve.static_dir)");
  srv->add_option("--difficulty", serve.difficulty, "Initial difficulty")->default_val(0.5);
  srv->add_option("--frames", serve.frames, "Stop after this many frames (0 = run until interrupted)");

  CLI::App* stats = app.add_subcommand("stats", "Per-class summary of a dataset");
  add_common(stats, common);
  stats->add_option("--data", data, "Dataset CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(common, out.empty() ? fs::path("run") : out);
    if (*build) return cmd_build_group(common, run_dir, out, episodes);
    if (*gen) return cmd_gen_dataset(common, group, out.empty() ? fs::path("dataset.csv") : out);
    if (*tm) return cmd_train_model(common, data, out.empty() ? fs::path("model.ckpt") : out, log);
    if (*run)
      return cmd_run(common, model, diff_opt->count() ? std::optional<double>(difficulty) : std::nullopt, schedule,
                     episodes, out.empty() ? fs::path("deploy") : out);
    if (*srv) return cmd_serve(common, serve);
    if (*stats) return cmd_stats(common, data);
  } catch (const ConfigError& e) {
    std::cerr << "advdiff: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ArtifactError& e) {
    std::cerr << "advdiff: missing artifact: " << e.what() << '\n';
    return kExitArtifact;
  } catch (const FormatError& e) {
    std::cerr << "advdiff: format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const NumericError& e) {
    std::cerr << "advdiff: numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NetworkError& e) {
    std::cerr << "advdiff: " << e.what() << '\n';
    return kExitNetwork;
  } catch (const std::exception& e) {
    std::cerr << "advdiff: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace advdiff::cli
