#include "advdiff/cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>
#include <vector>

#include "advdiff/error.hpp"

namespace advdiff::cli {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& text, const std::string& name) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError("config: invalid value '" + text + "' for " + name);
  return v;
}

bool parse_bool(const std::string& text, const std::string& name) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: invalid boolean '" + text + "' for " + name);
}

class FieldTable {
 public:
  template <class T>
  void number(const std::string& section, const std::string& key, T& ref) {
    const std::string name = section + "." + key;
    fields_.push_back({section, key, [&ref, name](const std::string& s) { ref = parse_number<T>(s, name); },
                       [&ref] {
                         if constexpr (std::is_floating_point_v<T>) return format_number(ref);
                         else return std::to_string(ref);
                       }});
  }

  void flag(const std::string& section, const std::string& key, bool& ref) {
    const std::string name = section + "." + key;
    fields_.push_back({section, key, [&ref, name](const std::string& s) { ref = parse_bool(s, name); },
                       [&ref] { return std::string(ref ? "true" : "false"); }});
  }

  void path(const std::string& section, const std::string& key, std::filesystem::path& ref) {
    fields_.push_back({section, key, [&ref](const std::string& s) { ref = s; }, [&ref] { return ref.string(); }});
  }

  void widths(const std::string& section, const std::string& key, std::vector<Eigen::Index>& ref) {
    const std::string name = section + "." + key;
    fields_.push_back({section, key,
                       [&ref, name](const std::string& s) {
                         std::vector<Eigen::Index> out;
                         std::stringstream in(s);
                         std::string item;
                         while (std::getline(in, item, ',')) {
                           const auto b = item.find_first_not_of(' ');
                           const auto e = item.find_last_not_of(' ');
                           if (b == std::string::npos) throw ConfigError("config: empty width in " + name);
                           out.push_back(parse_number<Eigen::Index>(item.substr(b, e - b + 1), name));
                         }
                         if (out.empty()) throw ConfigError("config: " + name + " needs at least one width");
                         ref = std::move(out);
                       },
                       [&ref] {
                         std::string s;
                         for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + std::to_string(ref[i]);
                         return s;
                       }});
  }

  void optional_step(const std::string& section, const std::string& key, std::optional<long>& ref) {
    const std::string name = section + "." + key;
    fields_.push_back({section, key,
                       [&ref, name](const std::string& s) {
                         if (s == "auto") ref.reset();
                         else ref = parse_number<long>(s, name);
                       },
                       [&ref] { return ref ? std::to_string(*ref) : std::string("auto"); }});
  }

  const Field* find(const std::string& section, const std::string& key) const {
    for (const Field& f : fields_)
      if (f.section == section && f.key == key) return &f;
    return nullptr;
  }

  const std::vector<Field>& fields() const { return fields_; }

 private:
  std::vector<Field> fields_;
};

FieldTable bind(ToolkitConfig& c) {
  FieldTable t;
  t.number("general", "seed", c.seed);
  t.flag("general", "desk_scale", c.desk_scale);

  RewardParams& r = c.scenario.world.reward;
  t.number("reward", "r_min", r.r_min);
  t.number("reward", "r_max", r.r_max);
  t.number("reward", "delta1", r.delta1);
  t.number("reward", "delta2", r.delta2);
  t.number("reward", "k_f", r.k_f);
  t.number("reward", "vehicle_width", r.vehicle_width);
  t.number("reward", "vehicle_length", r.vehicle_length);
  t.number("reward", "rho_n", r.rho_n);
  t.number("reward", "d_thre", r.d_thre);
  t.number("reward", "s_thre", r.s_thre);
  t.number("reward", "rho_L", r.rho_L);
  t.number("reward", "rho_H", r.rho_H);
  t.number("reward", "v_min", r.v_min);
  t.number("reward", "v_max", r.v_max);
  t.number("reward", "rho_coll", r.rho_coll);
  t.flag("reward", "literal_total_sign", r.literal_total_sign);

  WorldConfig& w = c.scenario.world;
  t.number("world", "dt", w.dt);
  t.number("world", "lane_count", w.road.lane_count);
  t.number("world", "lane_width", w.road.lane_width);
  t.number("world", "road_length", w.road.road_length);
  t.number("world", "vehicle_width", w.dims.width);
  t.number("world", "vehicle_length", w.dims.length);
  t.number("world", "a_max", w.limits.a_max);
  t.number("world", "v_d_max", w.limits.v_d_max);
  t.number("world", "v_cap", w.limits.v_cap);
  t.number("world", "lane_keep_gain", w.lane_keep_gain);
  t.number("world", "ego_speed", w.ego_speed);
  t.number("world", "env_spawn_behind", w.env_spawn_behind);
  t.number("world", "episode_max_steps", w.episode_max_steps);
  t.number("world", "idm_desired_speed", w.idm.desired_speed);
  t.number("world", "idm_time_headway", w.idm.time_headway);
  t.number("world", "idm_max_accel", w.idm.max_accel);
  t.number("world", "idm_comfort_decel", w.idm.comfort_decel);
  t.number("world", "idm_min_gap", w.idm.min_gap);
  t.number("world", "idm_exponent", w.idm.exponent);

  TrafficParams& tr = c.scenario.traffic;
  t.number("traffic", "density", tr.density);
  t.number("traffic", "speed_low", tr.speed_low);
  t.number("traffic", "speed_high", tr.speed_high);
  t.number("traffic", "spawn_range", tr.spawn_range);
  t.flag("traffic", "randomize_density", c.scenario.randomization.enabled);
  t.number("traffic", "density_low", c.scenario.randomization.density_low);
  t.number("traffic", "density_high", c.scenario.randomization.density_high);

  t.number("tracker", "horizon", c.scenario.tracker_horizon);
  t.number("tracker", "kp_speed", c.scenario.gains.kp_speed);
  t.number("tracker", "kp_lateral", c.scenario.gains.kp_lateral);
  t.number("tracker", "kd_lateral", c.scenario.gains.kd_lateral);
  t.number("tracker", "action_max_speed", c.scenario.action_max_speed);

  sac::SacConfig& s = c.sac;
  t.widths("sac", "hidden", s.hidden);
  t.number("sac", "gamma", s.gamma);
  t.number("sac", "tau", s.tau);
  t.number("sac", "actor_lr", s.actor_lr);
  t.number("sac", "critic_lr", s.critic_lr);
  t.number("sac", "alpha_lr", s.alpha_lr);
  t.number("sac", "initial_alpha", s.initial_alpha);
  t.number("sac", "target_entropy", s.target_entropy);
  t.flag("sac", "auto_temperature", s.auto_temperature);
  t.number("sac", "batch_size", s.batch_size);

  sac::TrainConfig& tc = c.train;
  t.number("train", "total_steps", tc.total_steps);
  t.number("train", "warmup_steps", tc.warmup_steps);
  t.number("train", "snapshot_interval", tc.snapshot_interval);
  t.number("train", "replay_capacity", tc.replay_capacity);
  t.number("train", "smoothing_window", tc.smoothing_window);
  t.optional_step("train", "cutoff_step", tc.cutoff_step);
  t.number("train", "cutoff_fraction", tc.cutoff_fraction);

  t.number("group", "eval_episodes", c.group_eval_episodes);

  t.number("dataset", "n_sc", c.dataset.n_sc);
  t.number("dataset", "n_episode", c.dataset.n_episode);
  t.flag("dataset", "stochastic", c.dataset.stochastic);

  t.number("model", "d_model", c.model.d_model);
  t.number("model", "heads", c.model.heads);
  t.number("model", "layers", c.model.layers);
  t.number("model", "mlp_ratio", c.model.mlp_ratio);
  t.number("model", "head_width", c.model.head_width);
  t.number("model", "head_layers", c.model.head_layers);

  t.number("model_train", "batch_size", c.model_train.batch_size);
  t.number("model_train", "epochs", c.model_train.epochs);
  t.number("model_train", "learning_rate", c.model_train.learning_rate);
  t.number("model_train", "holdout_fraction", c.model_train.holdout_fraction);

  t.number("serve", "port", c.serve.port);
  t.number("serve", "frame_rate", c.serve.frame_rate);
  t.path("serve", "static_dir", c.serve.static_dir);
  t.number("serve", "max_client_queue", c.serve.max_client_queue);
  return t;
}

}  // namespace

void ToolkitConfig::validate() const {
  scenario.validate();
  sac.validate();
  train.validate();
  model.validate();
  model_train.validate();
  if (group_eval_episodes < 1) throw ConfigError("config: group.eval_episodes must be >= 1");
  if (dataset.n_sc < 1 || dataset.n_episode < 1) throw ConfigError("config: dataset sizes must be >= 1");
  if (serve.port < 0 || serve.port > 65535) throw ConfigError("config: serve.port out of range");
  if (!(serve.frame_rate > 0.0)) throw ConfigError("config: serve.frame_rate must be positive");
  if (serve.max_client_queue < 1) throw ConfigError("config: serve.max_client_queue must be >= 1");
}

void apply_desk_scale(ToolkitConfig& c) {
  c.desk_scale = true;
  c.train.total_steps = 30000;
  c.train.warmup_steps = 1000;
  c.train.snapshot_interval = 5;
  c.dataset.n_sc = 1000;
  c.dataset.n_episode = 200;
  c.model.d_model = 32;
  c.model.heads = 4;
  c.model.layers = 2;
  c.model.mlp_ratio = 2;
  c.model.head_width = 128;
  c.model.head_layers = 4;
  c.model_train.batch_size = 256;
  c.model_train.epochs = 400;
  c.model_train.learning_rate = 1e-3;
}

ToolkitConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }

  ToolkitConfig c;
  FieldTable table = bind(c);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' must appear inside a [section]");
    for (const auto& [key, value] : body)
      if (!table.find(section, key)) throw ConfigError("config: unknown key [" + section + "] " + key);
  }
  if (const auto desk = tree.get_optional<std::string>("general.desk_scale");
      desk && parse_bool(*desk, "general.desk_scale")) {
    apply_desk_scale(c);
  }
  for (const auto& [section, body] : tree)
    for (const auto& [key, value] : body) table.find(section, key)->set(value.data());
  c.validate();
  return c;
}

ToolkitConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_config(const ToolkitConfig& config) {
  ToolkitConfig copy = config;
  const FieldTable table = bind(copy);
  std::string out, section;
  for (const Field& f : table.fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path) return explicit_path;
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

}  // namespace advdiff::cli
