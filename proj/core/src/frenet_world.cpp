#include "advdiff/frenet_world.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "advdiff/error.hpp"

namespace advdiff {

namespace {

// Extra lateral clearance within which a vehicle ahead counts as being in
// the follower's path.
constexpr double kPathMargin = 0.3;
constexpr double kMinIdmGap = 0.1;
constexpr int kSpawnAttempts = 200;

bool finite(double x) { return std::isfinite(x); }

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::ego:
      return "ego";
    case Role::env_agent:
      return "env_agent";
    case Role::traffic:
      return "traffic";
  }
  return "unknown";
}

double RoadModel::lane_center(int lane) const {
  return (lane - (lane_count - 1) / 2.0) * lane_width;
}

int RoadModel::nearest_lane(double d) const {
  const int lane = static_cast<int>(std::lround(d / lane_width + (lane_count - 1) / 2.0));
  return std::clamp(lane, 0, lane_count - 1);
}

void RoadModel::validate() const {
  if (lane_count < 2) throw ConfigError("road: lane_count must be >= 2");
  if (!(lane_width > 0.0)) throw ConfigError("road: lane_width must be positive");
  if (!(road_length > 0.0)) throw ConfigError("road: road_length must be positive");
}

bool Observation::finite() const {
  return advdiff::finite(delta_s) && advdiff::finite(delta_d) && advdiff::finite(delta_v_s) &&
         advdiff::finite(v_s) && advdiff::finite(a_s);
}

void TrafficParams::validate() const {
  if (!(density >= 0.0)) throw ConfigError("traffic: density must be >= 0");
  if (!(speed_low >= 0.0 && speed_low <= speed_high))
    throw ConfigError("traffic: need 0 <= speed_low <= speed_high");
  if (!(spawn_range > 0.0)) throw ConfigError("traffic: spawn_range must be positive");
}

void WorldConfig::validate() const {
  road.validate();
  reward.validate();
  if (!(dims.width > 0.0 && dims.length > 0.0)) throw ConfigError("world: vehicle dims must be positive");
  if (!(limits.a_max > 0.0 && limits.v_d_max > 0.0 && limits.v_cap > 0.0))
    throw ConfigError("world: actuator limits must be positive");
  if (!(dt > 0.0)) throw ConfigError("world: dt must be positive");
  if (episode_max_steps < 1) throw ConfigError("world: episode_max_steps must be >= 1");
  if (!(env_spawn_behind >= 0.0)) throw ConfigError("world: env_spawn_behind must be >= 0");
  if (!(ego_speed >= 0.0)) throw ConfigError("world: ego_speed must be >= 0");
}

bool check_collision(const VehicleState& a, const VehicleState& b) {
  const double half_len = (a.dims.length + b.dims.length) / 2.0;
  const double half_wid = (a.dims.width + b.dims.width) / 2.0;
  return std::abs(a.s - b.s) < half_len && std::abs(a.d - b.d) < half_wid;
}

double footprint_gap(const VehicleState& a, const VehicleState& b) {
  const double gs = std::max(std::abs(a.s - b.s) - (a.dims.length + b.dims.length) / 2.0, 0.0);
  const double gd = std::max(std::abs(a.d - b.d) - (a.dims.width + b.dims.width) / 2.0, 0.0);
  return std::hypot(gs, gd);
}

double idm_acceleration(const IdmParams& p, double v, std::optional<double> gap, double v_lead) {
  const double free = p.desired_speed > 0.0 ? 1.0 - std::pow(v / p.desired_speed, p.exponent) : -1.0;
  if (!gap) return p.max_accel * free;
  const double s = std::max(*gap, kMinIdmGap);
  const double dyn = v * p.time_headway + v * (v - v_lead) / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
  const double s_star = p.min_gap + std::max(0.0, dyn);
  return p.max_accel * (free - (s_star / s) * (s_star / s));
}

World::World(const WorldConfig& config) : config_(config), rewards_(config.reward) {}

World World::create(const WorldConfig& config, const TrafficParams& traffic, std::uint64_t seed) {
  config.validate();
  traffic.validate();
  World w(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const RoadModel& road = config.road;

  VehicleState ego;
  ego.id = 0;
  ego.role = Role::ego;
  ego.lane = road.center_lane();
  ego.s = traffic.spawn_range;
  ego.d = road.lane_center(ego.lane);
  ego.v_s = config.ego_speed;
  ego.dims = config.dims;
  ego.desired_speed = config.idm.desired_speed;
  w.vehicles_.push_back(ego);

  VehicleState env;
  env.id = 1;
  env.role = Role::env_agent;
  std::vector<int> adjacent;
  if (ego.lane - 1 >= 0) adjacent.push_back(ego.lane - 1);
  if (ego.lane + 1 < road.lane_count) adjacent.push_back(ego.lane + 1);
  env.lane = adjacent[static_cast<std::size_t>(unit(rng) * adjacent.size()) % adjacent.size()];
  env.s = ego.s - unit(rng) * config.env_spawn_behind;
  env.d = road.lane_center(env.lane);
  env.v_s = traffic.speed_low + unit(rng) * (traffic.speed_high - traffic.speed_low);
  env.dims = config.dims;
  w.vehicles_.push_back(env);

  const auto count = static_cast<int>(
      std::lround(traffic.density * road.lane_count * 2.0 * traffic.spawn_range / 100.0));
  const double clearance = config.dims.length + config.idm.min_gap;
  for (int n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kSpawnAttempts && !placed; ++attempt) {
      VehicleState v;
      v.id = 2 + n;
      v.role = Role::traffic;
      v.lane = std::min(static_cast<int>(unit(rng) * road.lane_count), road.lane_count - 1);
      v.d = road.lane_center(v.lane);
      v.s = ego.s + (2.0 * unit(rng) - 1.0) * traffic.spawn_range;
      v.v_s = traffic.speed_low + unit(rng) * (traffic.speed_high - traffic.speed_low);
      v.desired_speed = v.v_s;
      v.dims = config.dims;
      const bool blocked = std::any_of(w.vehicles_.begin(), w.vehicles_.end(), [&](const VehicleState& o) {
        const bool same_path = std::abs(o.d - v.d) < (o.dims.width + v.dims.width) / 2.0;
        return same_path && std::abs(o.s - v.s) < clearance;
      });
      if (!blocked) {
        w.vehicles_.push_back(v);
        placed = true;
      }
    }
    if (!placed)
      throw ConfigError("traffic: could not place " + std::to_string(count) +
                        " vehicles without overlap (density too high)");
  }
  return w;
}

std::optional<std::size_t> World::leader_of(std::size_t i) const {
  const VehicleState& f = vehicles_[i];
  const double path_d = config_.road.lane_center(f.lane);
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < vehicles_.size(); ++j) {
    if (j == i) continue;
    const VehicleState& o = vehicles_[j];
    if (o.s <= f.s) continue;
    if (std::abs(o.d - path_d) >= (o.dims.width + f.dims.width) / 2.0 + kPathMargin) continue;
    if (!best || o.s < vehicles_[*best].s) best = j;
  }
  return best;
}

Control World::driver_control(std::size_t i) const {
  const VehicleState& f = vehicles_[i];
  IdmParams p = config_.idm;
  p.desired_speed = f.desired_speed;
  std::optional<double> gap;
  double v_lead = 0.0;
  if (const auto lead = leader_of(i)) {
    const VehicleState& l = vehicles_[*lead];
    gap = l.s - f.s - (l.dims.length + f.dims.length) / 2.0;
    v_lead = l.v_s;
  }
  const ActuatorLimits& lim = config_.limits;
  Control c;
  c.a_s = std::clamp(idm_acceleration(p, f.v_s, gap, v_lead), -lim.a_max, lim.a_max);
  c.v_d = std::clamp(config_.lane_keep_gain * (config_.road.lane_center(f.lane) - f.d), -lim.v_d_max,
                     lim.v_d_max);
  return c;
}

Control ego_policy(const World& world) { return world.driver_control(0); }

Observation World::observe() const {
  const VehicleState& e = ego();
  const VehicleState& a = env_agent();
  return {a.s - e.s, a.d - e.d, a.v_s - e.v_s, a.v_s, a.a_s};
}

StepResult World::step(const Control& env_control, double dt) {
  if (done_) throw Error("step() called on a finished episode");
  if (!(dt > 0.0) || !finite(dt)) throw ConfigError("step: dt must be positive");
  if (!finite(env_control.a_s) || !finite(env_control.v_d))
    throw NumericError("step: non-finite environment-agent control");

  const ActuatorLimits& lim = config_.limits;
  std::vector<Control> controls(vehicles_.size());
  for (std::size_t i = 0; i < vehicles_.size(); ++i)
    controls[i] = i == 1 ? env_control : driver_control(i);

  const double bound = config_.road.lateral_bound();
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    VehicleState& v = vehicles_[i];
    const double a = std::clamp(controls[i].a_s, -lim.a_max, lim.a_max);
    const double v_next = std::clamp(v.v_s + a * dt, 0.0, lim.v_cap);
    v.s += v.v_s * dt;
    v.a_s = v_next == v.v_s + a * dt ? a : (v_next - v.v_s) / dt;
    v.v_s = v_next;
    const double vd = std::clamp(controls[i].v_d, -lim.v_d_max, lim.v_d_max);
    const double d_next = std::clamp(v.d + vd * dt, -bound, bound);
    v.v_d = d_next == v.d + vd * dt ? vd : (d_next - v.d) / dt;
    v.d = d_next;
  }
  ++step_index_;

  StepResult r;
  r.ego_hit = check_collision(vehicles_[0], vehicles_[1]);
  r.collision = r.ego_hit;
  for (std::size_t j = 2; j < vehicles_.size() && !r.collision; ++j)
    r.collision = check_collision(vehicles_[0], vehicles_[j]) || check_collision(vehicles_[1], vehicles_[j]);
  r.observation = observe();
  r.reward = rewards_.evaluate(r.observation.delta_s, r.observation.delta_d, vehicles_[1].v_s, r.ego_hit);
  r.step_index = step_index_;
  done_ = r.collision || step_index_ >= config_.episode_max_steps;
  r.done = done_;
  return r;
}

bool operator==(const VehicleState& a, const VehicleState& b) {
  return a.id == b.id && a.role == b.role && a.s == b.s && a.d == b.d && a.v_s == b.v_s &&
         a.a_s == b.a_s && a.v_d == b.v_d && a.dims.width == b.dims.width &&
         a.dims.length == b.dims.length && a.lane == b.lane && a.desired_speed == b.desired_speed;
}

bool World::operator==(const World& other) const {
  return vehicles_ == other.vehicles_ && step_index_ == other.step_index_ && done_ == other.done_;
}

void write_trace_header(std::ostream& out) { out << "t,id,role,s,d,v_s,a_s\n"; }

void append_trace(std::ostream& out, double t, const std::vector<VehicleState>& vehicles) {
  for (const VehicleState& v : vehicles) {
    out << t << ',' << v.id << ',' << role_name(v.role) << ',' << v.s << ',' << v.d << ',' << v.v_s
        << ',' << v.a_s << '\n';
  }
}

}  // namespace advdiff
