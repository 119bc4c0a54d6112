#include "advdiff/cli/stream_message.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "advdiff/error.hpp"

namespace advdiff::cli {

using nlohmann::json;

StateFrame make_state_frame(const DeployStep& step) {
  StateFrame f;
  f.t = step.t;
  f.x_scd = step.x_scd;
  for (const VehicleState& v : step.vehicles)
    f.vehicles.push_back({v.id, std::string(role_name(v.role)), v.s, v.d, v.v_s, std::atan2(v.v_d, v.v_s)});
  f.r1 = step.reward.risk;
  f.r2 = step.reward.speed;
  f.r3 = step.reward.collision;
  f.total = step.reward.total;
  f.collision = step.collision;
  if (!step.lambda.empty()) f.attention = AttentionFrame{step.lambda, step.upsilon};
  return f;
}

std::string encode(const StateFrame& f) {
  json vehicles = json::array();
  for (const VehicleFrame& v : f.vehicles)
    vehicles.push_back({{"id", v.id}, {"role", v.role}, {"s", v.s}, {"d", v.d}, {"v_s", v.v_s}, {"heading", v.heading}});
  json j{{"kind", "state"},
         {"t", f.t},
         {"x_scd", f.x_scd},
         {"vehicles", std::move(vehicles)},
         {"reward", {{"r1", f.r1}, {"r2", f.r2}, {"r3", f.r3}, {"total", f.total}}},
         {"collision", f.collision}};
  if (f.attention) j["attention"] = {{"lambda", f.attention->lambda}, {"upsilon", f.attention->upsilon}};
  return j.dump();
}

std::string encode(const EpisodeSummary& s) {
  const json j{{"kind", "episode_end"},
               {"summary",
                {{"episode", s.episode},
                 {"steps", s.steps},
                 {"t", s.t},
                 {"episode_return", s.episode_return},
                 {"min_gap", s.min_gap},
                 {"ego_hit", s.ego_hit},
                 {"collision", s.collision}}}};
  return j.dump();
}

ClientMessage parse_client_message(std::string_view text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError("client message is not a JSON object");
  const auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) throw FormatError("client message lacks a string 'kind'");
  const std::string k = kind->get<std::string>();
  ClientMessage m;
  if (k == "set_difficulty") {
    const auto value = j.find("value");
    if (value == j.end() || !value->is_number()) throw FormatError("set_difficulty needs a numeric 'value'");
    m.kind = ClientMessage::Kind::set_difficulty;
    m.value = value->get<double>();
    if (!std::isfinite(m.value)) throw FormatError("set_difficulty value must be finite");
  } else if (k == "reset") {
    m.kind = ClientMessage::Kind::reset;
  } else if (k == "pause") {
    m.kind = ClientMessage::Kind::pause;
  } else if (k == "resume") {
    m.kind = ClientMessage::Kind::resume;
  } else {
    throw FormatError("unknown client message kind '" + k + "'");
  }
  return m;
}

}  // namespace advdiff::cli
