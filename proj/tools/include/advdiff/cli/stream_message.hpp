#pragma once

// JSON messages exchanged with steering clients over /stream.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advdiff/difficulty_model.hpp"

namespace advdiff::cli {

struct VehicleFrame {
  int id = 0;
  std::string role;
  double s = 0.0;
  double d = 0.0;
  double v_s = 0.0;
  double heading = 0.0;  // atan2(v_d, v_s), radians
};

struct AttentionFrame {
  std::vector<int> lambda;
  std::vector<double> upsilon;
};

struct StateFrame {
  double t = 0.0;
  double x_scd = 0.0;
  std::vector<VehicleFrame> vehicles;
  double r1 = 0.0, r2 = 0.0, r3 = 0.0, total = 0.0;
  bool collision = false;
  std::optional<AttentionFrame> attention;
};

struct EpisodeSummary {
  long episode = 0;
  int steps = 0;
  double t = 0.0;
  double episode_return = 0.0;
  double min_gap = 0.0;
  bool ego_hit = false;
  bool collision = false;
};

StateFrame make_state_frame(const DeployStep& step);

std::string encode(const StateFrame& frame);
std::string encode(const EpisodeSummary& summary);

struct ClientMessage {
  enum class Kind { set_difficulty, reset, pause, resume };
  Kind kind = Kind::reset;
  double value = 0.0;  // set_difficulty only, unclamped
};

/// Throws FormatError for anything but the four client message kinds; a
/// set_difficulty value must be a finite number.
ClientMessage parse_client_message(std::string_view text);

}  // namespace advdiff::cli
