#pragma once

// Live deployment service: steps a model-driven episode at a fixed frame
// rate, broadcasts each frame to WebSocket clients on /stream and serves the
// steering UI's static files at /.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "advdiff/difficulty_model.hpp"
#include "advdiff/error.hpp"

namespace advdiff::cli {

/// The listening socket could not be opened (typically: port in use).
class NetworkError : public Error {
 public:
  using Error::Error;
};

struct LiveOptions {
  std::string address = "0.0.0.0";
  int port = 8080;  // 0 picks a free port
  double frame_rate = 10.0;
  std::filesystem::path static_dir;
  std::size_t max_client_queue = 64;
  std::uint64_t seed = 0;
  double initial_difficulty = 0.5;
  long max_frames = 0;  // 0 runs until stop()
  bool handle_signals = false;  // stop on SIGINT / SIGTERM
};

class LiveServer {
 public:
  LiveServer(DifficultyModel& model, const ScenarioConfig& scenario, const LiveOptions& options);
  ~LiveServer();

  LiveServer(const LiveServer&) = delete;
  LiveServer& operator=(const LiveServer&) = delete;

  /// Binds the socket and starts the network thread. Throws NetworkError.
  void start();
  /// Bound port, valid after start().
  int port() const;
  /// Simulation loop; returns after stop() or max_frames frames.
  void run();
  /// Safe to call from any thread.
  void stop();

  long frames() const;
  /// Episodes started, including the current one.
  long episodes() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace advdiff::cli
