#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "advdiff/cli/cli.hpp"
#include "advdiff/cli/config.hpp"
#include "advdiff/cli/live_server.hpp"
#include "advdiff/cli/stream_message.hpp"
#include "advdiff/error.hpp"
#include "advdiff/nn/checkpoint.hpp"

using namespace advdiff;
using namespace advdiff::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

DifficultyModelConfig tiny_model() {
  DifficultyModelConfig m;
  m.d_model = 16;
  m.heads = 2;
  m.layers = 1;
  m.mlp_ratio = 2;
  m.head_width = 16;
  m.head_layers = 2;
  return m;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("advdiff_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv(kConfigEnvVar);
  }
  void TearDown() override {
    fs::remove_all(dir_);
    unsetenv(kConfigEnvVar);
  }
  fs::path write_model() {
    DifficultyModel model(tiny_model(), 3);
    const fs::path p = dir_ / "model.ckpt";
    nn::save_checkpoint(p, model.to_checkpoint());
    return p;
  }
  fs::path dir_;
};

}  // namespace

TEST(Config, DefaultsReproduceParameterTables) {
  const ToolkitConfig c;
  const RewardParams& r = c.scenario.world.reward;
  EXPECT_EQ(r.r_min, 0.0);
  EXPECT_EQ(r.r_max, 150.0);
  EXPECT_EQ(r.delta1, 8.0);
  EXPECT_EQ(r.delta2, 10.0);
  EXPECT_EQ(r.k_f, 0.001);
  EXPECT_EQ(r.vehicle_width, 2.077);
  EXPECT_EQ(r.vehicle_length, 5.037);
  EXPECT_EQ(r.rho_n, -18.0);
  EXPECT_EQ(r.d_thre, 0.8);
  EXPECT_EQ(r.s_thre, 20.0);
  EXPECT_EQ(r.rho_L, 0.5);
  EXPECT_EQ(r.rho_H, 4.0);
  EXPECT_EQ(r.v_min, 7.5);
  EXPECT_EQ(r.v_max, 22.0);
  EXPECT_EQ(r.rho_coll, 200.0);
  EXPECT_FALSE(r.literal_total_sign);

  EXPECT_EQ(c.scenario.world.dt, 0.1);
  EXPECT_EQ(c.sac.gamma, 0.99);
  EXPECT_EQ(c.sac.actor_lr, 3e-4);
  EXPECT_EQ(c.sac.critic_lr, 3e-4);
  EXPECT_EQ(c.sac.tau, 5e-3);
  EXPECT_EQ(c.train.total_steps, 100000);
  EXPECT_EQ(c.train.snapshot_interval, 10);
  EXPECT_EQ(c.dataset.n_sc, 10000);
  EXPECT_EQ(c.dataset.n_episode, 1000);
  EXPECT_EQ(c.model_train.batch_size, 1024);
  EXPECT_EQ(c.model_train.epochs, 1000);
  EXPECT_EQ(c.scenario.world.road.lane_width, 3.5);
  EXPECT_FALSE(c.desk_scale);
}

TEST(Config, CommittedFilesResolveAsDocumented) {
  const fs::path root = ADVDIFF_SOURCE_DIR;
  EXPECT_EQ(dump_config(load_config(root / "config/default.cfg")), dump_config(ToolkitConfig{}));
  ToolkitConfig desk;
  apply_desk_scale(desk);
  desk.seed = 1;
  EXPECT_EQ(dump_config(load_config(root / "config/desk_scale.cfg")), dump_config(desk));
}

TEST(Config, DumpParseRoundTrip) {
  ToolkitConfig c;
  c.seed = 42;
  c.scenario.world.reward.literal_total_sign = true;
  c.scenario.world.dt = 0.05;
  c.scenario.traffic.density = 1.75;
  c.sac.hidden = {32, 16, 8};
  c.sac.actor_lr = 1.0 / 3.0;
  c.train.cutoff_step = 12345;
  c.dataset.stochastic = false;
  c.model.head_layers = 3;
  c.serve.static_dir = "some/where";
  const std::string text = dump_config(c);
  const ToolkitConfig back = parse_config(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.sac.actor_lr, 1.0 / 3.0);
  ASSERT_TRUE(back.train.cutoff_step.has_value());
  EXPECT_EQ(*back.train.cutoff_step, 12345);
  EXPECT_EQ(back.sac.hidden, (std::vector<Eigen::Index>{32, 16, 8}));
  EXPECT_FALSE(parse_config(dump_config(ToolkitConfig{})).train.cutoff_step.has_value());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  try {
    parse_config("[sac]\nbogus = 1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[nowhere]\nseed = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[sac]\ngamma = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("[sac]\ngamma = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("[general]\ndesk_scale = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("[sac]\nhidden = 64,,64\n"), ConfigError);
  EXPECT_THROW(parse_config("[serve]\nport = 70000\n"), ConfigError);
}

TEST(Config, DeskProfileThenExplicitKeys) {
  const ToolkitConfig c = parse_config("[train]\ntotal_steps = 5000\n[general]\ndesk_scale = true\n");
  EXPECT_TRUE(c.desk_scale);
  EXPECT_EQ(c.train.total_steps, 5000);
  EXPECT_EQ(c.dataset.n_sc, 1000);
  EXPECT_EQ(c.model.d_model, 32);
  EXPECT_EQ(parse_config("[general]\ndesk_scale = false\n").dataset.n_sc, 10000);
}

TEST_F(TempDir, ConfigPathFallsBackToEnvironment) {
  EXPECT_FALSE(resolve_config_path(std::nullopt).has_value());
  setenv(kConfigEnvVar, "/from/env.cfg", 1);
  EXPECT_EQ(resolve_config_path(std::nullopt), fs::path("/from/env.cfg"));
  EXPECT_EQ(resolve_config_path(fs::path("explicit.cfg")), fs::path("explicit.cfg"));
  EXPECT_THROW(load_config(dir_ / "missing.cfg"), ArtifactError);
}

TEST(StreamMessage, StateFrameFieldNames) {
  DeployStep step;
  step.t = 1.5;
  step.x_scd = 0.25;
  VehicleState ego;
  ego.id = 0;
  ego.role = Role::ego;
  ego.s = 10;
  ego.v_s = 10;
  ego.v_d = 0;
  VehicleState env = ego;
  env.id = 1;
  env.role = Role::env_agent;
  env.d = -1.0;
  env.v_s = 4.0;
  env.v_d = 3.0;
  step.vehicles = {ego, env};
  step.reward = {1.0, 2.0, 3.0, 6.0};
  step.collision = true;
  step.lambda = {5, 4, 3, 2, 1, 0};
  step.upsilon = {6, 5, 4, 3, 2, 1};
  const json j = json::parse(encode(make_state_frame(step)));
  EXPECT_EQ(j.at("kind"), "state");
  EXPECT_EQ(j.at("t").get<double>(), 1.5);
  EXPECT_EQ(j.at("x_scd").get<double>(), 0.25);
  ASSERT_EQ(j.at("vehicles").size(), 2u);
  const json& v = j.at("vehicles")[1];
  for (const char* key : {"id", "role", "s", "d", "v_s", "heading"}) EXPECT_TRUE(v.contains(key)) << key;
  EXPECT_EQ(v.at("id"), 1);
  EXPECT_DOUBLE_EQ(v.at("heading").get<double>(), std::atan2(3.0, 4.0));
  EXPECT_EQ(j.at("reward").at("r1").get<double>(), 1.0);
  EXPECT_EQ(j.at("reward").at("r2").get<double>(), 2.0);
  EXPECT_EQ(j.at("reward").at("r3").get<double>(), 3.0);
  EXPECT_EQ(j.at("reward").at("total").get<double>(), 6.0);
  EXPECT_EQ(j.at("collision"), true);
  EXPECT_EQ(j.at("attention").at("lambda"), json({5, 4, 3, 2, 1, 0}));
  EXPECT_EQ(j.at("attention").at("upsilon").size(), 6u);

  step.lambda.clear();
  step.upsilon.clear();
  EXPECT_FALSE(json::parse(encode(make_state_frame(step))).contains("attention"));
}

TEST(StreamMessage, EpisodeEndCarriesSummary) {
  EpisodeSummary s;
  s.episode = 3;
  s.steps = 120;
  s.ego_hit = true;
  const json j = json::parse(encode(s));
  EXPECT_EQ(j.at("kind"), "episode_end");
  EXPECT_EQ(j.at("summary").at("episode"), 3);
  EXPECT_EQ(j.at("summary").at("steps"), 120);
}

TEST(StreamMessage, ClientMessages) {
  const ClientMessage m = parse_client_message(R"({"kind":"set_difficulty","value":1.7})");
  EXPECT_EQ(m.kind, ClientMessage::Kind::set_difficulty);
  EXPECT_EQ(m.value, 1.7);
  EXPECT_EQ(parse_client_message(R"({"kind":"reset"})").kind, ClientMessage::Kind::reset);
  EXPECT_EQ(parse_client_message(R"({"kind":"pause"})").kind, ClientMessage::Kind::pause);
  EXPECT_EQ(parse_client_message(R"({"kind":"resume"})").kind, ClientMessage::Kind::resume);
  for (const char* bad : {"{", "[]", R"({"kind":"fly"})", R"({"kind":"set_difficulty"})",
                          R"({"kind":"set_difficulty","value":"x"})", R"({"value":0.5})"})
    EXPECT_THROW(parse_client_message(bad), FormatError) << bad;
}

TEST_F(TempDir, ExitCodesAreDistinct) {
  EXPECT_EQ(run_cli({"fly"}), kExitUsage);
  EXPECT_EQ(run_cli({}), kExitUsage);
  EXPECT_EQ(run_cli({"--help"}), kExitOk);

  ::testing::internal::CaptureStderr();
  const int serve_code = run_cli({"serve", "--model", (dir_ / "absent.ckpt").string()});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(serve_code, kExitArtifact);
  EXPECT_NE(err.find("absent.ckpt"), std::string::npos);

  std::ofstream(dir_ / "bad.cfg") << "[sac]\nbogus = 1\n";
  std::ofstream(dir_ / "broken.csv") << "nope\n";
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run_cli({"stats", "--config", (dir_ / "bad.cfg").string(), "--data", "x.csv"}), kExitConfig);
  EXPECT_EQ(run_cli({"stats", "--data", (dir_ / "none.csv").string()}), kExitArtifact);
  EXPECT_EQ(run_cli({"stats", "--data", (dir_ / "broken.csv").string()}), kExitFormat);
  ::testing::internal::GetCapturedStderr();
}

TEST_F(TempDir, RunIsDeterministicPerSeed) {
  const fs::path model = write_model();
  std::ofstream(dir_ / "short.cfg") << "[world]\nepisode_max_steps = 60\n";
  const auto run = [&](const std::string& out, const std::string& seed) {
    ::testing::internal::CaptureStderr();
    ::testing::internal::CaptureStdout();
    const int code = run_cli({"run", "--config", (dir_ / "short.cfg").string(), "--model", model.string(),
                              "--difficulty", "0.5", "--episodes", "1", "--seed", seed, "--out",
                              (dir_ / out).string()});
    ::testing::internal::GetCapturedStdout();
    ::testing::internal::GetCapturedStderr();
    return code;
  };
  ASSERT_EQ(run("a", "1"), kExitOk);
  ASSERT_EQ(run("b", "1"), kExitOk);
  ASSERT_EQ(run("c", "2"), kExitOk);
  const std::string trace = slurp(dir_ / "a" / "trace_0.csv");
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "t,id,role,s,d,v_s,a_s");
  EXPECT_EQ(trace, slurp(dir_ / "b" / "trace_0.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "steps_0.csv"), slurp(dir_ / "b" / "steps_0.csv"));
  EXPECT_NE(trace, slurp(dir_ / "c" / "trace_0.csv"));
}

TEST_F(TempDir, RunFollowsScheduleFile) {
  const fs::path model = write_model();
  std::ofstream(dir_ / "short.cfg") << "[world]\nepisode_max_steps = 30\n";
  std::ofstream(dir_ / "ramp.csv") << "t,x_scd\n0,0\n2,1\n";
  ::testing::internal::CaptureStderr();
  ::testing::internal::CaptureStdout();
  const int code = run_cli({"run", "--config", (dir_ / "short.cfg").string(), "--model", model.string(),
                            "--schedule", (dir_ / "ramp.csv").string(), "--out", (dir_ / "out").string()});
  ::testing::internal::GetCapturedStdout();
  ::testing::internal::GetCapturedStderr();
  ASSERT_EQ(code, kExitOk);
  std::ifstream in(dir_ / "out" / "steps_0.csv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string t, x;
    std::getline(row, t, ',');
    std::getline(row, x, ',');
    // The schedule is read at the start of the step; rows carry its end time.
    EXPECT_NEAR(std::stod(x), std::min((std::stod(t) - 0.1) / 2.0, 1.0), 1e-9);
  }

  std::ofstream(dir_ / "bad.csv") << "t,x_scd\n0,0\n0,1\n";
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run_cli({"run", "--model", model.string(), "--schedule", (dir_ / "bad.csv").string(), "--out",
                     (dir_ / "out2").string()}),
            kExitFormat);
  ::testing::internal::GetCapturedStderr();
}

namespace {

namespace net = boost::asio;
namespace beast = boost::beast;
using tcp = net::ip::tcp;

class LiveFixture : public TempDir {
 protected:
  void start(double frame_rate = 50.0) {
    model_ = std::make_unique<DifficultyModel>(tiny_model(), 5);
    scenario_.world.episode_max_steps = 100;
    LiveOptions o;
    o.address = "127.0.0.1";
    o.port = 0;
    o.frame_rate = frame_rate;
    o.static_dir = dir_;
    o.seed = 9;
    o.initial_difficulty = 0.5;
    server_ = std::make_unique<LiveServer>(*model_, scenario_, o);
    server_->start();
    loop_ = std::thread([this] { server_->run(); });
  }
  void TearDown() override {
    if (server_) server_->stop();
    if (loop_.joinable()) loop_.join();
    TempDir::TearDown();
  }

  std::unique_ptr<DifficultyModel> model_;
  ScenarioConfig scenario_;
  std::unique_ptr<LiveServer> server_;
  std::thread loop_;
};

struct Client {
  net::io_context ioc;
  beast::websocket::stream<tcp::socket> ws{ioc};

  explicit Client(int port) {
    tcp::resolver resolver(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/stream");
  }
  json next() {
    beast::flat_buffer buf;
    ws.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  }
  json next_state() {
    for (;;) {
      json j = next();
      if (j.at("kind") == "state") return j;
    }
  }
  void send(const std::string& text) { ws.write(net::buffer(text)); }
};

std::string http_get(int port, const std::string& target, int* status) {
  net::io_context ioc;
  beast::tcp_stream stream(ioc);
  tcp::resolver resolver(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  beast::http::request<beast::http::empty_body> req{beast::http::verb::get, target, 11};
  req.set(beast::http::field::host, "127.0.0.1");
  beast::http::write(stream, req);
  beast::flat_buffer buf;
  beast::http::response<beast::http::string_body> res;
  beast::http::read(stream, buf, res);
  *status = res.result_int();
  return res.body();
}

}  // namespace

TEST_F(LiveFixture, DifficultyRampEchoesWithinTwoFrames) {
  start();
  Client c(server_->port());
  c.next_state();
  for (int i = 0; i <= 10; ++i) {
    const double target = 0.13 + (1.0 - 0.13) * i / 10.0;
    c.send(json{{"kind", "set_difficulty"}, {"value", target}}.dump());
    int frames = 0;
    double seen = -1.0;
    while (frames < 2) {
      seen = c.next_state().at("x_scd").get<double>();
      ++frames;
      if (seen == target) break;
    }
    EXPECT_EQ(seen, target) << "step " << i << " not echoed within 2 frames";
  }
  c.send(R"({"kind":"set_difficulty","value":1.7})");
  double seen = 0.0;
  for (int k = 0; k < 2 && seen != 1.0; ++k) seen = c.next_state().at("x_scd").get<double>();
  EXPECT_EQ(seen, 1.0);
}

TEST_F(LiveFixture, MalformedMessagesAreIgnored) {
  start();
  Client c(server_->port());
  c.next_state();
  ::testing::internal::CaptureStderr();
  c.send("not json");
  c.send(R"({"kind":"teleport"})");
  c.send(R"({"kind":"set_difficulty","value":0.9})");
  double seen = 0.0;
  for (int k = 0; k < 4 && seen != 0.9; ++k) seen = c.next_state().at("x_scd").get<double>();
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(seen, 0.9);
  EXPECT_NE(err.find("teleport"), std::string::npos);
}

TEST_F(LiveFixture, TimeIncreasesWithinEpisodes) {
  start(500.0);
  Client c(server_->port());
  double last = -1.0;
  int episode_ends = 0, states = 0;
  while (episode_ends < 2) {
    const json j = c.next();
    if (j.at("kind") == "episode_end") {
      ++episode_ends;
      last = -1.0;
      continue;
    }
    const double t = j.at("t").get<double>();
    if (last >= 0.0) EXPECT_GT(t, last);
    last = t;
    ++states;
  }
  EXPECT_GT(states, 0);
}

TEST_F(LiveFixture, ResetStartsANewEpisode) {
  start();
  Client c(server_->port());
  for (int k = 0; k < 5; ++k) c.next_state();
  c.send(R"({"kind":"reset"})");
  bool restarted = false;
  for (int k = 0; k < 4 && !restarted; ++k) restarted = c.next_state().at("t").get<double>() <= 0.1 + 1e-12;
  EXPECT_TRUE(restarted);
  EXPECT_GE(server_->episodes(), 2);
}

TEST_F(LiveFixture, PortInUseIsReported) {
  start();
  LiveOptions o;
  o.address = "127.0.0.1";
  o.port = server_->port();
  LiveServer second(*model_, scenario_, o);
  EXPECT_THROW(second.start(), NetworkError);
}

TEST_F(LiveFixture, ServesStaticFiles) {
  std::ofstream(dir_ / "index.html") << "<html>steer</html>";
  std::ofstream(dir_.parent_path() / "advdiff_cli_secret.txt") << "secret";
  start();
  int status = 0;
  EXPECT_EQ(http_get(server_->port(), "/", &status), "<html>steer</html>");
  EXPECT_EQ(status, 200);
  http_get(server_->port(), "/missing.js", &status);
  EXPECT_EQ(status, 404);
  EXPECT_NE(http_get(server_->port(), "/../advdiff_cli_secret.txt", &status), "secret");
  EXPECT_EQ(status, 404);
  fs::remove(dir_.parent_path() / "advdiff_cli_secret.txt");
}

TEST_F(LiveFixture, HeadlessServerStopsAfterFrameBudget) {
  model_ = std::make_unique<DifficultyModel>(tiny_model(), 5);
  LiveOptions o;
  o.address = "127.0.0.1";
  o.port = 0;
  o.frame_rate = 1000.0;
  o.max_frames = 150;
  LiveServer s(*model_, scenario_, o);
  s.start();
  s.run();
  EXPECT_EQ(s.frames(), 150);
}
