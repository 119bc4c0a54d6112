#include "advdiff/cli/live_server.hpp"

#include <algorithm>
#include <atomic>
#include <boost/asio/signal_set.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <deque>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "advdiff/cli/stream_message.hpp"

namespace advdiff::cli {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

class WsSession;

// Network-side state. Everything except the control queue is touched only
// on the network thread.
struct Hub {
  std::filesystem::path static_dir;
  std::size_t max_queue = 64;
  std::vector<std::shared_ptr<WsSession>> sessions;

  std::mutex control_mutex;
  std::deque<ClientMessage> controls;

  void join(std::shared_ptr<WsSession> s) { sessions.push_back(std::move(s)); }
  void leave(const WsSession* s) {
    sessions.erase(std::remove_if(sessions.begin(), sessions.end(),
                                  [s](const std::shared_ptr<WsSession>& p) { return p.get() == s; }),
                   sessions.end());
  }
  void broadcast(const std::shared_ptr<const std::string>& msg);

  void receive(const std::string& text) {
    try {
      const ClientMessage m = parse_client_message(text);
      const std::lock_guard lock(control_mutex);
      controls.push_back(m);
    } catch (const FormatError& e) {
      std::cerr << "serve: warning: ignoring client message: " << e.what() << '\n';
    }
  }

  std::deque<ClientMessage> take_controls() {
    const std::lock_guard lock(control_mutex);
    std::deque<ClientMessage> out;
    out.swap(controls);
    return out;
  }
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  void send(const std::shared_ptr<const std::string>& msg) {
    if (closed_) return;
    if (queue_.size() >= hub_.max_queue) {
      // Slow client: drop it rather than hold back the simulation.
      close();
      return;
    }
    queue_.push_back(msg);
    if (queue_.size() == 1) do_write();
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    hub_.join(shared_from_this());
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      close();
      return;
    }
    hub_.receive(beast::buffers_to_string(buffer_.data()));
    buffer_.consume(buffer_.size());
    do_read();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()),
                    beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      close();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty() && !closed_) do_write();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    hub_.leave(this);
    beast::error_code ignored;
    beast::get_lowest_layer(ws_).socket().close(ignored);
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  Hub& hub_;
  bool closed_ = false;
};

void Hub::broadcast(const std::shared_ptr<const std::string>& msg) {
  const auto snapshot = sessions;  // send() may remove entries
  for (const auto& s : snapshot) s->send(msg);
}

std::string_view mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".map") return "application/json";
  return "application/octet-stream";
}

// Maps a request target onto a file below root; empty when the target
// escapes the root or names nothing.
std::filesystem::path resolve_static(const std::filesystem::path& root, std::string_view target) {
  const auto q = target.find_first_of("?#");
  std::string path(target.substr(0, q));
  if (path.empty() || path.front() != '/') return {};
  if (path.back() == '/') path += "index.html";
  const std::filesystem::path rel = std::filesystem::path(path.substr(1)).lexically_normal();
  if (rel.empty() || rel.is_absolute() || *rel.begin() == "..") return {};
  return root / rel;
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, Hub& hub) : stream_(std::move(socket)), hub_(hub) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_) && req_.target() == "/stream") {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), hub_)->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    res->set(http::field::server, "advdiff");
    const std::filesystem::path file = resolve_static(hub_.static_dir, std::string_view(req_.target().data(), req_.target().size()));
    std::ifstream in;
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      res->result(http::status::method_not_allowed);
    } else if (!file.empty() && std::filesystem::is_regular_file(file) && (in.open(file, std::ios::binary), in)) {
      std::ostringstream body;
      body << in.rdbuf();
      res->result(http::status::ok);
      res->set(http::field::content_type, std::string(mime_type(file)));
      if (req_.method() == http::verb::get) res->body() = body.str();
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  Hub& hub_;
};

class Listener : public std::enable_shared_from_this<Listener> {
 public:
  Listener(net::io_context& ioc, const tcp::endpoint& endpoint, Hub& hub) : ioc_(ioc), acceptor_(ioc), hub_(hub) {
    beast::error_code ec;
    acceptor_.open(endpoint.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(endpoint, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
      const std::string why = ec == net::error::address_in_use ? "port in use" : ec.message();
      throw NetworkError("serve: cannot listen on " + endpoint.address().to_string() + ":" +
                         std::to_string(endpoint.port()) + ": " + why);
    }
  }

  int port() const { return acceptor_.local_endpoint().port(); }

  void run() { do_accept(); }

  void close() {
    beast::error_code ignored;
    acceptor_.close(ignored);
  }

 private:
  void do_accept() {
    acceptor_.async_accept(ioc_, beast::bind_front_handler(&Listener::on_accept, shared_from_this()));
  }

  void on_accept(beast::error_code ec, tcp::socket socket) {
    if (!ec) std::make_shared<HttpSession>(std::move(socket), hub_)->run();
    if (acceptor_.is_open()) do_accept();
  }

  net::io_context& ioc_;
  tcp::acceptor acceptor_;
  Hub& hub_;
};

}  // namespace

struct LiveServer::Impl {
  DifficultyModel* model;
  ScenarioConfig scenario;
  LiveOptions options;
  net::io_context ioc;
  Hub hub;
  std::shared_ptr<Listener> listener;
  std::unique_ptr<net::signal_set> signals;
  std::thread network;
  std::atomic<bool> stopping{false};
  std::atomic<long> frames{0};
  std::atomic<long> episodes{0};

  void broadcast(std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    net::post(ioc, [this, msg] { hub.broadcast(msg); });
  }
};

LiveServer::LiveServer(DifficultyModel& model, const ScenarioConfig& scenario, const LiveOptions& options)
    : impl_(std::make_unique<Impl>()) {
  if (!(options.frame_rate > 0.0)) throw ConfigError("serve: frame rate must be positive");
  impl_->model = &model;
  impl_->scenario = scenario;
  impl_->options = options;
  impl_->hub.static_dir = options.static_dir;
  impl_->hub.max_queue = std::max<std::size_t>(options.max_client_queue, 1);
}

LiveServer::~LiveServer() {
  stop();
  if (impl_->network.joinable()) impl_->network.join();
}

void LiveServer::start() {
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->options.address, ec);
  if (ec) throw ConfigError("serve: invalid address '" + impl_->options.address + "'");
  impl_->listener = std::make_shared<Listener>(
      impl_->ioc, tcp::endpoint(address, static_cast<unsigned short>(impl_->options.port)), impl_->hub);
  impl_->listener->run();
  if (impl_->options.handle_signals) {
    impl_->signals = std::make_unique<net::signal_set>(impl_->ioc, SIGINT, SIGTERM);
    impl_->signals->async_wait([this](beast::error_code ec, int) {
      if (!ec) stop();
    });
  }
  impl_->network = std::thread([this] {
    const auto guard = net::make_work_guard(impl_->ioc);
    impl_->ioc.run();
  });
}

int LiveServer::port() const { return impl_->listener ? impl_->listener->port() : 0; }

long LiveServer::frames() const { return impl_->frames.load(); }
long LiveServer::episodes() const { return impl_->episodes.load(); }

void LiveServer::stop() {
  if (impl_->stopping.exchange(true)) return;
  net::post(impl_->ioc, [this] {
    if (impl_->listener) impl_->listener->close();
    if (impl_->signals) impl_->signals->cancel();
    impl_->ioc.stop();
  });
}

void LiveServer::run() {
  Impl& s = *impl_;
  DeploySession session(*s.model, s.scenario);
  long episode = 0;
  session.reset(mix_seed(s.options.seed, static_cast<std::uint64_t>(episode)));
  s.episodes.store(1);
  double x_scd = std::clamp(s.options.initial_difficulty, 0.0, 1.0);
  bool paused = false;
  bool last_collision = false;

  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / s.options.frame_rate));
  auto next = clock::now();
  const auto new_episode = [&] {
    ++episode;
    s.episodes.store(episode + 1);
    session.reset(mix_seed(s.options.seed, static_cast<std::uint64_t>(episode)));
  };

  while (!s.stopping.load()) {
    for (const ClientMessage& m : s.hub.take_controls()) {
      switch (m.kind) {
        case ClientMessage::Kind::set_difficulty: x_scd = std::clamp(m.value, 0.0, 1.0); break;
        case ClientMessage::Kind::reset: new_episode(); break;
        case ClientMessage::Kind::pause: paused = true; break;
        case ClientMessage::Kind::resume: paused = false; break;
      }
    }
    if (!paused) {
      const DeployStep step = session.step(x_scd);
      last_collision = step.collision;
      s.broadcast(encode(make_state_frame(step)));
      if (session.done()) {
        const AgentEnv& env = session.env();
        EpisodeSummary summary{episode,         env.world().step_index(), env.world().time(),
                               env.episode_return(), env.min_gap(),       env.ego_hit(),
                               last_collision};
        s.broadcast(encode(summary));
        new_episode();
      }
      const long n = s.frames.fetch_add(1) + 1;
      if (s.options.max_frames > 0 && n >= s.options.max_frames) break;
    }
    next += period;
    const auto now = clock::now();
    if (next < now - period) next = now;  // fell behind; do not burst
    std::this_thread::sleep_until(next);
  }
}

}  // namespace advdiff::cli
