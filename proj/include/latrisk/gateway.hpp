// Copyright 2026 The latrisk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Live operator sessions over TCP. Every message is a little-endian u32
// byte count followed by one JSON object. The simulation loop is the only
// mutator of world state; socket threads only move messages.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "latrisk/scenario.hpp"

namespace latrisk {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxMessageBytes = 64u << 20;

// ---------------------------------------------------------------------------
// Encoding

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64_decode: length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("base64_decode: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline std::string encode_message(const Json& msg) {
  const std::string body = msg.dump();
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out(4, '\0');
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + body;
}

/// Incremental decoder for a byte stream of length-prefixed messages.
class MessageDecoder {
 public:
  void feed(const char* data, std::size_t n) { buf_.append(data, n); }

  std::optional<Json> next() {
    if (buf_.size() < 4) return std::nullopt;
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[i])) << (8 * i);
    if (n > kMaxMessageBytes) throw std::runtime_error("message too large");
    if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
    Json j = Json::parse(buf_.begin() + 4, buf_.begin() + 4 + n);
    buf_.erase(0, 4 + static_cast<std::size_t>(n));
    return j;
  }

 private:
  std::string buf_;
};

inline Json pose_json(const Pose2& p) { return {{"x", p.x}, {"y", p.y}, {"theta", p.theta}}; }

inline Pose2 pose_from_json(const Json& j) {
  return Pose2(j.at("x").get<double>(), j.at("y").get<double>(), j.value("theta", 0.0));
}

inline Json grid_message_json(const RiskGrid& g) {
  return {{"tau", g.tau}, {"payload", base64_encode(serialize_grid(g))}};
}

// ---------------------------------------------------------------------------
// Sockets

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  bool send_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  bool send_message(const Json& msg) { return send_all(encode_message(msg)); }

  /// Blocks until one message arrives; nullopt on EOF or error.
  std::optional<Json> receive() {
    while (true) {
      if (auto m = decoder_.next()) return m;
      char buf[8192];
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n <= 0) return std::nullopt;
      decoder_.feed(buf, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_ = -1;
  MessageDecoder decoder_;
};

inline std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("bind address must be host:port");
  return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
}

/// Listening socket; port 0 picks a free port.
inline Socket listen_on(const std::string& host, int port, int* bound_port = nullptr) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw std::runtime_error("socket() failed");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    throw std::invalid_argument("bad IPv4 address: " + host);
  }
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw std::runtime_error("bind failed on " + host + ":" + std::to_string(port));
  }
  if (::listen(s.fd(), 4) != 0) throw std::runtime_error("listen failed");
  if (bound_port != nullptr) {
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    *bound_port = ntohs(addr.sin_port);
  }
  return s;
}

/// `receive_buffer` > 0 caps the kernel receive buffer (bytes).
inline Socket connect_to(const std::string& host, int port, int receive_buffer = 0) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw std::runtime_error("socket() failed");
  if (receive_buffer > 0) {
    ::setsockopt(s.fd(), SOL_SOCKET, SO_RCVBUF, &receive_buffer, sizeof receive_buffer);
  }
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    throw std::invalid_argument("bad IPv4 address: " + host);
  }
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw std::runtime_error("connect failed to " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

// ---------------------------------------------------------------------------
// Queues

/// Outbound messages. Frames may be dropped when the console falls behind;
/// every other message is kept.
class OutboundQueue {
 public:
  explicit OutboundQueue(std::size_t max_frames) : max_frames_(max_frames) {}

  void push(Json msg, bool droppable) {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) return;
    if (droppable) {
      if (frames_ >= max_frames_) {
        for (auto it = items_.begin(); it != items_.end(); ++it) {
          if (it->second) {
            items_.erase(it);
            --frames_;
            ++dropped_;
            break;
          }
        }
      }
      ++frames_;
    }
    items_.emplace_back(std::move(msg), droppable);
    cv_.notify_one();
  }

  /// Blocks for the next message; nullopt once closed and drained.
  std::optional<Json> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    auto [msg, droppable] = std::move(items_.front());
    items_.pop_front();
    if (droppable) --frames_;
    return std::move(msg);
  }

  void close() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  std::size_t dropped() const {
    std::lock_guard<std::mutex> lock(mu_);
    return dropped_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<Json, bool>> items_;
  std::size_t max_frames_;
  std::size_t frames_ = 0;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

/// Inbound events for the simulation loop.
struct InboundEvent {
  enum class Kind { kConnected, kDisconnected, kMessage };
  Kind kind;
  std::uint64_t link = 0;
  Json message;
  double received_at = 0.0;  // session clock
};

class InboundQueue {
 public:
  void push(InboundEvent e) {
    std::lock_guard<std::mutex> lock(mu_);
    items_.push_back(std::move(e));
    cv_.notify_one();
  }

  std::optional<InboundEvent> try_pop() {
    std::lock_guard<std::mutex> lock(mu_);
    if (items_.empty()) return std::nullopt;
    InboundEvent e = std::move(items_.front());
    items_.pop_front();
    return e;
  }

  std::optional<InboundEvent> pop_for(std::chrono::milliseconds wait) {
    std::unique_lock<std::mutex> lock(mu_);
    if (!cv_.wait_for(lock, wait, [&] { return !items_.empty(); })) return std::nullopt;
    InboundEvent e = std::move(items_.front());
    items_.pop_front();
    return e;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<InboundEvent> items_;
};

// ---------------------------------------------------------------------------
// Session log (JSON lines)

class SessionLog {
 public:
  SessionLog() = default;
  explicit SessionLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) throw std::runtime_error("cannot open session log " + path);
    }
  }

  void write(const std::string& kind, const Json& body) {
    std::lock_guard<std::mutex> lock(mu_);
    lines_.push_back({{"kind", kind}, {"body", body}});
    if (out_.is_open()) {
      out_ << lines_.back().dump() << '\n';
      out_.flush();
    }
  }

  std::vector<Json> lines() const {
    std::lock_guard<std::mutex> lock(mu_);
    return lines_;
  }

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::vector<Json> lines_;
};

inline std::vector<Json> read_session_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open session log " + path);
  std::vector<Json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(Json::parse(line));
  }
  return lines;
}

inline Json trajectory_json(const std::vector<Pose2>& poses) {
  Json a = Json::array();
  for (const auto& p : poses) a.push_back({p.x, p.y, p.theta});
  return a;
}

inline Json trial_summary_json(const TrialResult& r) {
  return {{"collided", r.collided},
          {"collision_time", r.collision_time},
          {"min_clearance", r.min_clearance},
          {"braked", r.braked},
          {"decisions", r.decisions.size()},
          {"final_time", r.final_time}};
}

// ---------------------------------------------------------------------------
// Session

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 0;
  double pace = 1.0;  // simulated seconds per wall second; <= 0 runs unpaced
  std::string log_path;
  std::size_t max_pending_frames = 8;
  double frame_hz = 20.0;
  bool attach_licom = true;
  double grid_size = 80.0;
  double grid_resolution = 0.5;
  std::vector<double> sweep_taus;
  int send_buffer = 0;  // bytes; > 0 caps the kernel send buffer per console
  std::function<void(int)> on_listening;  // receives the bound port
  std::chrono::milliseconds idle_poll{20};
};

struct MeasuredLatency {
  std::uint64_t query_id = 0;
  double human = 0.0;    // simulated seconds
  double network = 0.0;  // simulated seconds
  double presented_at = 0.0;
  double answered_at = 0.0;
  double issue_time = 0.0;
  double apply_at = 0.0;
};

struct SessionSummary {
  TrialResult result;
  std::vector<MeasuredLatency> latencies;
  std::size_t frames_sent = 0;
  std::size_t frames_dropped = 0;
  std::size_t errors_sent = 0;
};

namespace detail {

struct Link {
  std::uint64_t id;
  Socket socket;
  OutboundQueue out;
  std::thread reader;
  std::thread writer;
  Link(std::uint64_t i, Socket s, std::size_t max_frames)
      : id(i), socket(std::move(s)), out(max_frames) {}
};

inline Json frame_json(const TrialSim& sim, std::int64_t index, const std::string* grid) {
  Json obstacles = Json::array();
  if (auto o = sim.obstacle_truth()) {
    const Extents& e = sim.scene().obstacle->extents;
    Json ob = pose_json(*o);
    ob["id"] = sim.scene().obstacle->id;
    ob["half_length"] = e.half_length;
    ob["half_width"] = e.half_width;
    obstacles.push_back(ob);
  }
  Json traj = Json::array();
  const auto& plan = sim.plan();
  for (int i = 0; i <= plan.horizon_steps; ++i) {
    const Pose2 p = plan.reference_at(sim.time() + i * plan.step()).pose;
    traj.push_back({p.x, p.y});
  }
  Json ego = pose_json(sim.ego().state.pose);
  ego["speed"] = sim.ego().state.speed;
  Json f = {{"type", "frame"}, {"index", index},     {"time", sim.time()},
            {"ego", ego},      {"obstacles", obstacles}, {"trajectory", traj}};
  if (grid != nullptr) f["grid"] = *grid;
  return f;
}

}  // namespace detail

/// Grids attached to a query: the expected-latency map plus an optional sweep.
inline std::vector<RiskGrid> query_grids(const TrialSim& sim, const ServeOptions& opt) {
  std::vector<double> taus{sim.config().latency.expected()};
  taus.insert(taus.end(), opt.sweep_taus.begin(), opt.sweep_taus.end());
  return licom_sweep(sim, taus, opt.grid_size, opt.grid_resolution);
}

/// Runs one live session and returns when the trial ends.
inline SessionSummary serve(const ScenarioConfig& cfg, std::uint64_t seed, const ServeOptions& opt) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto now = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  SessionLog log(opt.log_path);
  log.write("session", {{"version", kProtocolVersion},
                        {"config", to_json(cfg)},
                        {"seed", seed},
                        {"pace", opt.pace}});

  int bound = 0;
  Socket listener = listen_on(opt.host, opt.port, &bound);
  if (opt.on_listening) opt.on_listening(bound);

  InboundQueue inbound;
  std::mutex link_mu;
  std::shared_ptr<detail::Link> link;  // current console, guarded by link_mu
  std::vector<std::shared_ptr<detail::Link>> retired;
  std::atomic<bool> stopping{false};
  std::atomic<std::uint64_t> next_link{1};

  std::thread acceptor([&] {
    while (!stopping) {
      const int fd = ::accept(listener.fd(), nullptr, nullptr);
      if (fd < 0) break;
      if (stopping) {
        ::close(fd);
        break;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      if (opt.send_buffer > 0) {
        ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &opt.send_buffer, sizeof opt.send_buffer);
      }
      std::lock_guard<std::mutex> lock(link_mu);
      if (link) {
        Socket extra(fd);
        extra.send_message({{"type", "error"}, {"code", "busy"}, {"detail", "a console is already connected"}});
        continue;
      }
      auto l = std::make_shared<detail::Link>(next_link++, Socket(fd), opt.max_pending_frames);
      detail::Link* raw = l.get();
      l->writer = std::thread([raw] {
        while (auto m = raw->out.pop()) {
          if (!raw->socket.send_message(*m)) break;
        }
      });
      l->reader = std::thread([raw, &inbound, &now] {
        while (auto m = raw->socket.receive()) {
          inbound.push({InboundEvent::Kind::kMessage, raw->id, std::move(*m), now()});
        }
        inbound.push({InboundEvent::Kind::kDisconnected, raw->id, {}, now()});
      });
      link = l;
      inbound.push({InboundEvent::Kind::kConnected, l->id, {}, now()});
    }
  });

  TrialSim sim(cfg, seed);
  SessionSummary summary;
  std::optional<VisualQuery> query;  // open and unanswered
  double presented_at = 0.0;
  std::vector<RiskGrid> grids;
  std::optional<std::string> grid_b64;
  std::set<std::uint64_t> closed_ids;
  std::int64_t frame_index = 0;
  bool connected = false;
  const int frame_every = std::max(1, static_cast<int>(std::llround(1.0 / (opt.frame_hz * cfg.step))));

  // Returns false when no console is attached.
  auto send = [&](const Json& msg, bool droppable) {
    std::lock_guard<std::mutex> lock(link_mu);
    if (!link) return false;
    if (!droppable) log.write("out", msg);
    link->out.push(msg, droppable);
    return true;
  };

  auto query_json = [&] {
    Json q = {{"type", "query"},
              {"id", query->id},
              {"text", query->text},
              {"options", query->options},
              {"issue_time", query->issue_time},
              {"presented_at", presented_at}};
    if (!grids.empty()) {
      q["grid"] = grid_b64.value_or("");
      q["tau"] = grids.front().tau;
      Json sweep = Json::array();
      for (std::size_t i = 1; i < grids.size(); ++i) sweep.push_back(grid_message_json(grids[i]));
      q["sweep"] = sweep;
    }
    return q;
  };

  auto present = [&] {
    presented_at = now();
    send(query_json(), false);
  };

  // Returns true when the open query was answered.
  auto handle = [&](InboundEvent e) -> bool {
    switch (e.kind) {
      case InboundEvent::Kind::kConnected:
        connected = true;
        log.write("connected", {{"link", e.link}, {"at", e.received_at}});
        send({{"type", "hello"},
              {"version", kProtocolVersion},
              {"scenario", to_string(cfg.kind)},
              {"lambda", cfg.safety.lambda},
              {"step", cfg.step},
              {"expected_latency", cfg.latency.expected()},
              {"sweep_taus", opt.sweep_taus}},
             false);
        if (query) present();  // re-arm on reconnect
        return false;
      case InboundEvent::Kind::kDisconnected: {
        log.write("disconnected", {{"link", e.link}, {"at", e.received_at}});
        std::lock_guard<std::mutex> lock(link_mu);
        if (link && link->id == e.link) {
          link->out.close();
          link->socket.shutdown();
          retired.push_back(link);
          link.reset();
          connected = false;
        }
        return false;
      }
      case InboundEvent::Kind::kMessage:
        break;
    }
    const Json& m = e.message;
    log.write("in", {{"received_at", e.received_at}, {"msg", m}});
    if (m.value("type", "") != "answer") {
      if (m.value("type", "") != "hello") {
        send({{"type", "error"}, {"code", "unsupported"}, {"detail", "unexpected message type"}}, false);
        ++summary.errors_sent;
      }
      return false;
    }
    const std::uint64_t id = m.value("id", std::uint64_t{0});
    if (!query || id != query->id) {
      send({{"type", "error"},
            {"code", closed_ids.count(id) ? "stale" : "unknown"},
            {"detail", "answer does not refer to the open query"},
            {"id", id}},
           false);
      ++summary.errors_sent;
      return false;
    }
    OperatorAnswer a;
    a.query_id = id;
    if (m.contains("option")) a.option = m["option"].get<std::string>();
    if (m.contains("waypoint")) a.waypoint = pose_from_json(m["waypoint"]);
    a.answered_at = m.value("answered_at", e.received_at);
    const double scale = opt.pace > 0.0 ? opt.pace : 1.0;
    const double human = std::max(0.0, a.answered_at - presented_at) * scale;
    const double network = sim.draw_network_delay();
    PendingDecision d;
    try {
      d = sim.submit(a, human + network);
    } catch (const std::invalid_argument& ex) {
      send({{"type", "error"}, {"code", "invalid"}, {"detail", ex.what()}, {"id", id}}, false);
      ++summary.errors_sent;
      return false;
    }
    MeasuredLatency ml{id, human, network, presented_at, a.answered_at, query->issue_time, d.apply_at()};
    summary.latencies.push_back(ml);
    Json rec = {{"id", id},
                {"human", human},
                {"network", network},
                {"presented_at", presented_at},
                {"answered_at", a.answered_at},
                {"issue_time", query->issue_time},
                {"apply_at", d.apply_at()}};
    if (a.option) rec["option"] = *a.option;
    if (a.waypoint) rec["waypoint"] = pose_json(*a.waypoint);
    log.write("decision", rec);
    closed_ids.insert(id);
    query.reset();
    grid_b64.reset();
    grids.clear();
    return true;
  };

  std::size_t applied_seen = 0;
  double paused = 0.0;  // wall seconds spent holding for the operator
  while (!sim.finished()) {
    while (auto e = inbound.try_pop()) handle(std::move(*e));

    if (sim.sense()) {
      query = sim.open_query();
      if (opt.attach_licom) {
        grids = query_grids(sim, opt);
        grid_b64 = base64_encode(serialize_grid(grids.front()));
      }
      if (connected) present();
      log.write("hold", {{"id", query->id}, {"step", sim.step_index()}, {"time", sim.time()}});
      // Fail-safe hold: the world waits for the operator.
      const double hold_start = now();
      bool answered = false;
      while (!answered) {
        if (auto e = inbound.pop_for(opt.idle_poll)) answered = handle(std::move(*e));
      }
      paused += now() - hold_start;
    }

    for (; applied_seen < sim.applied().size(); ++applied_seen) {
      const auto& [id, step] = sim.applied()[applied_seen];
      send({{"type", "applied"}, {"id", id}, {"apply_at", static_cast<double>(step) * cfg.step}}, false);
    }

    if (sim.step_index() % frame_every == 0) {
      if (send(detail::frame_json(sim, frame_index++, grid_b64 ? &*grid_b64 : nullptr), true)) {
        ++summary.frames_sent;
      }
    }

    sim.advance_step();

    if (opt.pace > 0.0) {
      const double target = paused + sim.time() / opt.pace;
      const double ahead = target - now();
      if (ahead > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(ahead));
    }
  }

  summary.result = sim.take_result();
  log.write("trajectory", {{"ego", trajectory_json(summary.result.ego_log)}});
  const Json end = {{"type", "end"}, {"result", trial_summary_json(summary.result)}};
  send(end, false);

  stopping = true;
  listener.shutdown();
  listener.close();
  acceptor.join();
  {
    std::lock_guard<std::mutex> lock(link_mu);
    if (link) {
      link->out.close();
      retired.push_back(link);
      link.reset();
    }
  }
  for (auto& l : retired) {
    if (l->writer.joinable()) l->writer.join();
    summary.frames_dropped += l->out.dropped();
    l->socket.shutdown();
    if (l->reader.joinable()) l->reader.join();
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayOutcome {
  TrialResult result;
  bool matches = false;  // identical to the logged trajectory, bit for bit
  std::size_t logged_steps = 0;
};

/// Re-runs a logged session with the recorded answers and latencies.
inline ReplayOutcome replay_session(const std::vector<Json>& lines) {
  if (lines.empty() || lines.front().at("kind") != "session") {
    throw std::invalid_argument("replay: log does not start with a session record");
  }
  const Json& head = lines.front().at("body");
  const ScenarioConfig cfg = config_from_json(head.at("config"));
  const std::uint64_t seed = head.at("seed").get<std::uint64_t>();
  std::map<std::uint64_t, Json> decisions;
  const Json* logged = nullptr;
  for (const auto& l : lines) {
    if (l.at("kind") == "decision") decisions[l["body"]["id"].get<std::uint64_t>()] = l["body"];
    if (l.at("kind") == "trajectory") logged = &l["body"]["ego"];
  }

  TrialSim sim(cfg, seed);
  while (!sim.finished()) {
    if (sim.sense()) {
      const VisualQuery q = sim.open_query();
      auto it = decisions.find(q.id);
      if (it == decisions.end()) throw std::runtime_error("replay: no logged answer for query " + std::to_string(q.id));
      const Json& d = it->second;
      OperatorAnswer a;
      a.query_id = q.id;
      if (d.contains("option")) a.option = d["option"].get<std::string>();
      if (d.contains("waypoint")) a.waypoint = pose_from_json(d["waypoint"]);
      a.answered_at = d.at("answered_at").get<double>();
      sim.submit(a, d.at("human").get<double>() + d.at("network").get<double>());
    }
    sim.advance_step();
  }
  ReplayOutcome out;
  out.result = sim.take_result();
  if (logged != nullptr) {
    out.logged_steps = logged->size();
    out.matches = logged->size() == out.result.ego_log.size();
    for (std::size_t i = 0; out.matches && i < logged->size(); ++i) {
      const Json& p = (*logged)[i];
      const Pose2& q = out.result.ego_log[i];
      out.matches = p[0].get<double>() == q.x && p[1].get<double>() == q.y && p[2].get<double>() == q.theta;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted console (tests and demos)

struct ScriptedConsoleOptions {
  double reaction = 0.25;  // seconds added to presented_at
  std::function<std::string(const Json& query)> choose;  // default: first option
  std::chrono::milliseconds read_delay{0};  // sleep after each frame to induce backpressure
  bool double_submit = false;
  int receive_buffer = 0;  // bytes; > 0 caps the kernel receive buffer
};

struct ConsoleTranscript {
  std::vector<Json> received;
  std::vector<Json> sent;
};

/// Connects, answers every query and returns at the end message.
inline ConsoleTranscript run_scripted_console(const std::string& host, int port,
                                              const ScriptedConsoleOptions& opt) {
  ConsoleTranscript t;
  Socket s = connect_to(host, port, opt.receive_buffer);
  const Json hello = {{"type", "hello"}, {"version", kProtocolVersion}};
  s.send_message(hello);
  t.sent.push_back(hello);
  while (auto m = s.receive()) {
    t.received.push_back(*m);
    const std::string type = m->value("type", "");
    if (type == "end") break;
    if (type == "frame" && opt.read_delay.count() > 0) std::this_thread::sleep_for(opt.read_delay);
    if (type == "query") {
      const std::string choice = opt.choose ? opt.choose(*m) : (*m)["options"][0].get<std::string>();
      const Json a = {{"type", "answer"},
                      {"id", (*m)["id"]},
                      {"option", choice},
                      {"answered_at", (*m)["presented_at"].get<double>() + opt.reaction}};
      s.send_message(a);
      t.sent.push_back(a);
      if (opt.double_submit) {
        s.send_message(a);
        t.sent.push_back(a);
      }
    }
  }
  return t;
}

}  // namespace latrisk
