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

#include <gtest/gtest.h>

#include <filesystem>
#include <future>
#include <random>

#include "latrisk/gateway.hpp"

using namespace latrisk;
using namespace std::chrono_literals;

namespace {

// Runs serve() on a background thread and exposes the bound port.
class Session {
 public:
  Session(const ScenarioConfig& cfg, std::uint64_t seed, ServeOptions opt) {
    std::promise<int> port;
    auto ready = port.get_future();
    opt.on_listening = [p = std::make_shared<std::promise<int>>(std::move(port))](int b) {
      p->set_value(b);
    };
    done_ = std::async(std::launch::async, [cfg, seed, opt] { return serve(cfg, seed, opt); });
    port_ = ready.get();
  }

  int port() const { return port_; }
  SessionSummary wait() { return done_.get(); }

 private:
  int port_ = 0;
  std::future<SessionSummary> done_;
};

std::string temp_log(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("latrisk_" + name + ".jsonl")).string();
}

ServeOptions fast_options(const std::string& log) {
  ServeOptions o;
  o.pace = 10.0;
  o.log_path = log;
  o.grid_size = 30.0;
  o.grid_resolution = 1.0;
  return o;
}

std::vector<Json> of_type(const std::vector<Json>& msgs, const std::string& type) {
  std::vector<Json> out;
  for (const auto& m : msgs) {
    if (m.value("type", "") == type) out.push_back(m);
  }
  return out;
}

ScenarioConfig session_config() {
  auto c = ScenarioConfig::defaults(ScenarioKind::kRightTurn);
  c.latency = {{0.25, 0.0}, {0.0, 0.0}};
  return c;
}

// Brakes on the first query, which ends the trial's decision traffic.
std::string brake_choice(const Json& q) { return q["options"][1].get<std::string>(); }

}  // namespace

TEST(Base64, RoundTripAllLengths) {
  std::mt19937 g(1);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(g());
    const auto text = base64_encode(b);
    EXPECT_EQ(text.size(), 4 * ((n + 2) / 3));
    EXPECT_EQ(base64_decode(text), b);
  }
  EXPECT_EQ(base64_encode({'f', 'o', 'o', 'b'}), "Zm9vYg==");
  EXPECT_THROW(base64_decode("abc"), std::invalid_argument);
  EXPECT_THROW(base64_decode("a!c="), std::invalid_argument);
}

TEST(Framing, DecoderHandlesSplitsAndBatches) {
  const Json a = {{"type", "hello"}, {"version", 1}}, b = {{"type", "answer"}, {"id", 7}};
  const std::string wire = encode_message(a) + encode_message(b);
  EXPECT_EQ(static_cast<unsigned char>(wire[0]), a.dump().size());
  MessageDecoder d;
  std::vector<Json> got;
  for (char c : wire) {
    d.feed(&c, 1);
    while (auto m = d.next()) got.push_back(*m);
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0], a);
  EXPECT_EQ(got[1], b);
  MessageDecoder big;
  const char huge[4] = {'\xff', '\xff', '\xff', '\x7f'};
  big.feed(huge, 4);
  EXPECT_THROW(big.next(), std::runtime_error);
}

TEST(OutboundQueue, DropsOldestFrameOnly) {
  OutboundQueue q(2);
  q.push({{"n", 0}}, false);
  q.push({{"n", 1}}, true);
  q.push({{"n", 2}}, true);
  q.push({{"n", 3}}, true);  // evicts frame 1
  q.push({{"n", 4}}, false);
  q.close();
  std::vector<int> seen;
  while (auto m = q.pop()) seen.push_back((*m)["n"].get<int>());
  EXPECT_EQ(seen, (std::vector<int>{0, 2, 3, 4}));
  EXPECT_EQ(q.dropped(), 1u);
}

TEST(Pose, JsonRoundTrip) {
  const Pose2 p(1.5, -2.25, 0.75);
  const Pose2 q = pose_from_json(pose_json(p));
  EXPECT_EQ(q.x, p.x);
  EXPECT_EQ(q.y, p.y);
  EXPECT_EQ(q.theta, p.theta);
  EXPECT_EQ(parse_bind("0.0.0.0:7878"), (std::pair<std::string, int>{"0.0.0.0", 7878}));
  EXPECT_THROW(parse_bind("7878"), std::invalid_argument);
}

TEST(Session, ScriptedConsoleLatencyAndReplay) {
  const std::string log = temp_log("scripted");
  Session s(session_config(), 1, fast_options(log));
  ScriptedConsoleOptions co;
  co.reaction = 0.025;  // 0.25 s of simulated time at pace 10
  co.choose = brake_choice;
  const auto t = run_scripted_console("127.0.0.1", s.port(), co);
  const auto summary = s.wait();

  ASSERT_FALSE(t.received.empty());
  EXPECT_EQ(t.received.front()["type"], "hello");
  EXPECT_EQ(t.received.front()["version"], kProtocolVersion);
  EXPECT_EQ(t.received.back()["type"], "end");
  const auto queries = of_type(t.received, "query");
  ASSERT_EQ(queries.size(), 1u);
  EXPECT_FALSE(queries[0]["grid"].get<std::string>().empty());
  const auto grid = deserialize_grid(base64_decode(queries[0]["grid"].get<std::string>()));
  EXPECT_EQ(grid.spec.width, 30);
  EXPECT_FLOAT_EQ(grid.tau, 0.25f);
  EXPECT_FALSE(of_type(t.received, "frame").empty());
  ASSERT_EQ(of_type(t.received, "applied").size(), 1u);

  ASSERT_EQ(summary.latencies.size(), 1u);
  EXPECT_NEAR(summary.latencies[0].human, 0.25, 1e-9);
  EXPECT_EQ(summary.latencies[0].network, 0.0);
  EXPECT_GE(summary.latencies[0].apply_at, summary.latencies[0].issue_time + 0.25 - 1e-9);
  EXPECT_TRUE(summary.result.braked);

  const auto replay = replay_session(read_session_log(log));
  EXPECT_TRUE(replay.matches);
  EXPECT_EQ(replay.logged_steps, summary.result.ego_log.size());
  EXPECT_EQ(replay.result.collided, summary.result.collided);
  std::filesystem::remove(log);
}

TEST(Session, DoubleSubmitIsRejectedAsStale) {
  Session s(session_config(), 1, fast_options(""));
  ScriptedConsoleOptions co;
  co.reaction = 0.025;
  co.choose = brake_choice;
  co.double_submit = true;
  const auto t = run_scripted_console("127.0.0.1", s.port(), co);
  const auto summary = s.wait();
  const auto errors = of_type(t.received, "error");
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0]["code"], "stale");
  EXPECT_EQ(summary.latencies.size(), 1u);
  EXPECT_EQ(summary.errors_sent, 1u);
}

TEST(Session, SlowConsoleDropsFramesButNotQueries) {
  auto opt = fast_options("");
  opt.send_buffer = 4096;
  opt.attach_licom = false;
  Session s(session_config(), 1, opt);
  ScriptedConsoleOptions co;
  co.reaction = 0.025;
  co.choose = brake_choice;
  co.read_delay = 20ms;
  co.receive_buffer = 4096;
  const auto t = run_scripted_console("127.0.0.1", s.port(), co);
  const auto summary = s.wait();
  const auto queries = of_type(t.received, "query");
  EXPECT_EQ(queries.size(), summary.latencies.size());
  EXPECT_GT(queries.size(), 0u);
  EXPECT_EQ(t.received.back()["type"], "end");
  ASSERT_GT(summary.frames_sent, 0u);
  EXPECT_GE(2 * summary.frames_dropped, summary.frames_sent)
      << summary.frames_dropped << " of " << summary.frames_sent;
  EXPECT_EQ(of_type(t.received, "frame").size() + summary.frames_dropped, summary.frames_sent);
}

TEST(Session, ReconnectReArmsOpenQuery) {
  Session s(session_config(), 1, fast_options(""));
  std::uint64_t first_id = 0;
  {
    Socket c = connect_to("127.0.0.1", s.port());
    while (auto m = c.receive()) {
      if ((*m)["type"] == "query") {
        first_id = (*m)["id"].get<std::uint64_t>();
        break;
      }
    }
  }  // disconnect without answering
  ASSERT_GT(first_id, 0u);
  std::this_thread::sleep_for(300ms);
  ScriptedConsoleOptions co;
  co.reaction = 0.025;
  co.choose = brake_choice;
  const auto t = run_scripted_console("127.0.0.1", s.port(), co);
  const auto summary = s.wait();
  const auto queries = of_type(t.received, "query");
  ASSERT_FALSE(queries.empty());
  EXPECT_EQ(queries[0]["id"].get<std::uint64_t>(), first_id);
  ASSERT_EQ(summary.latencies.size(), 1u);
  EXPECT_EQ(summary.latencies[0].query_id, first_id);
}

TEST(Session, HoldsWithoutConsole) {
  const std::string log = temp_log("idle");
  Session s(session_config(), 1, fast_options(log));
  std::this_thread::sleep_for(1500ms);  // longer than the whole trial at pace 10
  auto lines = read_session_log(log);
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines.back()["kind"], "hold");
  const double held_at = lines.back()["body"]["time"].get<double>();
  EXPECT_LT(held_at, 5.0);
  std::this_thread::sleep_for(300ms);
  EXPECT_EQ(read_session_log(log).size(), lines.size());

  ScriptedConsoleOptions co;
  co.reaction = 0.025;
  co.choose = brake_choice;
  const auto t = run_scripted_console("127.0.0.1", s.port(), co);
  const auto summary = s.wait();
  const auto queries = of_type(t.received, "query");
  ASSERT_EQ(queries.size(), 1u);
  EXPECT_EQ(queries[0]["issue_time"].get<double>(), held_at);
  EXPECT_NEAR(summary.latencies[0].human, 0.25, 1e-9);
  std::filesystem::remove(log);
}

TEST(Session, SecondConsoleIsTurnedAway) {
  Session s(session_config(), 1, fast_options(""));
  Socket first = connect_to("127.0.0.1", s.port());
  ASSERT_EQ((*first.receive())["type"], "hello");
  Socket second = connect_to("127.0.0.1", s.port());
  const auto m = second.receive();
  ASSERT_TRUE(m);
  EXPECT_EQ((*m)["code"], "busy");
  second.close();
  first.close();
  std::this_thread::sleep_for(300ms);
  ScriptedConsoleOptions co;
  co.reaction = 0.025;
  co.choose = brake_choice;
  run_scripted_console("127.0.0.1", s.port(), co);
  s.wait();
}
