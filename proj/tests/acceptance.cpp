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

// Acceptance suite. Prints one PASS/FAIL line per criterion; exit status is
// nonzero if any criterion fails. Pass criterion numbers to run a subset.

#include <cstdarg>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "latrisk/gateway.hpp"
#include "oracles.hpp"

using namespace latrisk;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// Random ego footprint and a 1 to 3 mode belief placed so that the
// collision probability is neither 0 nor 1 for most draws.
struct RandomScene {
  Footprint ego;
  MixtureBelief belief;
  Extents obstacle;
};

RandomScene random_scene(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(g); };
  RandomScene s;
  s.ego = {Pose2(in(-50, 50), in(-50, 50), in(-kPi, kPi)), in(1.5, 3.0), in(0.7, 1.2)};
  s.obstacle = {in(1.5, 3.0), in(0.7, 1.2)};
  const int modes = 1 + static_cast<int>(u(g) * 3.0);
  double wsum = 0.0;
  for (int m = 0; m < modes; ++m) {
    const double r = in(0.0, 6.0), a = in(-kPi, kPi);
    const double sx = in(0.3, 1.5), sy = in(0.3, 1.5), rho = in(-0.5, 0.5);
    Mat3 cov = Mat3::Zero();
    cov(0, 0) = sx * sx;
    cov(1, 1) = sy * sy;
    cov(0, 1) = cov(1, 0) = rho * sx * sy;
    cov(2, 2) = std::pow(in(0.02, 0.3), 2);
    const double w = in(0.2, 1.0);
    wsum += w;
    s.belief.modes.push_back(
        {Pose2(s.ego.center.x + r * std::cos(a), s.ego.center.y + r * std::sin(a), in(-kPi, kPi)), cov, w});
  }
  for (auto& m : s.belief.modes) m.weight /= wsum;
  return s;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(20261018);
  double worst = 0.0;
  int failures = 0;
  for (int i = 0; i < 20; ++i) {
    const RandomScene s = random_scene(g);
    Rng rng(derive_seed(1, {static_cast<std::uint64_t>(i)}));
    const auto mc = collision_prob_mc(s.ego, s.belief, s.obstacle, 20000, rng);
    const auto q = collision_prob_quadrature(s.ego, s.belief, s.obstacle, 0.1);
    const double tol = std::max(0.02, 3.0 * mc.std_error);
    const double diff = std::abs(mc.value - q.value);
    worst = std::max(worst, diff / tol);
    if (diff > tol) {
      ++failures;
      std::printf("  config %d: mc %.4f quad %.4f diff %.4f tol %.4f\n", i, mc.value, q.value, diff, tol);
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0,
          fmt("20 configs, %d outside tolerance, worst diff/tol %.2f, %.1f s", failures, worst, secs)};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(7);
  int failures = 0;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const RandomScene s = random_scene(g);
    const LatencyQuery q{0.0, 0.0, DecisionAction::proceed(), s.ego, s.belief,
                         {{3.0, -1.0}, Vec3(0.15, 0.15, 0.01).asDiagonal()}, s.obstacle};
    Rng a(derive_seed(2, {static_cast<std::uint64_t>(i), 0}));
    Rng b(derive_seed(2, {static_cast<std::uint64_t>(i), 1}));
    const auto nested = licp(q, SafetyConfig{}, a);
    const auto mc = collision_prob_mc(s.ego, s.belief, s.obstacle, 20000, b);
    const double se = std::hypot(nested.std_error, mc.std_error);
    const double diff = std::abs(nested.value - mc.value);
    worst = std::max(worst, se > 0 ? diff / se : (diff > 0 ? 1e9 : 0.0));
    if (diff > 3.0 * se) {
      ++failures;
      std::printf("  scene %d: licp %.4f mc %.4f combined se %.4f\n", i, nested.value, mc.value, se);
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0,
          fmt("10 scenes, %d outside 3 combined se, worst %.2f se, %.1f s", failures, worst, secs)};
}

Outcome criterion3() {
  const Mat3 kQ = Vec3(0.15, 0.15, 0.01).asDiagonal();
  const EgoPlan plan = oracle::straight_plan(10.0, 5.0);
  const MotionModel model{{-10.0, 0.0}, kQ};
  const Extents obstacle{2.25, 1.0};
  const SafetyConfig cfg{0.3, 200, 100, 0.01};
  bool pass = true;
  std::ostringstream detail;
  // The literal 40 m gap gives zero risk for every tau. The contact-range
  // variant places the obstacle so the mean bumpers are 1 m apart at the
  // decision time, which keeps every tau away from 0 and 1.
  for (int variant = 0; variant < 2; ++variant) {
    detail << (variant == 0 ? "gap 40:" : " contact:");
    for (int i = 0; i <= 4; ++i) {
      const double tau = 0.1 * i;
      const double gap = variant == 0 ? 40.0 : 5.5 + 20.0 * tau;
      const auto belief = MixtureBelief::single(Pose2(gap, 0, kPi), Vec3(1, 1, 0.01).asDiagonal());
      const auto q = make_latency_query(plan, start_motion(plan), DecisionAction::proceed(), tau, belief,
                                        model, obstacle);
      Rng rng(derive_seed(3, {static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(i)}));
      const auto nested = licp(q, cfg, rng);
      const auto flat = oracle::flat_licp(q.ego_at_decision, belief, model.velocity, kQ, tau, obstacle,
                                          1000000, 1000 + i);
      const double se = std::hypot(nested.std_error, flat.std_error);
      const bool ok = std::abs(nested.value - flat.value) <= 3.0 * se;
      pass = pass && ok;
      detail << fmt(" %.1f:%.3f/%.3f%s", tau, nested.value, flat.value, ok ? "" : "!");
    }
    detail << ";";
  }
  return {pass, detail.str()};
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream detail;
  for (auto kind : {ScenarioKind::kMerge, ScenarioKind::kRightTurn, ScenarioKind::kLeftTurn}) {
    double prev_lavqa = -1.0;
    detail << to_string(kind) << ":";
    for (int ms : {200, 300, 400}) {
      auto c = ScenarioConfig::defaults(kind);
      c.trials = 100;
      c.threads = 8;
      c.latency = LatencyModel::fixed(ms / 1000.0);
      c.policy = Policy::kBaseline;
      const auto base = run_batch(c);
      c.policy = Policy::kLavqa;
      const auto aware = run_batch(c);
      const bool strict = aware.collisions < base.collisions;
      const bool ratio = ms != 200 || reduction_value(base, aware) >= 1.5;
      const bool mono = aware.collision_rate() >= prev_lavqa;
      prev_lavqa = aware.collision_rate();
      pass = pass && strict && ratio && mono;
      detail << fmt(" %dms b%d/l%d %s%s", ms, base.collisions, aware.collisions,
                    reduction_ratio(base, aware).c_str(), strict && ratio && mono ? "" : "!");
    }
    detail << ";";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 1800.0;
  detail << fmt(" %.0f s", secs);
  return {pass, detail.str()};
}

Outcome criterion5() {
  const std::vector<double> taus{0.1, 0.2, 0.3, 0.4};
  const auto c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  const double lambda = c.safety.lambda;
  int crossing_seeds = 0;
  bool pass = true;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto tr = perceived_risk_trace(c, seed, taus);
    std::vector<double> times, truth;
    for (const auto& p : tr.points) {
      times.push_back(p.time);
      truth.push_back(p.ground_truth);
    }
    const double t_truth = first_crossing(times, truth, lambda);
    if (t_truth < 0.0) continue;
    ++crossing_seeds;
    detail << fmt(" s%llu@%.2f", static_cast<unsigned long long>(seed), t_truth);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      std::vector<double> perceived;
      for (const auto& p : tr.points) perceived.push_back(p.baseline[i]);
      const double t_b = first_crossing(times, perceived, lambda);
      const double lag = t_b - t_truth;
      const bool ok = t_b >= 0.0 && std::abs(lag - taus[i]) <= 0.02 + 1e-9;
      pass = pass && ok;
      detail << fmt(" %.2f%s", lag, ok ? "" : "!");
    }
  }
  pass = pass && crossing_seeds >= 3;
  return {pass, fmt("%d merge seeds in 1..10 cross lambda;", crossing_seeds) + detail.str()};
}

Outcome criterion6() {
  std::ostringstream detail;
  const SafetyConfig cfg{0.3, 100, 20, 0.01};
  const LicomEgo ego{{2.25, 1.0}, 0.3, nullptr};

  // Empty scene.
  const auto empty = compute_licom(GridSpec::centered({0, 0}), ego, std::nullopt, 0.5, cfg, 1);
  bool empty_ok = true;
  for (double v : empty.values) empty_ok = empty_ok && v == 0.0;
  detail << "empty " << (empty_ok ? "ok" : "FAIL");

  // Zero covariance, tau = 0: unsafe iff some probe footprint meets the obstacle.
  const auto spec = GridSpec::centered({0, 0}, 30.0, 0.5);
  const Footprint of{Pose2(2.0, -1.0, 0.7), 2.25, 1.0};
  const LicomObstacle obs{MixtureBelief::single(of.center, Mat3::Zero()), {{0.0, 0.0}, Mat3::Zero()},
                          {2.25, 1.0}};
  const auto g = compute_licom(spec, ego, obs, 0.0, cfg, 2);
  const auto mask = classify(g, cfg.lambda);
  std::size_t mismatches = 0, unsafe = 0;
  for (int row = 0; row < spec.height; ++row) {
    for (int col = 0; col < spec.width; ++col) {
      bool hit = false;
      for (const auto& p : cell_probes(spec, col, row)) {
        hit = hit || rect_intersects(ego.extents.at(Pose2(p.x, p.y, ego.heading)), of);
      }
      unsafe += hit ? 1 : 0;
      mismatches += mask[spec.index(col, row)] != hit ? 1 : 0;
    }
  }
  const bool oracle_ok = mismatches == 0 && unsafe > 0;
  detail << fmt("; zero-cov %zu unsafe, %zu mismatches", unsafe, mismatches);

  // Sweep over latency: static obstacle, process noise along its heading.
  const LicomObstacle spread{MixtureBelief::single(Pose2(0, 0, 0), Vec3(0.05, 0.05, 0.0).asDiagonal()),
                             {{0.0, 0.0}, Vec3(1.0, 0.02, 0.0).asDiagonal()},
                             {2.25, 1.0}};
  const LicomEgo straight{{2.25, 1.0}, 0.0, nullptr};
  std::vector<std::size_t> counts;
  for (double tau : {0.5, 1.0, 1.5, 2.0, 2.5}) {
    counts.push_back(
        count_unsafe(compute_licom(GridSpec::centered({0, 0}, 20.0, 0.5), straight, spread, tau, cfg, 4), 0.3));
  }
  bool mono = true;
  detail << "; sweep";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    detail << ' ' << counts[i];
    if (i > 0) mono = mono && counts[i] >= counts[i - 1];
  }

  // Wire format.
  const auto bytes = serialize_grid(g);
  const auto back = deserialize_grid(bytes);
  bool wire_ok = serialize_grid(back) == bytes && back.spec == g.spec;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    wire_ok = wire_ok && back.values[i] == dequantize_value(quantize_value(g.values[i]));
  }
  detail << "; wire " << (wire_ok ? "ok" : "FAIL");
  return {empty_ok && oracle_ok && mono && wire_ok, detail.str()};
}

Outcome criterion7() {
  std::ostringstream detail;
  auto c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  c.trials = 20;
  c.latency = LatencyModel::fixed(0.3);
  c.policy = Policy::kBaseline;
  c.threads = 1;
  const std::string a = to_json(run_batch(c)).dump();
  c.threads = 4;
  const std::string b = to_json(run_batch(c)).dump();
  const std::string again = to_json(run_batch(c)).dump();
  const bool batch_ok = a == b && b == again;
  detail << "batch reports " << (batch_ok ? "identical" : "DIFFER");

  const std::string log =
      (std::filesystem::temp_directory_path() / "latrisk_acceptance_session.jsonl").string();
  auto sc = ScenarioConfig::defaults(ScenarioKind::kRightTurn);
  sc.latency = {{0.25, 0.0}, {0.05, 0.02}};
  ServeOptions opt;
  opt.pace = 10.0;
  opt.log_path = log;
  opt.grid_size = 30.0;
  opt.grid_resolution = 1.0;
  std::promise<int> port;
  auto ready = port.get_future();
  opt.on_listening = [&port](int p) { port.set_value(p); };
  auto session = std::async(std::launch::async, [&] { return serve(sc, 5, opt); });
  ScriptedConsoleOptions co;
  co.reaction = 0.03;
  const auto transcript = run_scripted_console("127.0.0.1", ready.get(), co);
  const auto summary = session.get();
  const auto replay = replay_session(read_session_log(log));
  std::filesystem::remove(log);
  const bool replay_ok = replay.matches && replay.logged_steps > 0;
  detail << fmt("; session %zu decisions, %zu steps, replay %s", summary.latencies.size(),
                replay.logged_steps, replay_ok ? "bit-identical" : "DIFFERS");
  return {batch_ok && replay_ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("CRITERION %d %s: %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
