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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latrisk/gateway.hpp"
#include "latrisk/png.hpp"
#include "latrisk/scenario.hpp"
#include "latrisk/static_http.hpp"

namespace fs = std::filesystem;
using namespace latrisk;

namespace {

struct Common {
  std::string config_path;
  std::string scenario;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Scenario config (JSON)");
  app->add_option("--scenario", c.scenario, "merge | right-turn | left-turn (overrides the config)");
  app->add_option("--seed", c.seed, "Master seed");
  app->add_option("--out-dir", c.out_dir, "Output directory");
  app->add_option("--threads", c.threads, "Worker threads (0: all cores)");
}

ScenarioConfig load_config(const Common& c) {
  ScenarioConfig cfg;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw std::runtime_error("cannot open config " + c.config_path);
    Json j = Json::parse(in);
    if (!c.scenario.empty()) j["kind"] = to_string(parse_scenario_kind(c.scenario));
    cfg = config_from_json(j);
  } else {
    cfg = ScenarioConfig::defaults(parse_scenario_kind(c.scenario.empty() ? "merge" : c.scenario));
  }
  cfg.master_seed = c.seed;
  cfg.threads = c.threads;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_list(const std::string& s, double scale) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item) * scale);
  }
  if (out.empty()) throw std::invalid_argument("empty list: " + s);
  return out;
}

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return (fs::path(c.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  std::cout << "wrote " << path << '\n';
}

std::string stem(const ScenarioConfig& cfg, const std::string& what) {
  return what + "_" + to_string(cfg.kind) + "_" + config_digest(cfg) + "_s" +
         std::to_string(cfg.master_seed);
}

int cmd_run(const Common& c, const std::string& policy, std::optional<double> latency_ms, bool write) {
  ScenarioConfig cfg = load_config(c);
  if (!policy.empty()) cfg.policy = parse_policy(policy);
  if (latency_ms) cfg.latency = LatencyModel::fixed(*latency_ms / 1000.0);
  const TrialResult r = run_trial(cfg, cfg.master_seed);
  Json out = trial_summary_json(r);
  out["scenario"] = to_string(cfg.kind);
  out["policy"] = to_string(cfg.policy);
  out["latency_ms"] = std::llround(cfg.latency.expected() * 1000.0);
  out["seed"] = cfg.master_seed;
  Json decisions = Json::array();
  for (const auto& d : r.decisions) {
    decisions.push_back({{"id", d.query_id}, {"issued_at", d.issued_at}, {"apply_at", d.apply_at},
                         {"option", d.option}, {"perceived", d.perceived}});
  }
  out["decision_log"] = decisions;
  std::cout << out.dump(2) << '\n';
  if (write) {
    out["trajectory"] = trajectory_json(r.ego_log);
    write_text(out_path(c, stem(cfg, "run_" + to_string(cfg.policy)) + ".json"), out.dump(1) + "\n");
  }
  return 0;
}

int cmd_batch(const Common& c, std::optional<int> trials, const std::string& latencies) {
  ScenarioConfig cfg = load_config(c);
  if (trials) cfg.trials = *trials;
  cfg.validate();
  std::vector<ComparisonRow> rows;
  Json reports = Json::array();
  for (double tau : parse_list(latencies, 1e-3)) {
    ComparisonRow row;
    row.latency = tau;
    for (Policy p : {Policy::kBaseline, Policy::kLavqa}) {
      ScenarioConfig run = cfg;
      run.policy = p;
      run.latency = LatencyModel::fixed(tau);
      BatchReport rep = run_batch(run);
      std::printf("%-10s %4lld ms %-8s %3d/%d collisions  (%.1f s)\n", to_string(run.kind).c_str(),
                  std::llround(tau * 1000.0), to_string(p).c_str(), rep.collisions, rep.trials,
                  rep.wall_seconds);
      reports.push_back(to_json(rep));
      (p == Policy::kBaseline ? row.baseline : row.lavqa) = std::move(rep);
    }
    std::printf("%-10s %4lld ms reduction %s\n", to_string(cfg.kind).c_str(),
                std::llround(tau * 1000.0), reduction_ratio(row.baseline, row.lavqa).c_str());
    rows.push_back(std::move(row));
  }
  const std::string base = stem(cfg, "batch");
  write_text(out_path(c, base + ".csv"), comparison_csv(rows));
  const Json doc = {{"config", to_json(cfg)}, {"digest", config_digest(cfg)}, {"reports", reports}};
  write_text(out_path(c, base + ".json"), doc.dump(1) + "\n");
  return 0;
}

int cmd_trace(const Common& c, const std::string& latencies) {
  const ScenarioConfig cfg = load_config(c);
  const auto taus = parse_list(latencies, 1e-3);
  const RiskTrace trace = perceived_risk_trace(cfg, cfg.master_seed, taus);
  std::vector<double> t, truth;
  for (const auto& p : trace.points) {
    t.push_back(p.time);
    truth.push_back(p.ground_truth);
  }
  const double t0 = first_crossing(t, truth, cfg.safety.lambda);
  std::printf("ground truth crosses lambda=%.2f at %.2f s\n", cfg.safety.lambda, t0);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    std::vector<double> b;
    for (const auto& p : trace.points) b.push_back(p.baseline[i]);
    std::printf("baseline tau=%3lld ms crosses at %.2f s\n", std::llround(taus[i] * 1000.0),
                first_crossing(t, b, cfg.safety.lambda));
  }
  write_text(out_path(c, stem(cfg, "trace") + ".csv"), trace_csv(trace));
  return 0;
}

int cmd_licom(const Common& c, const std::string& taus_text, double size, double resolution) {
  const ScenarioConfig cfg = load_config(c);
  const auto taus = parse_list(taus_text, 1.0);
  const auto grids = licom_sweep_on_approach(cfg, cfg.master_seed, taus, size, resolution);
  if (grids.empty()) {
    std::cerr << "the obstacle never enters the grid in this trial\n";
    return 1;
  }
  std::ostringstream summary;
  summary << "tau,unsafe_cells,time\n";
  for (const auto& g : grids) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "_tau%04lld", std::llround(g.tau * 1000.0));
    const std::string base = stem(cfg, "licom") + tag;
    write_file(out_path(c, base + ".png"), render_heatmap(g, cfg.safety.lambda));
    std::cout << "wrote " << out_path(c, base + ".png") << "  unsafe cells "
              << count_unsafe(g, cfg.safety.lambda) << '\n';
    summary << g.tau << ',' << count_unsafe(g, cfg.safety.lambda) << ',' << g.timestamp << '\n';
  }
  write_text(out_path(c, stem(cfg, "licom") + ".csv"), summary.str());
  return 0;
}

int cmd_serve(const Common& c, const std::string& bind, double pace, const std::string& log,
              const std::string& static_dir, int http_port, const std::string& sweep) {
  const ScenarioConfig cfg = load_config(c);
  ServeOptions opt;
  std::tie(opt.host, opt.port) = parse_bind(bind);
  opt.pace = pace;
  opt.log_path = log;
  if (!sweep.empty()) opt.sweep_taus = parse_list(sweep, 1.0);
  opt.on_listening = [&](int port) {
    std::printf("session gateway listening on %s:%d (pace %.2f)\n", opt.host.c_str(), port, pace);
    std::fflush(stdout);
  };
  std::unique_ptr<StaticHttpServer> http;
  if (!static_dir.empty()) {
    http = std::make_unique<StaticHttpServer>(opt.host, http_port, static_dir);
    std::printf("console bundle at http://%s:%d/\n", opt.host.c_str(), http->port());
  }
  const SessionSummary s = serve(cfg, cfg.master_seed, opt);
  Json out = trial_summary_json(s.result);
  out["frames_sent"] = s.frames_sent;
  out["frames_dropped"] = s.frames_dropped;
  Json lat = Json::array();
  for (const auto& m : s.latencies) {
    lat.push_back({{"id", m.query_id}, {"human", m.human}, {"network", m.network}, {"apply_at", m.apply_at}});
  }
  out["latencies"] = lat;
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_replay(const std::string& log) {
  const ReplayOutcome r = replay_session(read_session_log(log));
  std::printf("replayed %zu steps; logged %zu; %s\n", r.result.ego_log.size(), r.logged_steps,
              r.matches ? "trajectory identical" : "TRAJECTORY DIFFERS");
  return r.matches ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latency-aware collision risk tools"};
  app.require_subcommand(1);

  Common run_c, batch_c, trace_c, licom_c, serve_c;

  auto* run = app.add_subcommand("run", "Run one trial and print its summary");
  add_common(run, run_c);
  std::string policy;
  std::optional<double> latency_ms;
  bool run_write = false;
  run->add_option("--policy", policy, "baseline | lavqa");
  run->add_option("--latency-ms", latency_ms, "Fixed total decision latency");
  run->add_flag("--write", run_write, "Also write the trial JSON under --out-dir");

  auto* batch = app.add_subcommand("batch", "Paired baseline/lavqa batches over latencies");
  add_common(batch, batch_c);
  std::optional<int> trials;
  std::string batch_lat = "200,300,400";
  batch->add_option("--trials", trials, "Trials per batch");
  batch->add_option("--latencies", batch_lat, "Comma-separated latencies in ms");

  auto* trace = app.add_subcommand("trace", "Perceived-risk trace CSV");
  add_common(trace, trace_c);
  std::string trace_lat = "100,200,300,400";
  trace->add_option("--latencies", trace_lat, "Comma-separated latencies in ms");

  auto* licom = app.add_subcommand("licom", "Risk-map heatmaps as the obstacle approaches");
  add_common(licom, licom_c);
  std::string taus = "0.5,1.0,1.5,2.0,2.5";
  double grid_size = 80.0, grid_res = 0.5;
  licom->add_option("--taus", taus, "Comma-separated latencies in seconds");
  licom->add_option("--grid-size", grid_size, "Grid side length in meters");
  licom->add_option("--grid-resolution", grid_res, "Cell size in meters");

  auto* srv = app.add_subcommand("serve", "Live operator session gateway");
  add_common(srv, serve_c);
  std::string bind = "127.0.0.1:7878", log, static_dir, sweep;
  double pace = 1.0;
  int http_port = 8080;
  srv->add_option("--bind", bind, "host:port for the console socket");
  srv->add_option("--pace", pace, "Simulated seconds per wall second (<= 0: unpaced)");
  srv->add_option("--log", log, "Session log (JSON lines)");
  srv->add_option("--static-dir", static_dir, "Console bundle to serve over HTTP");
  srv->add_option("--http-port", http_port, "HTTP port for --static-dir");
  srv->add_option("--sweep", sweep, "What-if latencies (s) sent with each query");

  auto* rep = app.add_subcommand("replay", "Replay a session log and compare trajectories");
  std::string replay_log;
  rep->add_option("log", replay_log, "Session log")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_c, policy, latency_ms, run_write);
    if (*batch) return cmd_batch(batch_c, trials, batch_lat);
    if (*trace) return cmd_trace(trace_c, trace_lat);
    if (*licom) return cmd_licom(licom_c, taus, grid_size, grid_res);
    if (*srv) return cmd_serve(serve_c, bind, pace, log, static_dir, http_port, sweep);
    if (*rep) return cmd_replay(replay_log);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
