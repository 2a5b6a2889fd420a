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

// Closed-loop evaluation: scenario geometry, single trials, paired batches
// and perceived-risk traces.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "latrisk/latency.hpp"
#include "latrisk/vqa.hpp"

namespace latrisk {

using Json = nlohmann::json;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::kMerge;
  bool obstacle_enabled = true;

  // Geometry and timing.
  double approach_distance = 90.0;
  double straight_duration = 5.0;
  double maneuver_duration = 2.5;
  double post_duration = 2.0;
  double lane_width = 3.5;
  double step = 0.01;
  int horizon_steps = 40;
  double time_cap = 12.0;
  Extents ego_extents;
  Extents obstacle_extents;

  // Randomization.
  Range ego_speed{18.0, 18.0};
  Range obstacle_speed{6.0, 12.0};
  double spawn_distance = 30.0;  // obstacle becomes visible this far from the conflict point
  double spawn_jitter = 3.0;     // +- meters along the obstacle lane
  double arrival_offset = 0.0;   // meters; shifts the nominal arrival later

  // Perception and prediction.
  EkfNoise ekf;
  Mat3 process_noise = Vec3(0.15, 0.15, 0.01).asDiagonal();

  // Decision layer.
  Policy policy = Policy::kLavqa;
  bool decisions_enabled = true;
  LatencyModel latency = LatencyModel::fixed(0.2);
  SafetyConfig safety{0.3, 100, 20, 0.01};
  RiskWindow window{1.5, 0.1, 6.0};
  TriggerConfig trigger{0.15, 5.0, 0.1, 200};  // window is extended by the expected latency
  DecisionTemplate question;

  // Batch.
  int trials = 100;
  std::uint64_t master_seed = 1;
  int threads = 0;  // 0: hardware concurrency

  static ScenarioConfig defaults(ScenarioKind k) {
    ScenarioConfig c;
    c.kind = k;
    c.question = default_template(k);
    switch (k) {
      case ScenarioKind::kMerge:
        c.spawn_distance = 40.0;
        c.arrival_offset = 3.0;
        break;
      case ScenarioKind::kRightTurn:
        c.spawn_distance = 30.0;
        c.arrival_offset = 0.0;
        break;
      case ScenarioKind::kLeftTurn:
        c.spawn_distance = 40.0;
        c.arrival_offset = 3.0;
        break;
    }
    return c;
  }

  double nominal_speed() const { return approach_distance / straight_duration; }
  double reference_duration() const {
    return straight_duration + maneuver_duration + post_duration;
  }

  void validate() const {
    if (!(straight_duration > 0 && maneuver_duration > 0 && post_duration > 0)) {
      throw std::invalid_argument("ScenarioConfig: durations must be > 0");
    }
    if (std::abs(step - 0.01) > 1e-12) throw std::invalid_argument("ScenarioConfig: step must be 0.01");
    if (horizon_steps != 40) throw std::invalid_argument("ScenarioConfig: horizon must be 40 steps");
    if (!(time_cap > 0.0)) throw std::invalid_argument("ScenarioConfig: time_cap");
    if (!(ego_speed.lo > 0.0 && ego_speed.hi >= ego_speed.lo)) {
      throw std::invalid_argument("ScenarioConfig: ego_speed");
    }
    if (!(obstacle_speed.lo > 0.0 && obstacle_speed.hi >= obstacle_speed.lo)) {
      throw std::invalid_argument("ScenarioConfig: obstacle_speed");
    }
    if (trials < 1) throw std::invalid_argument("ScenarioConfig: trials must be >= 1");
    latency.human.validate();
    latency.network.validate();
    safety.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON schema

namespace detail {

inline Json extents_json(const Extents& e) {
  return {{"half_length", e.half_length}, {"half_width", e.half_width}};
}
inline Extents extents_from(const Json& j, const Extents& d) {
  return {j.value("half_length", d.half_length), j.value("half_width", d.half_width)};
}
inline Json range_json(const Range& r) { return Json::array({r.lo, r.hi}); }
inline Range range_from(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
inline Json delay_json(const DelayComponent& c) { return {{"mean", c.mean}, {"jitter", c.jitter}}; }
inline DelayComponent delay_from(const Json& j) { return {j.value("mean", 0.0), j.value("jitter", 0.0)}; }

}  // namespace detail

inline Json to_json(const ScenarioConfig& c) {
  return {
      {"kind", to_string(c.kind)},
      {"obstacle_enabled", c.obstacle_enabled},
      {"approach_distance", c.approach_distance},
      {"durations",
       {{"straight", c.straight_duration}, {"maneuver", c.maneuver_duration}, {"post", c.post_duration}}},
      {"lane_width", c.lane_width},
      {"step", c.step},
      {"horizon_steps", c.horizon_steps},
      {"time_cap", c.time_cap},
      {"ego_extents", detail::extents_json(c.ego_extents)},
      {"obstacle_extents", detail::extents_json(c.obstacle_extents)},
      {"ego_speed", detail::range_json(c.ego_speed)},
      {"obstacle_speed", detail::range_json(c.obstacle_speed)},
      {"spawn_distance", c.spawn_distance},
      {"spawn_jitter", c.spawn_jitter},
      {"arrival_offset", c.arrival_offset},
      {"ekf",
       {{"accel_psd", c.ekf.accel_psd},
        {"heading_rate_psd", c.ekf.heading_rate_psd},
        {"observation_sigma",
         {c.ekf.observation_sigma(0), c.ekf.observation_sigma(1), c.ekf.observation_sigma(2)}},
        {"initial_velocity_sigma", c.ekf.initial_velocity_sigma}}},
      {"process_noise", {c.process_noise(0, 0), c.process_noise(1, 1), c.process_noise(2, 2)}},
      {"policy", to_string(c.policy)},
      {"decisions_enabled", c.decisions_enabled},
      {"latency",
       {{"human", detail::delay_json(c.latency.human)},
        {"network", detail::delay_json(c.latency.network)}}},
      {"lambda", c.safety.lambda},
      {"outer_samples", c.safety.outer_samples},
      {"inner_samples", c.safety.inner_samples},
      {"decision_window", {{"horizon", c.window.horizon}, {"probe_interval", c.window.probe_interval}}},
      {"trigger",
       {{"threshold", c.trigger.threshold},
        {"window", c.trigger.window},
        {"probe_interval", c.trigger.probe_interval},
        {"samples", c.trigger.samples}}},
      {"question",
       {{"text", c.question.question},
        {"positive", c.question.positive},
        {"negative", c.question.negative},
        {"allow_waypoint", c.question.allow_waypoint},
        {"brake_deceleration", c.question.brake_deceleration}}},
      {"trials", c.trials},
      {"master_seed", c.master_seed},
  };
}

/// Missing keys keep the per-scenario defaults.
inline ScenarioConfig config_from_json(const Json& j) {
  ScenarioConfig c = ScenarioConfig::defaults(parse_scenario_kind(j.value("kind", "merge")));
  c.obstacle_enabled = j.value("obstacle_enabled", c.obstacle_enabled);
  c.approach_distance = j.value("approach_distance", c.approach_distance);
  if (j.contains("durations")) {
    const auto& d = j["durations"];
    c.straight_duration = d.value("straight", c.straight_duration);
    c.maneuver_duration = d.value("maneuver", c.maneuver_duration);
    c.post_duration = d.value("post", c.post_duration);
  }
  c.lane_width = j.value("lane_width", c.lane_width);
  c.step = j.value("step", c.step);
  c.horizon_steps = j.value("horizon_steps", c.horizon_steps);
  c.time_cap = j.value("time_cap", c.time_cap);
  if (j.contains("ego_extents")) c.ego_extents = detail::extents_from(j["ego_extents"], c.ego_extents);
  if (j.contains("obstacle_extents")) {
    c.obstacle_extents = detail::extents_from(j["obstacle_extents"], c.obstacle_extents);
  }
  if (j.contains("ego_speed")) c.ego_speed = detail::range_from(j["ego_speed"]);
  if (j.contains("obstacle_speed")) c.obstacle_speed = detail::range_from(j["obstacle_speed"]);
  c.spawn_distance = j.value("spawn_distance", c.spawn_distance);
  c.spawn_jitter = j.value("spawn_jitter", c.spawn_jitter);
  c.arrival_offset = j.value("arrival_offset", c.arrival_offset);
  if (j.contains("ekf")) {
    const auto& e = j["ekf"];
    c.ekf.accel_psd = e.value("accel_psd", c.ekf.accel_psd);
    c.ekf.heading_rate_psd = e.value("heading_rate_psd", c.ekf.heading_rate_psd);
    if (e.contains("observation_sigma")) {
      const auto& s = e["observation_sigma"];
      c.ekf.observation_sigma = Vec3(s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>());
    }
    c.ekf.initial_velocity_sigma = e.value("initial_velocity_sigma", c.ekf.initial_velocity_sigma);
  }
  if (j.contains("process_noise")) {
    const auto& q = j["process_noise"];
    c.process_noise = Vec3(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>()).asDiagonal();
  }
  c.policy = parse_policy(j.value("policy", to_string(c.policy)));
  c.decisions_enabled = j.value("decisions_enabled", c.decisions_enabled);
  if (j.contains("latency")) {
    const auto& l = j["latency"];
    if (l.contains("human")) c.latency.human = detail::delay_from(l["human"]);
    if (l.contains("network")) c.latency.network = detail::delay_from(l["network"]);
  }
  c.safety.lambda = j.value("lambda", c.safety.lambda);
  c.safety.outer_samples = j.value("outer_samples", c.safety.outer_samples);
  c.safety.inner_samples = j.value("inner_samples", c.safety.inner_samples);
  c.safety.step = c.step;
  if (j.contains("decision_window")) {
    c.window.horizon = j["decision_window"].value("horizon", c.window.horizon);
    c.window.probe_interval = j["decision_window"].value("probe_interval", c.window.probe_interval);
  }
  if (j.contains("trigger")) {
    const auto& t = j["trigger"];
    c.trigger.threshold = t.value("threshold", c.trigger.threshold);
    c.trigger.window = t.value("window", c.trigger.window);
    c.trigger.probe_interval = t.value("probe_interval", c.trigger.probe_interval);
    c.trigger.samples = t.value("samples", c.trigger.samples);
  }
  if (j.contains("question")) {
    const auto& q = j["question"];
    c.question.question = q.value("text", c.question.question);
    c.question.positive = q.value("positive", c.question.positive);
    c.question.negative = q.value("negative", c.question.negative);
    c.question.allow_waypoint = q.value("allow_waypoint", c.question.allow_waypoint);
    c.question.brake_deceleration = q.value("brake_deceleration", c.question.brake_deceleration);
  }
  c.trials = j.value("trials", c.trials);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.validate();
  return c;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Short stable digest of every config field.
inline std::string config_digest(const ScenarioConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return std::string(buf, 8);
}

// ---------------------------------------------------------------------------
// Geometry

/// Ego plan plus the obstacle lane and the point where the two conflict.
struct ScenarioGeometry {
  EgoPlan plan;
  Vec2 lane_origin;      // a point on the obstacle lane centerline
  double lane_heading;   // obstacle travel direction
  Vec2 conflict_point;   // on the obstacle lane
  double conflict_time;  // reference time the ego footprint first enters the lane
  double maneuver_start_arc;
};

namespace detail {

inline Path scenario_path(const ScenarioConfig& c, double speed) {
  const double maneuver = speed * c.maneuver_duration;
  const double post = speed * c.post_duration + 60.0;
  PathBuilder b(Pose2(0.0, 0.0, 0.0));
  b.straight(c.approach_distance);
  switch (c.kind) {
    case ScenarioKind::kMerge: b.lane_change(maneuver, c.lane_width); break;
    case ScenarioKind::kRightTurn: b.arc(maneuver, -(kPi / 2.0) / maneuver); break;
    case ScenarioKind::kLeftTurn: b.arc(maneuver, (kPi / 2.0) / maneuver); break;
  }
  b.straight(post);
  return b.build();
}

inline double lateral_extent_overlap(const Footprint& f, Vec2 origin, double heading, double hw) {
  const Vec2 n{-std::sin(heading), std::cos(heading)};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Vec2& p : f.corners()) {
    const double d = dot(p - origin, n);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return std::min(hi, hw) - std::max(lo, -hw);
}

}  // namespace detail

inline ScenarioGeometry build_geometry(const ScenarioConfig& c, double speed) {
  ScenarioGeometry g;
  g.plan.path = detail::scenario_path(c, speed);
  g.plan.reference = generate_reference(g.plan.path, speed, c.reference_duration(), c.step,
                                        c.horizon_steps, 2.0);
  g.plan.extents = c.ego_extents;
  g.plan.horizon_steps = c.horizon_steps;
  g.maneuver_start_arc = c.approach_distance;
  const double radius = speed * c.maneuver_duration / (kPi / 2.0);
  switch (c.kind) {
    case ScenarioKind::kMerge:
    case ScenarioKind::kLeftTurn:
      g.lane_origin = {0.0, c.lane_width};
      g.lane_heading = kPi;
      break;
    case ScenarioKind::kRightTurn:
      g.lane_origin = {c.approach_distance + radius - c.lane_width, 0.0};
      g.lane_heading = -kPi / 2.0;
      break;
  }
  const Vec2 u{std::cos(g.lane_heading), std::sin(g.lane_heading)};
  g.conflict_time = -1.0;
  for (const auto& s : g.plan.reference.samples()) {
    const Footprint f = c.ego_extents.at(s.pose);
    if (detail::lateral_extent_overlap(f, g.lane_origin, g.lane_heading,
                                       c.obstacle_extents.half_width) >= 0.0) {
      g.conflict_time = s.time;
      g.conflict_point = g.lane_origin + dot(s.pose.position() - g.lane_origin, u) * u;
      break;
    }
  }
  if (g.conflict_time < 0.0) throw std::logic_error("build_geometry: reference never meets the lane");
  return g;
}

/// Reference trajectories are cached per geometry.
inline std::shared_ptr<const ScenarioGeometry> cached_geometry(const ScenarioConfig& c, double speed) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const ScenarioGeometry>> cache;
  const Json key = {to_string(c.kind),   c.approach_distance, c.straight_duration,
                    c.maneuver_duration, c.post_duration,     c.lane_width,
                    c.step,              c.horizon_steps,     detail::extents_json(c.ego_extents),
                    detail::extents_json(c.obstacle_extents), speed};
  const std::string k = key.dump();
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(k); it != cache.end()) return it->second;
  }
  auto g = std::make_shared<const ScenarioGeometry>(build_geometry(c, speed));
  std::lock_guard<std::mutex> lock(mu);
  return cache.emplace(k, std::move(g)).first->second;
}

/// Ground-truth obstacle: constant speed along its lane.
struct ObstacleTruth {
  int id = 1;
  Vec2 conflict_point;
  double heading = 0.0;
  double speed = 0.0;
  double arrival_time = 0.0;  // at the conflict point
  double visible_from = 0.0;
  Extents extents;

  Pose2 pose_at(double t) const {
    const double back = speed * (arrival_time - t);
    return Pose2(conflict_point.x - back * std::cos(heading), conflict_point.y - back * std::sin(heading),
                 heading);
  }
  Vec2 velocity() const { return {speed * std::cos(heading), speed * std::sin(heading)}; }
};

struct Scene {
  std::shared_ptr<const ScenarioGeometry> geometry;
  std::optional<ObstacleTruth> obstacle;
  double ego_speed = 0.0;
  std::uint64_t seed = 0;
};

inline Scene build_scenario(const ScenarioConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(derive_seed(seed, {0}));
  Scene s;
  s.seed = seed;
  s.ego_speed = c.ego_speed.draw(rng);
  s.geometry = cached_geometry(c, s.ego_speed);
  const double u = c.obstacle_speed.draw(rng);
  const double jitter = c.spawn_jitter > 0.0 ? rng.uniform(-c.spawn_jitter, c.spawn_jitter) : 0.0;
  if (c.obstacle_enabled) {
    ObstacleTruth o;
    o.conflict_point = s.geometry->conflict_point;
    o.heading = s.geometry->lane_heading;
    o.speed = u;
    o.arrival_time = s.geometry->conflict_time + (c.arrival_offset + jitter) / u;
    o.visible_from = std::max(0.0, o.arrival_time - c.spawn_distance / u);
    o.extents = c.obstacle_extents;
    s.obstacle = o;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Trials

struct DecisionRecord {
  std::uint64_t query_id = 0;
  double issued_at = 0.0;
  double latency = 0.0;
  double apply_at = 0.0;
  std::string option;
  double perceived = 0.0;
  bool applied = false;
  std::string action;
};

struct TrialResult {
  std::uint64_t seed = 0;
  bool collided = false;
  double collision_time = -1.0;
  double min_clearance = std::numeric_limits<double>::infinity();
  bool braked = false;
  double final_time = 0.0;
  std::vector<DecisionRecord> decisions;
  std::vector<Pose2> ego_log;                   // every step
  std::vector<std::optional<Pose2>> obstacle_log;  // every step, empty without obstacle
  double wall_seconds = 0.0;
};

/// Per-trial random streams, shared by both policies so batches pair.
struct TrialStreams {
  static std::uint64_t observation(std::uint64_t s) { return derive_seed(s, {1}); }
  static std::uint64_t latency(std::uint64_t s) { return derive_seed(s, {2}); }
  static std::uint64_t decision(std::uint64_t s, std::int64_t k) {
    return derive_seed(s, {3, static_cast<std::uint64_t>(k)});
  }
  static std::uint64_t trigger(std::uint64_t s, std::int64_t k) {
    return derive_seed(s, {4, static_cast<std::uint64_t>(k)});
  }
  static std::uint64_t trace(std::uint64_t s, std::int64_t k) {
    return derive_seed(s, {5, static_cast<std::uint64_t>(k)});
  }
};

inline Pose2 observe(const ObstacleTruth& o, double t, const Vec3& sigma, Rng& rng) {
  const Pose2 p = o.pose_at(t);
  const double nx = rng.normal(), ny = rng.normal(), nt = rng.normal();
  return Pose2(p.x + sigma(0) * nx, p.y + sigma(1) * ny, p.theta + sigma(2) * nt);
}

/// Step-by-step simulation shared by batch trials, traces and live sessions.
/// The owner drives it: step() advances perception, applies due decisions
/// and returns whether a query should open; answers come back via submit().
class TrialSim {
 public:
  TrialSim(const ScenarioConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), scene_(build_scenario(cfg, seed)), queue_(cfg.step),
        tracker_(cfg.ekf), obs_rng_(TrialStreams::observation(seed)),
        lat_rng_(TrialStreams::latency(seed)) {
    ego_ = start_motion(plan());
    result_.seed = seed;
    steps_ = static_cast<std::int64_t>(std::llround(cfg.time_cap / cfg.step));
  }

  const EgoPlan& plan() const { return scene_.geometry->plan; }
  const Scene& scene() const { return scene_; }
  const ScenarioConfig& config() const { return cfg_; }
  const EgoMotion& ego() const { return ego_; }
  std::int64_t step_index() const { return k_; }
  double time() const { return static_cast<double>(k_) * cfg_.step; }
  bool finished() const { return done_; }
  bool query_open() const { return open_.has_value(); }
  bool awaiting_answer() const { return open_ && !open_->answered; }
  const TrialResult& result() const { return result_; }
  TrialResult take_result() { return std::move(result_); }

  std::optional<TrackedObstacle> tracked() const {
    if (!scene_.obstacle || !tracker_.initialized()) return std::nullopt;
    return TrackedObstacle{scene_.obstacle->id, tracker_.belief(),
                           MotionModel{tracker_.velocity(), cfg_.process_noise},
                           scene_.obstacle->extents};
  }

  SceneView view() const { return {&plan(), ego_, tracked(), k_}; }

  std::optional<Pose2> obstacle_truth() const {
    if (!scene_.obstacle) return std::nullopt;
    return scene_.obstacle->pose_at(time());
  }

  /// Perception, collision check and decision application at the current
  /// step. Returns true when the decision layer wants to open a query.
  bool sense() {
    if (done_) return false;
    const double t = time();
    result_.ego_log.push_back(ego_.state.pose);
    if (scene_.obstacle) {
      const ObstacleTruth& o = *scene_.obstacle;
      const Pose2 truth = o.pose_at(t);
      result_.obstacle_log.push_back(truth);
      const Footprint ef = plan().extents.at(ego_.state.pose);
      const Footprint of = o.extents.at(truth);
      result_.min_clearance = std::min(result_.min_clearance, std::max(0.0, rect_separation(ef, of)));
      if (rect_intersects(ef, of) && !result_.collided) {
        result_.collided = true;
        result_.collision_time = t;
        if (stop_on_collision_) {
          finish();
          return false;
        }
      }
      if (t >= o.visible_from - 1e-9) {
        const Pose2 z = observe(o, t, cfg_.ekf.observation_sigma, obs_rng_);
        if (!tracker_.initialized()) {
          tracker_.initialize(ObstacleState{o.id, z, {0.0, 0.0}, o.extents}, t);
        } else {
          tracker_.predict(cfg_.step);
          tracker_.update(z);
        }
      }
    } else {
      result_.obstacle_log.push_back(std::nullopt);
    }
    apply_due();
    if (!cfg_.decisions_enabled || open_ || ego_.mode != EgoMotion::Mode::kReference) return false;
    if (!tracked()) return false;
    TriggerConfig trig = cfg_.trigger;
    trig.window += cfg_.latency.expected();
    return should_trigger(view(), trig, TrialStreams::trigger(scene_.seed, k_));
  }

  VisualQuery open_query(std::optional<RiskGrid> licom = std::nullopt) {
    if (open_) throw std::logic_error("open_query: a query is already open");
    VisualQuery q = generate_query(view(), cfg_.question, next_id_++, std::move(licom));
    open_ = Open{q, false};
    return q;
  }

  /// Answer to the open query; the decision takes effect after `latency`
  /// seconds of simulated time counted from the issue time.
  PendingDecision submit(const OperatorAnswer& answer, double latency, double perceived = 0.0) {
    if (!open_ || open_->answered || answer.query_id != open_->query.id) {
      throw std::invalid_argument("submit: answer does not match the open query");
    }
    const DecisionAction action = parse_answer(answer, open_->query, cfg_.question);
    open_->answered = true;
    const PendingDecision d = queue_.enqueue(action, open_->query.issue_time, latency, answer.query_id);
    DecisionRecord rec;
    rec.query_id = answer.query_id;
    rec.issued_at = open_->query.issue_time;
    rec.latency = latency;
    rec.apply_at = d.apply_at();
    rec.option = answer.option.value_or("waypoint");
    rec.perceived = perceived;
    rec.action = to_string(action.kind);
    result_.decisions.push_back(rec);
    apply_due();
    return d;
  }

  /// Simulated operator answer for the open query.
  void answer_simulated() {
    const double tau = draw_latency(cfg_.latency, lat_rng_);
    const OperatorModel model{cfg_.safety, cfg_.window};
    const OperatorVerdict v = simulated_operator(open_->query, cfg_.question, cfg_.policy, view(), tau,
                                                 model, TrialStreams::decision(scene_.seed, k_));
    submit(v.answer, tau, v.perceived.value);
  }

  /// Draws the simulated network component of the decision latency.
  double draw_network_delay() { return draw_component(cfg_.latency.network, lat_rng_); }

  /// The open query, if any.
  std::optional<VisualQuery> current_query() const {
    if (!open_) return std::nullopt;
    return open_->query;
  }

  /// Advances the ego and the clock by one step.
  void advance_step() {
    if (done_) return;
    if (open_ && ego_.mode != EgoMotion::Mode::kReference) {
      throw std::logic_error("decision side effect observed before its apply time");
    }
    ego_ = advance(plan(), ego_);
    ++k_;
    if (k_ > steps_) finish();
  }

  /// Keeps simulating through a collision (risk traces only).
  void set_stop_on_collision(bool stop) { stop_on_collision_ = stop; }

  /// Decisions applied so far, in order: (query id, apply step).
  const std::vector<std::pair<std::uint64_t, std::int64_t>>& applied() const { return applied_; }

 private:
  struct Open {
    VisualQuery query;
    bool answered;
  };

  void apply_due() {
    for (const PendingDecision& d : queue_.poll_due(time())) {
      const Feasibility f = validate_feasibility(d.action, plan(), ego_.state);
      for (auto& rec : result_.decisions) {
        if (rec.query_id == d.id) rec.applied = f.accepted();
      }
      applied_.emplace_back(d.id, k_);
      if (f.accepted() && d.action.kind != DecisionAction::Kind::kProceed) {
        ego_ = apply_action(plan(), ego_, d.action);
        result_.braked = true;
      }
      if (open_ && open_->query.id == d.id) open_.reset();
    }
  }

  void finish() {
    done_ = true;
    result_.final_time = time();
  }

  ScenarioConfig cfg_;
  Scene scene_;
  DecisionQueue queue_;
  EkfTracker tracker_;
  Rng obs_rng_;
  Rng lat_rng_;
  EgoMotion ego_;
  std::int64_t k_ = 0;
  std::int64_t steps_ = 0;
  bool done_ = false;
  bool stop_on_collision_ = true;
  std::optional<Open> open_;
  std::uint64_t next_id_ = 1;
  TrialResult result_;
  std::vector<std::pair<std::uint64_t, std::int64_t>> applied_;
};

inline TrialResult run_trial(const ScenarioConfig& cfg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  TrialSim sim(cfg, seed);
  while (!sim.finished()) {
    if (sim.sense()) {
      sim.open_query();
      sim.answer_simulated();
    }
    sim.advance_step();
  }
  TrialResult r = sim.take_result();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Offline re-check of the collision flag from the logged poses.
inline bool replay_collision(const TrialResult& r, const Extents& ego, const Extents& obstacle) {
  for (std::size_t i = 0; i < r.ego_log.size() && i < r.obstacle_log.size(); ++i) {
    if (r.obstacle_log[i] && rect_intersects(ego.at(r.ego_log[i]), obstacle.at(*r.obstacle_log[i]))) {
      return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Batches

inline std::uint64_t trial_seed(std::uint64_t master, int index) {
  return derive_seed(master, {static_cast<std::uint64_t>(index)});
}

struct BatchReport {
  std::string digest;
  ScenarioKind kind = ScenarioKind::kMerge;
  Policy policy = Policy::kLavqa;
  double latency = 0.0;  // expected total, seconds
  int trials = 0;
  int collisions = 0;
  std::vector<TrialResult> results;
  double wall_seconds = 0.0;

  double collision_rate() const { return trials > 0 ? static_cast<double>(collisions) / trials : 0.0; }
};

/// Runs `count` jobs over a worker pool; results are keyed by index.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline BatchReport run_batch(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  BatchReport rep;
  rep.digest = config_digest(cfg);
  rep.kind = cfg.kind;
  rep.policy = cfg.policy;
  rep.latency = cfg.latency.expected();
  rep.trials = cfg.trials;
  rep.results.resize(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, cfg.threads,
               [&](int i) { rep.results[i] = run_trial(cfg, trial_seed(cfg.master_seed, i)); });
  for (const auto& r : rep.results) rep.collisions += r.collided ? 1 : 0;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

/// "8.98x", or ">=Nx" when the latency-aware batch had no collisions.
inline std::string reduction_ratio(const BatchReport& baseline, const BatchReport& lavqa) {
  char buf[64];
  if (lavqa.collisions == 0) {
    std::snprintf(buf, sizeof buf, ">=%dx", baseline.collisions);
  } else {
    std::snprintf(buf, sizeof buf, "%.2fx", baseline.collision_rate() / lavqa.collision_rate());
  }
  return buf;
}

inline double reduction_value(const BatchReport& baseline, const BatchReport& lavqa) {
  if (lavqa.collisions == 0) {
    return baseline.collisions > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  return baseline.collision_rate() / lavqa.collision_rate();
}

/// Per-trial JSON without wall-clock fields, so reruns compare bit-exactly.
inline Json to_json(const BatchReport& r) {
  Json trials = Json::array();
  for (const auto& t : r.results) {
    Json decisions = Json::array();
    for (const auto& d : t.decisions) {
      decisions.push_back({{"id", d.query_id},
                           {"issued_at", d.issued_at},
                           {"latency", d.latency},
                           {"apply_at", d.apply_at},
                           {"option", d.option},
                           {"perceived", d.perceived},
                           {"applied", d.applied}});
    }
    trials.push_back({{"seed", t.seed},
                      {"collided", t.collided},
                      {"collision_time", t.collision_time},
                      {"min_clearance", t.min_clearance},
                      {"braked", t.braked},
                      {"decisions", decisions}});
  }
  return {{"digest", r.digest},
          {"scenario", to_string(r.kind)},
          {"policy", to_string(r.policy)},
          {"latency_ms", std::llround(r.latency * 1000.0)},
          {"trials", r.trials},
          {"collisions", r.collisions},
          {"collision_rate", r.collision_rate()},
          {"collision_rate_exact", std::to_string(r.collisions) + "/" + std::to_string(r.trials)},
          {"results", trials}};
}

/// One row per (latency, method).
struct ComparisonRow {
  double latency = 0.0;
  BatchReport baseline;
  BatchReport lavqa;
};

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << "scenario,latency_ms,method,collisions,trials,collision_rate,reduction_ratio\n";
  for (const auto& row : rows) {
    for (const BatchReport* r : {&row.baseline, &row.lavqa}) {
      os << to_string(r->kind) << ',' << std::llround(row.latency * 1000.0) << ','
         << to_string(r->policy) << ',' << r->collisions << ',' << r->trials << ','
         << r->collision_rate() << ','
         << (r->policy == Policy::kLavqa ? reduction_ratio(row.baseline, row.lavqa) : "") << '\n';
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Perceived-risk traces

struct RiskTracePoint {
  double time = 0.0;
  double ground_truth = 0.0;              // LICP at t with tau = 0
  std::vector<double> baseline;           // per latency: risk perceived for a decision acting at t
  std::vector<double> lavqa;              // per latency: LICP from t - tau looking at t
};

struct RiskTrace {
  std::vector<double> latencies;
  std::vector<RiskTracePoint> points;
};

/// Ego follows the reference (no decisions). At each step the instantaneous
/// risk is recorded. A baseline operator with latency tau perceives at the
/// moment its decision acts the risk of tau ago; a latency-aware operator
/// perceives the LICP predicted tau ahead from that same moment.
inline RiskTrace perceived_risk_trace(ScenarioConfig cfg, std::uint64_t seed,
                                      const std::vector<double>& latencies) {
  cfg.decisions_enabled = false;
  TrialSim sim(cfg, seed);
  sim.set_stop_on_collision(false);
  RiskWindow instant = cfg.window;
  instant.horizon = 0.0;
  const auto& plan = sim.plan();

  std::vector<double> truth;
  std::vector<std::vector<double>> ahead(latencies.size());
  std::vector<double> times;
  while (!sim.finished()) {
    sim.sense();
    if (sim.finished()) break;
    const std::int64_t k = sim.step_index();
    const auto obs = sim.tracked();
    const std::uint64_t s = TrialStreams::trace(seed, k);
    auto eval = [&](double delay) {
      if (!obs) return 0.0;
      return decision_risk(plan, sim.ego(), obs->belief, obs->model, obs->extents, delay, instant,
                           cfg.safety, s)
          .value;
    };
    times.push_back(sim.time());
    truth.push_back(eval(0.0));
    for (std::size_t i = 0; i < latencies.size(); ++i) ahead[i].push_back(eval(latencies[i]));
    sim.advance_step();
  }

  RiskTrace out;
  out.latencies = latencies;
  for (std::size_t k = 0; k < times.size(); ++k) {
    RiskTracePoint p;
    p.time = times[k];
    p.ground_truth = truth[k];
    for (std::size_t i = 0; i < latencies.size(); ++i) {
      const auto lag = static_cast<std::int64_t>(std::llround(latencies[i] / cfg.step));
      const std::int64_t src = static_cast<std::int64_t>(k) - lag;
      p.baseline.push_back(src >= 0 ? truth[static_cast<std::size_t>(src)] : 0.0);
      p.lavqa.push_back(src >= 0 ? ahead[i][static_cast<std::size_t>(src)] : 0.0);
    }
    out.points.push_back(std::move(p));
  }
  return out;
}

inline std::string trace_csv(const RiskTrace& trace) {
  std::ostringstream os;
  os << "t,ground_truth";
  for (double l : trace.latencies) os << ",baseline_" << std::llround(l * 1000.0) << "ms";
  for (double l : trace.latencies) os << ",lavqa_" << std::llround(l * 1000.0) << "ms";
  os << '\n';
  os.precision(6);
  for (const auto& p : trace.points) {
    os << std::fixed << p.time << ',' << p.ground_truth;
    for (double v : p.baseline) os << ',' << v;
    for (double v : p.lavqa) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

/// Time of the first sample at or above lambda, or a negative value.
inline double first_crossing(const std::vector<double>& times, const std::vector<double>& values,
                             double lambda) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= lambda) return times[i];
  }
  return -1.0;
}

// ---------------------------------------------------------------------------
// Risk maps

/// LICOM grids centered on the ego, one per latency, for the current step.
inline std::vector<RiskGrid> licom_sweep(const TrialSim& sim, const std::vector<double>& taus,
                                         double size = 80.0, double resolution = 0.5) {
  const auto tracked = sim.tracked();
  const auto& cfg = sim.config();
  const GridSpec spec = GridSpec::centered(sim.ego().state.pose.position(), size, resolution);
  std::optional<LicomObstacle> obs;
  if (tracked) obs = LicomObstacle{tracked->belief, tracked->model, tracked->extents};
  const LicomEgo ego{sim.plan().extents, sim.ego().state.pose.theta, &sim.plan().path};
  const std::uint64_t seed =
      derive_seed(sim.scene().seed, {6, static_cast<std::uint64_t>(sim.step_index())});
  std::vector<RiskGrid> grids;
  for (double tau : taus) grids.push_back(compute_licom(spec, ego, obs, tau, cfg.safety, seed, {}, sim.time()));
  return grids;
}

/// Follows the reference without decisions until the tracked obstacle is
/// `margin` meters inside the ego-centered grid, then returns the sweep
/// there. Empty when that never happens.
inline std::vector<RiskGrid> licom_sweep_on_approach(ScenarioConfig cfg, std::uint64_t seed,
                                                     const std::vector<double>& taus,
                                                     double size = 80.0, double resolution = 0.5,
                                                     double margin = 10.0) {
  cfg.decisions_enabled = false;
  TrialSim sim(cfg, seed);
  while (!sim.finished()) {
    sim.sense();
    if (const auto tr = sim.tracked()) {
      const Vec2 d = tr->belief.modes.front().mean.position() - sim.ego().state.pose.position();
      if (std::max(std::abs(d.x), std::abs(d.y)) <= 0.5 * size - margin) {
        return licom_sweep(sim, taus, size, resolution);
      }
    }
    sim.advance_step();
  }
  return {};
}

}  // namespace latrisk
