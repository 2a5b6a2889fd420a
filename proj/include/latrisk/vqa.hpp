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

// Visual question answering layer: when to ask, what to ask, and how an
// answer becomes a control decision.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latrisk/collision.hpp"
#include "latrisk/licom.hpp"
#include "latrisk/licp.hpp"

namespace latrisk {

enum class ScenarioKind { kMerge, kRightTurn, kLeftTurn };

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kMerge: return "merge";
    case ScenarioKind::kRightTurn: return "right-turn";
    case ScenarioKind::kLeftTurn: return "left-turn";
  }
  return "unknown";
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "merge") return ScenarioKind::kMerge;
  if (s == "right-turn" || s == "right") return ScenarioKind::kRightTurn;
  if (s == "left-turn" || s == "left") return ScenarioKind::kLeftTurn;
  throw std::invalid_argument("unknown scenario kind: " + s);
}

/// A question with one option that keeps the maneuver and one that yields.
struct DecisionTemplate {
  std::string question;
  std::string positive;  // proceed on the reference
  std::string negative;  // brake to a stop
  bool allow_waypoint = false;
  double brake_deceleration = kDefaultBrakeDecel;

  std::vector<std::string> options() const { return {positive, negative}; }
};

inline DecisionTemplate default_template(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kMerge:
      return {"On-ramp gap selection: should I merge now?", "merge", "hold"};
    case ScenarioKind::kRightTurn:
      return {"Can I turn right before cross-traffic?", "turn", "yield"};
    case ScenarioKind::kLeftTurn:
      return {"Is the current left-turn gap sufficient to cross?", "go", "wait"};
  }
  throw std::invalid_argument("default_template: unknown kind");
}

struct VisualQuery {
  std::uint64_t id = 0;
  double issue_time = 0.0;
  std::string text;
  std::vector<std::string> options;
  std::int64_t frame_index = 0;  // scene snapshot the question refers to
  std::optional<RiskGrid> licom;
};

struct OperatorAnswer {
  std::uint64_t query_id = 0;
  std::optional<std::string> option;
  std::optional<Pose2> waypoint;
  double answered_at = 0.0;
};

/// An obstacle as the ego perceives it.
struct TrackedObstacle {
  int id = 0;
  MixtureBelief belief;
  MotionModel model;
  Extents extents;
};

/// What the decision layer sees at one instant.
struct SceneView {
  const EgoPlan* plan = nullptr;
  EgoMotion ego;
  std::optional<TrackedObstacle> obstacle;
  std::int64_t frame_index = 0;
};

// ---------------------------------------------------------------------------
// Triggering

struct TriggerConfig {
  double threshold = 0.15;
  double window = 2.5;          // seconds of reference ahead to probe
  double probe_interval = 0.1;  // seconds between probes
  std::int64_t samples = 200;   // flat Monte Carlo draws per probe
};

/// Instantaneous collision probability of the reference pose at t + h,
/// h = 0, dt, 2 dt, ... up to the window, against the propagated belief.
/// True at the first probe at or above the threshold.
inline bool should_trigger(const SceneView& scene, const TriggerConfig& cfg, std::uint64_t seed) {
  if (!scene.obstacle || scene.plan == nullptr) return false;
  const auto& obs = *scene.obstacle;
  const int probes = static_cast<int>(std::floor(cfg.window / cfg.probe_interval + 1e-9)) + 1;
  for (int i = 0; i < probes; ++i) {
    const double h = i * cfg.probe_interval;
    const Footprint fp =
        scene.plan->extents.at(rollout_pose(*scene.plan, scene.ego, DecisionAction::proceed(), h));
    const MixtureBelief b = propagate(obs.belief, h, obs.model);
    if (!within_reach(fp, b, obs.extents, 6.0)) continue;
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    if (collision_prob_mc(fp, b, obs.extents, cfg.samples, rng).value >= cfg.threshold) return true;
  }
  return false;
}

inline VisualQuery generate_query(const SceneView& scene, const DecisionTemplate& tpl,
                                  std::uint64_t id, std::optional<RiskGrid> licom = std::nullopt) {
  return {id, scene.ego.state.time, tpl.question, tpl.options(), scene.frame_index,
          std::move(licom)};
}

/// Maps an answer to the action the ego executes.
inline DecisionAction parse_answer(const OperatorAnswer& answer, const VisualQuery& query,
                                   const DecisionTemplate& tpl) {
  if (answer.query_id != query.id) throw std::invalid_argument("parse_answer: query id mismatch");
  if (answer.option.has_value() == answer.waypoint.has_value()) {
    throw std::invalid_argument("parse_answer: exactly one of option or waypoint is required");
  }
  if (answer.waypoint) {
    if (!tpl.allow_waypoint) throw std::invalid_argument("parse_answer: query takes options only");
    return DecisionAction::stop_at(*answer.waypoint);
  }
  const std::string& opt = *answer.option;
  if (opt == tpl.positive) return DecisionAction::proceed();
  if (opt == tpl.negative) return DecisionAction::brake(tpl.brake_deceleration);
  throw std::invalid_argument("parse_answer: unknown option '" + opt + "'");
}

// ---------------------------------------------------------------------------
// Feasibility

inline constexpr double kMaxDeceleration = 9.0;  // m/s^2
inline constexpr double kMaxCurvature = 0.2;     // 1/m

struct Feasibility {
  enum class Verdict { kAccepted, kOutdated, kInfeasible };
  Verdict verdict = Verdict::kAccepted;
  std::string reason;

  bool accepted() const { return verdict == Verdict::kAccepted; }
};

inline Feasibility validate_feasibility(const DecisionAction& action, const EgoPlan& plan,
                                        const EgoState& state) {
  if (action.kind != DecisionAction::Kind::kWaypoint) return {};
  if (!action.waypoint.finite()) return {Feasibility::Verdict::kInfeasible, "non-finite waypoint"};
  const double s_ego = plan.path.project(state.pose.position());
  const double s_wp = plan.path.project(action.waypoint.position());
  if (s_wp <= s_ego) return {Feasibility::Verdict::kOutdated, "waypoint at or behind the ego"};
  const double decel = state.speed * state.speed / (2.0 * (s_wp - s_ego));
  if (decel > kMaxDeceleration) {
    return {Feasibility::Verdict::kInfeasible, "deceleration above limit"};
  }
  const Vec2 d = action.waypoint.position() - state.pose.position();
  const double dist = norm(d);
  const double alpha = wrap_angle(std::atan2(d.y, d.x) - state.pose.theta);
  const double kappa = dist > 0.0 ? 2.0 * std::sin(alpha) / dist : 0.0;
  if (std::abs(kappa) > kMaxCurvature) {
    return {Feasibility::Verdict::kInfeasible, "curvature above limit"};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Simulated best-effort operator

enum class Policy { kBaseline, kLavqa };

inline std::string to_string(Policy p) { return p == Policy::kBaseline ? "baseline" : "lavqa"; }

inline Policy parse_policy(const std::string& s) {
  if (s == "baseline") return Policy::kBaseline;
  if (s == "lavqa") return Policy::kLavqa;
  throw std::invalid_argument("unknown policy: " + s);
}

struct OperatorModel {
  SafetyConfig safety;
  RiskWindow window;
};

struct OperatorVerdict {
  OperatorAnswer answer;
  WindowRisk perceived;
};

/// Perceived risk of keeping the maneuver. The baseline operator assumes
/// the decision acts now; the latency-aware operator looks from t + tau.
inline WindowRisk perceived_risk(const SceneView& scene, Policy policy, double tau,
                                 const OperatorModel& model, std::uint64_t seed,
                                 double stop_at = 2.0) {
  if (!scene.obstacle || scene.plan == nullptr) return {};
  const auto& obs = *scene.obstacle;
  const double delay = policy == Policy::kBaseline ? 0.0 : tau;
  return decision_risk(*scene.plan, scene.ego, obs.belief, obs.model, obs.extents, delay,
                       model.window, model.safety, seed, stop_at);
}

/// Answers negative iff the perceived risk reaches lambda.
inline OperatorVerdict simulated_operator(const VisualQuery& query, const DecisionTemplate& tpl,
                                          Policy policy, const SceneView& scene, double tau,
                                          const OperatorModel& model, std::uint64_t seed) {
  const WindowRisk r = perceived_risk(scene, policy, tau, model, seed, model.safety.lambda);
  const bool unsafe = !is_safe({r.value, r.std_error, 0, RiskMethod::kNested}, model.safety);
  OperatorAnswer a{query.id, unsafe ? tpl.negative : tpl.positive, std::nullopt, query.issue_time};
  return {a, r};
}

}  // namespace latrisk
