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

#include <cmath>
#include <stdexcept>
#include <string>

#include "latrisk/geometry.hpp"

namespace latrisk {

inline constexpr double kDefaultBrakeDecel = 6.0;  // m/s^2

/// What the ego does once an operator decision takes effect.
struct DecisionAction {
  enum class Kind { kProceed, kBrake, kWaypoint };
  Kind kind = Kind::kProceed;
  double deceleration = kDefaultBrakeDecel;  // brake only
  Pose2 waypoint;                            // waypoint only

  static DecisionAction proceed() { return {}; }
  static DecisionAction brake(double decel = kDefaultBrakeDecel) {
    return {Kind::kBrake, decel, {}};
  }
  static DecisionAction stop_at(const Pose2& wp) { return {Kind::kWaypoint, 0.0, wp}; }

  void validate() const {
    if (kind == Kind::kBrake && !(deceleration > 0.0)) {
      throw std::invalid_argument("DecisionAction: brake deceleration must be > 0");
    }
    if (kind == Kind::kWaypoint && !waypoint.finite()) {
      throw std::invalid_argument("DecisionAction: non-finite waypoint");
    }
  }
};

inline std::string to_string(DecisionAction::Kind k) {
  switch (k) {
    case DecisionAction::Kind::kProceed: return "proceed";
    case DecisionAction::Kind::kBrake: return "brake";
    case DecisionAction::Kind::kWaypoint: return "waypoint";
  }
  return "unknown";
}

/// The ego's committed plan: a geometric path plus the reference trajectory
/// obtained by driving it without obstacles.
struct EgoPlan {
  Path path;
  Trajectory reference;
  Extents extents;
  int horizon_steps = 40;
  double min_lookahead = 2.0;

  double step() const { return reference.step(); }

  /// Pure-pursuit lookahead: the distance covered over the planning horizon.
  double lookahead(double speed) const {
    return std::max(min_lookahead, speed * horizon_steps * step());
  }

  /// Reference point at time t; past the end the ego keeps its final
  /// heading and speed.
  TrajectoryPoint reference_at(double t) const {
    const double t_end = reference.end_time();
    if (t <= t_end) return pose_on_trajectory(reference, std::max(t, reference.start_time()));
    const auto& last = reference.samples().back();
    const double d = (t - t_end) * last.speed;
    return {Pose2(last.pose.x + d * std::cos(last.pose.theta),
                  last.pose.y + d * std::sin(last.pose.theta), last.pose.theta),
            last.speed};
  }
};

/// Drives `path` at constant `speed` with the pure-pursuit controller and
/// records every step. This is the obstacle-free rollout.
inline Trajectory generate_reference(const Path& path, double speed, double duration, double step,
                                     int horizon_steps = 40, double min_lookahead = 2.0) {
  const int n = static_cast<int>(std::llround(duration / step));
  std::vector<TrajectorySample> samples;
  samples.reserve(static_cast<std::size_t>(n) + 1);
  EgoState st{path.pose_at(0.0), speed, 0.0};
  double arc = 0.0;
  samples.push_back({0.0, st.pose, speed, 0.0});
  for (int k = 1; k <= n; ++k) {
    const double la = std::max(min_lookahead, speed * horizon_steps * step);
    const double s_proj = path.project(st.pose.position());
    const double kappa = pursuit_curvature(path, st.pose, s_proj, la);
    const EgoState next = step_ego(st, ControlCommand::track(kappa), step);
    arc += norm(next.pose.position() - st.pose.position());
    st = next;
    st.time = k * step;
    samples.push_back({st.time, st.pose, st.speed, arc});
  }
  return Trajectory(std::move(samples), step);
}

/// Ego motion state inside a simulation: on the reference, or executing a
/// braking / stop-at-waypoint profile along the path.
struct EgoMotion {
  enum class Mode { kReference, kBraking };
  EgoState state;
  double arc = 0.0;
  Mode mode = Mode::kReference;
  double deceleration = 0.0;

  bool stopped() const { return mode == Mode::kBraking && state.speed <= 0.0; }
};

inline EgoMotion start_motion(const EgoPlan& plan) {
  const auto& s0 = plan.reference[0];
  return {EgoState{s0.pose, s0.speed, s0.time}, 0.0, EgoMotion::Mode::kReference, 0.0};
}

/// Required constant deceleration to stop at the waypoint's projection.
inline double stopping_deceleration(const EgoPlan& plan, const EgoMotion& m, const Pose2& wp) {
  const double ds = plan.path.project(wp.position()) - plan.path.project(m.state.pose.position());
  if (ds <= 0.0) return std::numeric_limits<double>::infinity();
  return m.state.speed * m.state.speed / (2.0 * ds);
}

/// Switches the motion to the given action at the current instant.
inline EgoMotion apply_action(const EgoPlan& plan, EgoMotion m, const DecisionAction& action) {
  switch (action.kind) {
    case DecisionAction::Kind::kProceed:
      break;
    case DecisionAction::Kind::kBrake:
      m.mode = EgoMotion::Mode::kBraking;
      m.deceleration = action.deceleration;
      break;
    case DecisionAction::Kind::kWaypoint: {
      m.mode = EgoMotion::Mode::kBraking;
      m.deceleration = std::max(1e-6, stopping_deceleration(plan, m, action.waypoint));
      break;
    }
  }
  return m;
}

/// Advances the ego by one simulation step.
inline EgoMotion advance(const EgoPlan& plan, EgoMotion m) {
  const double dt = plan.step();
  if (m.mode == EgoMotion::Mode::kReference) {
    const double t = static_cast<double>(std::llround(m.state.time / dt) + 1) * dt;
    const auto p = plan.reference_at(t);
    m.arc += norm(p.pose.position() - m.state.pose.position());
    m.state = {p.pose, p.speed, t};
    return m;
  }
  const double s_proj = plan.path.project(m.state.pose.position());
  const double kappa =
      pursuit_curvature(plan.path, m.state.pose, s_proj, plan.lookahead(m.state.speed));
  const EgoState next = step_ego(m.state, ControlCommand::brake(m.deceleration, kappa), dt);
  m.arc += norm(next.pose.position() - m.state.pose.position());
  m.state = next;
  m.state.time = static_cast<double>(std::llround(next.time / dt)) * dt;
  return m;
}

/// Ego pose `delay` seconds from now if `action` takes effect immediately
/// (proceed follows the reference; brake rolls out the deceleration).
inline Pose2 rollout_pose(const EgoPlan& plan, const EgoMotion& now, const DecisionAction& action,
                          double delay) {
  if (delay <= 0.0) return now.state.pose;
  if (now.mode == EgoMotion::Mode::kReference && action.kind == DecisionAction::Kind::kProceed) {
    return plan.reference_at(now.state.time + delay).pose;
  }
  EgoMotion m = apply_action(plan, now, action);
  const int n = static_cast<int>(std::ceil(delay / plan.step() - 1e-9));
  for (int i = 0; i < n && !(m.mode == EgoMotion::Mode::kBraking && m.state.speed <= 0.0); ++i) {
    m = advance(plan, m);
  }
  return m.state.pose;
}

}  // namespace latrisk
