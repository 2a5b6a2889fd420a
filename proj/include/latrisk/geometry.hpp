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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latrisk {

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

/// Planar pose in SE(2). Heading is kept in (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_)
      : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  Vec2 position() const { return {x, y}; }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(theta);
  }
  friend bool operator==(const Pose2&, const Pose2&) = default;
};

/// Oriented rectangle occupied by a vehicle.
struct Footprint {
  Pose2 center;
  double half_length = 2.25;
  double half_width = 1.0;

  std::array<Vec2, 4> corners() const {
    const double c = std::cos(center.theta);
    const double s = std::sin(center.theta);
    const Vec2 ax{c * half_length, s * half_length};
    const Vec2 ay{-s * half_width, c * half_width};
    const Vec2 o = center.position();
    return {o + ax + ay, o - ax + ay, o - ax - ay, o + ax - ay};
  }

  /// Radius of the circle that contains the rectangle.
  double circumradius() const { return std::hypot(half_length, half_width); }

  bool valid() const {
    return center.finite() && half_width > 0.0 && half_length >= half_width;
  }
};

/// Rectangle extents without a pose; 4.5 m x 2.0 m sedan by default.
struct Extents {
  double half_length = 2.25;
  double half_width = 1.0;

  Footprint at(const Pose2& pose) const { return {pose, half_length, half_width}; }
  double circumradius() const { return std::hypot(half_length, half_width); }
  Extents scaled(double k) const { return {half_length * k, half_width * k}; }
};

namespace detail {

// Projected half-extent of a rectangle onto unit axis `n`.
inline double projected_radius(double c, double s, double hl, double hw, Vec2 n) {
  return hl * std::abs(c * n.x + s * n.y) + hw * std::abs(-s * n.x + c * n.y);
}

// Signed overlap along each of the four candidate axes; returns the minimum.
// Positive: the rectangles overlap on every axis by at least that much.
inline double min_axis_overlap(const Footprint& a, const Footprint& b) {
  const double ca = std::cos(a.center.theta), sa = std::sin(a.center.theta);
  const double cb = std::cos(b.center.theta), sb = std::sin(b.center.theta);
  const Vec2 d = b.center.position() - a.center.position();
  const std::array<Vec2, 4> axes{Vec2{ca, sa}, Vec2{-sa, ca}, Vec2{cb, sb}, Vec2{-sb, cb}};
  double best = std::numeric_limits<double>::infinity();
  for (const Vec2& n : axes) {
    const double ra = detail::projected_radius(ca, sa, a.half_length, a.half_width, n);
    const double rb = detail::projected_radius(cb, sb, b.half_length, b.half_width, n);
    best = std::min(best, ra + rb - std::abs(dot(d, n)));
  }
  return best;
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

}  // namespace detail

/// Separating-axis test. Touching rectangles count as intersecting.
inline bool rect_intersects(const Footprint& a, const Footprint& b) {
  return detail::min_axis_overlap(a, b) >= 0.0;
}

/// Signed separation: Euclidean gap when disjoint, minus the penetration
/// depth when overlapping.
inline double rect_separation(const Footprint& a, const Footprint& b) {
  const double overlap = detail::min_axis_overlap(a, b);
  if (overlap >= 0.0) return -overlap;
  const auto ca = a.corners();
  const auto cb = b.corners();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 a0 = ca[i], a1 = ca[(i + 1) % 4];
    const Vec2 b0 = cb[i], b1 = cb[(i + 1) % 4];
    for (std::size_t j = 0; j < 4; ++j) {
      best = std::min(best, detail::point_segment_distance(cb[j], a0, a1));
      best = std::min(best, detail::point_segment_distance(ca[j], b0, b1));
    }
  }
  return best;
}

/// Collision test against many obstacle poses sharing one footprint shape.
/// Precomputes the ego axes once.
class FootprintTester {
 public:
  FootprintTester(const Footprint& ego, const Extents& other)
      : ego_(ego),
        other_(other),
        c_(std::cos(ego.center.theta)),
        s_(std::sin(ego.center.theta)),
        reach_(ego.circumradius() + other.circumradius()) {}

  bool hits(double x, double y, double theta) const {
    const double dx = x - ego_.center.x;
    const double dy = y - ego_.center.y;
    if (dx * dx + dy * dy > reach_ * reach_) return false;
    const double cb = std::cos(theta), sb = std::sin(theta);
    const std::array<Vec2, 4> axes{Vec2{c_, s_}, Vec2{-s_, c_}, Vec2{cb, sb}, Vec2{-sb, cb}};
    for (const Vec2& n : axes) {
      const double ra = detail::projected_radius(c_, s_, ego_.half_length, ego_.half_width, n);
      const double rb = detail::projected_radius(cb, sb, other_.half_length, other_.half_width, n);
      if (std::abs(dx * n.x + dy * n.y) > ra + rb) return false;
    }
    return true;
  }

  bool hits(const Pose2& p) const { return hits(p.x, p.y, p.theta); }
  double reach() const { return reach_; }

 private:
  Footprint ego_;
  Extents other_;
  double c_, s_;
  double reach_;
};

// ---------------------------------------------------------------------------
// Ego kinematics

struct EgoState {
  Pose2 pose;
  double speed = 0.0;
  double time = 0.0;
};

struct ObstacleState {
  int id = 0;
  Pose2 pose;
  Vec2 velocity;
  Extents extents;
};

/// Curvature-tracking or braking command for the kinematic model.
struct ControlCommand {
  enum class Kind { kTrack, kBrake };
  Kind kind = Kind::kTrack;
  double curvature = 0.0;     // 1/m
  double acceleration = 0.0;  // m/s^2, tracking only
  double deceleration = 0.0;  // m/s^2 > 0, braking only

  static ControlCommand track(double curvature, double acceleration = 0.0) {
    return {Kind::kTrack, curvature, acceleration, 0.0};
  }
  static ControlCommand brake(double deceleration, double curvature = 0.0) {
    return {Kind::kBrake, curvature, 0.0, deceleration};
  }
};

/// One explicit integration step of the kinematic unicycle with curvature
/// input. Speed is clamped at zero, and a step that reaches rest travels only
/// the exact stopping distance.
inline EgoState step_ego(const EgoState& state, const ControlCommand& cmd, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step_ego: dt must be > 0");
  if (!std::isfinite(cmd.curvature) || !std::isfinite(cmd.acceleration) ||
      !std::isfinite(cmd.deceleration)) {
    throw std::invalid_argument("step_ego: non-finite command");
  }
  double accel = cmd.kind == ControlCommand::Kind::kBrake ? -std::abs(cmd.deceleration)
                                                          : cmd.acceleration;
  const double v0 = state.speed;
  double v1 = v0 + accel * dt;
  double dist = 0.0;
  if (v1 < 0.0) {
    // Comes to rest inside the step.
    dist = accel < 0.0 ? v0 * v0 / (-2.0 * accel) : 0.0;
    v1 = 0.0;
  } else {
    dist = 0.5 * (v0 + v1) * dt;
  }

  EgoState next = state;
  next.speed = v1;
  next.time = state.time + dt;
  if (dist == 0.0) return next;

  const double dtheta = cmd.curvature * dist;
  const double th = state.pose.theta;
  double x = state.pose.x, y = state.pose.y;
  if (std::abs(dtheta) < 1e-9) {
    x += dist * std::cos(th + 0.5 * dtheta);
    y += dist * std::sin(th + 0.5 * dtheta);
  } else {
    const double r = 1.0 / cmd.curvature;
    x += r * (std::sin(th + dtheta) - std::sin(th));
    y += r * (-std::cos(th + dtheta) + std::cos(th));
  }
  next.pose = Pose2(x, y, th + dtheta);
  return next;
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectorySample {
  double time = 0.0;
  Pose2 pose;
  double speed = 0.0;
  double arc_length = 0.0;
};

/// Uniformly sampled ego trajectory.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<TrajectorySample> samples, double step)
      : samples_(std::move(samples)), step_(step) {
    if (samples_.empty()) throw std::invalid_argument("Trajectory: no samples");
    if (!(step_ > 0.0)) throw std::invalid_argument("Trajectory: step must be > 0");
    for (std::size_t i = 1; i < samples_.size(); ++i) {
      if (!(samples_[i].time > samples_[i - 1].time)) {
        throw std::invalid_argument("Trajectory: times must increase");
      }
    }
  }

  const std::vector<TrajectorySample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  double step() const { return step_; }
  double start_time() const { return samples_.front().time; }
  double end_time() const { return samples_.back().time; }
  const TrajectorySample& operator[](std::size_t i) const { return samples_[i]; }
  bool empty() const { return samples_.empty(); }

  /// Sample nearest to arc length `s` (binary search on arc length).
  std::size_t index_at_arc_length(double s) const {
    auto it = std::lower_bound(samples_.begin(), samples_.end(), s,
                               [](const TrajectorySample& a, double v) { return a.arc_length < v; });
    if (it == samples_.end()) return samples_.size() - 1;
    return static_cast<std::size_t>(it - samples_.begin());
  }

 private:
  std::vector<TrajectorySample> samples_;
  double step_ = 0.01;
};

struct TrajectoryPoint {
  Pose2 pose;
  double speed = 0.0;
};

/// Linear interpolation between bracketing samples; heading along the
/// shorter arc. Throws for times outside the trajectory.
inline TrajectoryPoint pose_on_trajectory(const Trajectory& traj, double t) {
  if (traj.empty()) throw std::out_of_range("pose_on_trajectory: empty trajectory");
  const double t0 = traj.start_time();
  const double t1 = traj.end_time();
  constexpr double kEps = 1e-9;
  if (!(t >= t0 - kEps && t <= t1 + kEps)) {
    throw std::out_of_range("pose_on_trajectory: t outside trajectory");
  }
  const auto& s = traj.samples();
  auto it = std::lower_bound(s.begin(), s.end(), t,
                             [](const TrajectorySample& a, double v) { return a.time < v; });
  if (it == s.end()) return {s.back().pose, s.back().speed};
  if (std::abs(it->time - t) <= kEps || it == s.begin()) return {it->pose, it->speed};
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double u = (t - a.time) / (b.time - a.time);
  const double dth = wrap_angle(b.pose.theta - a.pose.theta);
  return {Pose2(a.pose.x + u * (b.pose.x - a.pose.x), a.pose.y + u * (b.pose.y - a.pose.y),
                a.pose.theta + u * dth),
          a.speed + u * (b.speed - a.speed)};
}

// ---------------------------------------------------------------------------
// Geometric paths (lane centerlines)

/// Densely sampled centerline parameterized by arc length.
class Path {
 public:
  Path() = default;
  explicit Path(std::vector<Pose2> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw std::invalid_argument("Path: need >= 2 points");
    arc_.resize(points_.size(), 0.0);
    for (std::size_t i = 1; i < points_.size(); ++i) {
      arc_[i] = arc_[i - 1] + norm(points_[i].position() - points_[i - 1].position());
    }
  }

  double length() const { return arc_.back(); }
  const std::vector<Pose2>& points() const { return points_; }

  /// Pose at arc length s (clamped, linear between vertices).
  Pose2 pose_at(double s) const {
    if (s <= 0.0) return points_.front();
    if (s >= length()) {
      // Extend straight past the end.
      const Pose2& e = points_.back();
      const double over = s - length();
      return Pose2(e.x + over * std::cos(e.theta), e.y + over * std::sin(e.theta), e.theta);
    }
    auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - arc_.begin());
    const Pose2& a = points_[i - 1];
    const Pose2& b = points_[i];
    const double u = (s - arc_[i - 1]) / (arc_[i] - arc_[i - 1]);
    return Pose2(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y),
                 a.theta + u * wrap_angle(b.theta - a.theta));
  }

  /// Arc length of the closest point on the path to `p`.
  double project(Vec2 p) const {
    double best_d = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const Vec2 a = points_[i - 1].position(), b = points_[i].position();
      const Vec2 ab = b - a;
      const double len2 = dot(ab, ab);
      const double u = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
      const double d = norm(p - (a + u * ab));
      if (d < best_d) {
        best_d = d;
        best_s = arc_[i - 1] + u * (arc_[i] - arc_[i - 1]);
      }
    }
    return best_s;
  }

  /// Signed curvature at arc length s from the heading rate.
  double curvature_at(double s, double ds = 0.5) const {
    const double a = std::max(0.0, s - ds);
    const double b = std::min(length(), s + ds);
    if (b - a <= 0.0) return 0.0;
    return wrap_angle(pose_at(b).theta - pose_at(a).theta) / (b - a);
  }

 private:
  std::vector<Pose2> points_;
  std::vector<double> arc_;
};

/// Builds paths from straight segments and circular arcs.
class PathBuilder {
 public:
  PathBuilder(Pose2 start, double spacing = 0.05) : spacing_(spacing) { pts_.push_back(start); }

  PathBuilder& straight(double length) {
    const Pose2 p0 = pts_.back();
    const int n = std::max(1, static_cast<int>(std::ceil(length / spacing_)));
    for (int i = 1; i <= n; ++i) {
      const double d = length * i / n;
      pts_.emplace_back(p0.x + d * std::cos(p0.theta), p0.y + d * std::sin(p0.theta), p0.theta);
    }
    return *this;
  }

  /// Arc with signed curvature (positive turns left).
  PathBuilder& arc(double length, double curvature) {
    const Pose2 p0 = pts_.back();
    const int n = std::max(1, static_cast<int>(std::ceil(length / spacing_)));
    for (int i = 1; i <= n; ++i) {
      const double d = length * i / n;
      const double dth = curvature * d;
      const double r = 1.0 / curvature;
      pts_.emplace_back(p0.x + r * (std::sin(p0.theta + dth) - std::sin(p0.theta)),
                        p0.y + r * (-std::cos(p0.theta + dth) + std::cos(p0.theta)),
                        p0.theta + dth);
    }
    return *this;
  }

  /// Smooth lateral offset (cosine profile) over `length` of forward travel.
  PathBuilder& lane_change(double length, double offset) {
    const Pose2 p0 = pts_.back();
    const double c = std::cos(p0.theta), s = std::sin(p0.theta);
    const int n = std::max(1, static_cast<int>(std::ceil(length / spacing_)));
    for (int i = 1; i <= n; ++i) {
      const double u = static_cast<double>(i) / n;
      const double fwd = length * u;
      const double lat = offset * 0.5 * (1.0 - std::cos(kPi * u));
      const double slope = offset * 0.5 * kPi * std::sin(kPi * u) / length;
      pts_.emplace_back(p0.x + fwd * c - lat * s, p0.y + fwd * s + lat * c,
                        p0.theta + std::atan(slope));
    }
    return *this;
  }

  Path build() const { return Path(pts_); }

 private:
  double spacing_;
  std::vector<Pose2> pts_;
};

/// Pure-pursuit curvature toward the path point `lookahead` ahead of the
/// vehicle's projection.
inline double pursuit_curvature(const Path& path, const Pose2& pose, double s_hint,
                                double lookahead) {
  const Pose2 target = path.pose_at(s_hint + lookahead);
  const double dx = target.x - pose.x, dy = target.y - pose.y;
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  const double d2 = lx * lx + ly * ly;
  if (d2 < 1e-9) return 0.0;
  return 2.0 * ly / d2;
}

}  // namespace latrisk
