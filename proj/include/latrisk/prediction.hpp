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

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "latrisk/geometry.hpp"
#include "latrisk/rng.hpp"

namespace latrisk {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kCovJitter = 1e-9;
inline constexpr double kWeightTolerance = 1e-9;
inline constexpr int kMaxModes = 8;

/// One Gaussian component over (x, y, theta).
struct GaussianMode {
  Pose2 mean;
  Mat3 covariance = Mat3::Zero();
  double weight = 1.0;
};

/// Weighted Gaussian mixture over an obstacle pose.
struct MixtureBelief {
  std::vector<GaussianMode> modes;
  double time = 0.0;

  static MixtureBelief single(const Pose2& mean, const Mat3& cov, double time = 0.0) {
    return {{GaussianMode{mean, cov, 1.0}}, time};
  }

  double weight_sum() const {
    double s = 0.0;
    for (const auto& m : modes) s += m.weight;
    return s;
  }

  void validate() const {
    if (modes.empty()) throw std::invalid_argument("MixtureBelief: no modes");
    if (static_cast<int>(modes.size()) > kMaxModes) {
      throw std::invalid_argument("MixtureBelief: too many modes");
    }
    for (const auto& m : modes) {
      if (!(m.weight >= 0.0 && m.weight <= 1.0)) {
        throw std::invalid_argument("MixtureBelief: weight outside [0,1]");
      }
      if (!m.mean.finite() || !m.covariance.allFinite()) {
        throw std::invalid_argument("MixtureBelief: non-finite mode");
      }
    }
    if (std::abs(weight_sum() - 1.0) > kWeightTolerance) {
      throw std::invalid_argument("MixtureBelief: weights must sum to 1");
    }
  }
};

/// Constant-velocity predictor. `process_noise` is added per second.
struct MotionModel {
  Vec2 velocity;
  Mat3 process_noise = Vec3(0.15, 0.15, 0.01).asDiagonal();
};

/// Square-root factor S with S S^T = cov, valid for singular PSD matrices.
inline Mat3 psd_sqrt(const Mat3& cov) {
  if (cov.isZero(0.0)) return Mat3::Zero();
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (cov + cov.transpose()));
  const Vec3 d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

/// Advances every mode by `dt` under the model: mean drifts with the
/// velocity, covariance becomes F S F^T + dt Q with F = I.
inline MixtureBelief propagate(const MixtureBelief& belief, double dt, const MotionModel& model) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw std::invalid_argument("propagate: dt must be >= 0");
  if (dt == 0.0) return belief;
  MixtureBelief out = belief;
  out.time = belief.time + dt;
  for (auto& m : out.modes) {
    m.mean = Pose2(m.mean.x + model.velocity.x * dt, m.mean.y + model.velocity.y * dt, m.mean.theta);
    m.covariance = m.covariance + dt * model.process_noise;
  }
  return out;
}

/// Precomputed sampler for repeated draws from one belief.
class MixtureSampler {
 public:
  explicit MixtureSampler(const MixtureBelief& belief) : belief_(belief) {
    belief_.validate();
    double acc = 0.0;
    for (const auto& m : belief_.modes) {
      acc += m.weight;
      cumulative_.push_back(acc);
      factors_.push_back(psd_sqrt(m.covariance));
      degenerate_.push_back(m.covariance.isZero(0.0));
    }
  }

  std::size_t pick_mode(Rng& rng) const {
    if (cumulative_.size() == 1) return 0;
    const double u = rng.uniform() * cumulative_.back();
    for (std::size_t j = 0; j < cumulative_.size(); ++j) {
      if (u < cumulative_[j] && belief_.modes[j].weight > 0.0) return j;
    }
    // u landed on the upper boundary: last positive-weight mode.
    for (std::size_t j = cumulative_.size(); j-- > 0;) {
      if (belief_.modes[j].weight > 0.0) return j;
    }
    return 0;
  }

  Pose2 sample(Rng& rng) const {
    const std::size_t j = pick_mode(rng);
    const Pose2& mu = belief_.modes[j].mean;
    if (degenerate_[j]) return mu;
    const Vec3 z(rng.normal(), rng.normal(), rng.normal());
    const Vec3 d = factors_[j] * z;
    return Pose2(mu.x + d(0), mu.y + d(1), mu.theta + d(2));
  }

  const MixtureBelief& belief() const { return belief_; }

 private:
  MixtureBelief belief_;
  std::vector<double> cumulative_;
  std::vector<Mat3> factors_;
  std::vector<bool> degenerate_;
};

inline Pose2 sample_pose(const MixtureBelief& belief, Rng& rng) {
  return MixtureSampler(belief).sample(rng);
}

/// Mixture density at `pose`; the heading residual is wrapped.
inline double density(const MixtureBelief& belief, const Pose2& pose) {
  double total = 0.0;
  for (const auto& m : belief.modes) {
    if (m.weight == 0.0) continue;
    Eigen::LLT<Mat3> llt(m.covariance);
    if (llt.info() != Eigen::Success) {
      llt.compute(m.covariance + kCovJitter * Mat3::Identity());
      if (llt.info() != Eigen::Success) throw std::domain_error("density: singular covariance");
    }
    const Vec3 r(pose.x - m.mean.x, pose.y - m.mean.y, wrap_angle(pose.theta - m.mean.theta));
    const Vec3 w = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    total += m.weight * std::exp(-0.5 * w.squaredNorm() - 0.5 * logdet -
                                 1.5 * std::log(2.0 * kPi));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Constant-velocity Kalman tracker over [x, y, theta, vx, vy]. The heading
// innovation is wrapped, which is the only nonlinearity.

struct EkfNoise {
  // Process noise spectral densities: position jerk-free CV model.
  double accel_psd = 1.0;         // (m/s^2)^2 / Hz on vx, vy
  double heading_rate_psd = 0.01;  // rad^2/s
  Vec3 observation_sigma{0.2, 0.2, 0.02};
  double initial_velocity_sigma = 5.0;
};

class EkfTracker {
 public:
  using Vec5 = Eigen::Matrix<double, 5, 1>;
  using Mat5 = Eigen::Matrix<double, 5, 5>;

  explicit EkfTracker(EkfNoise noise = {}) : noise_(noise) {}

  bool initialized() const { return initialized_; }

  /// Resets the filter at the first observation.
  void initialize(const ObstacleState& obs, double time) {
    x_ << obs.pose.x, obs.pose.y, obs.pose.theta, obs.velocity.x, obs.velocity.y;
    P_.setZero();
    P_.topLeftCorner<3, 3>() = noise_.observation_sigma.cwiseAbs2().asDiagonal();
    const double vs2 = noise_.initial_velocity_sigma * noise_.initial_velocity_sigma;
    P_(3, 3) = vs2;
    P_(4, 4) = vs2;
    time_ = time;
    initialized_ = true;
  }

  void predict(double dt) {
    if (!(dt >= 0.0)) throw std::invalid_argument("EkfTracker::predict: dt must be >= 0");
    if (dt == 0.0) return;
    Mat5 F = Mat5::Identity();
    F(0, 3) = dt;
    F(1, 4) = dt;
    x_ = F * x_;
    x_(2) = wrap_angle(x_(2));
    const double q = noise_.accel_psd;
    Mat5 Q = Mat5::Zero();
    const double dt2 = dt * dt, dt3 = dt2 * dt;
    Q(0, 0) = Q(1, 1) = q * dt3 / 3.0;
    Q(0, 3) = Q(3, 0) = Q(1, 4) = Q(4, 1) = q * dt2 / 2.0;
    Q(3, 3) = Q(4, 4) = q * dt;
    Q(2, 2) = noise_.heading_rate_psd * dt;
    P_ = F * P_ * F.transpose() + Q;
    time_ += dt;
  }

  void update(const Pose2& z) {
    Eigen::Matrix<double, 3, 5> H = Eigen::Matrix<double, 3, 5>::Zero();
    H(0, 0) = H(1, 1) = H(2, 2) = 1.0;
    Vec3 y(z.x - x_(0), z.y - x_(1), wrap_angle(z.theta - x_(2)));
    const Mat3 R = noise_.observation_sigma.cwiseAbs2().asDiagonal();
    const Mat3 S = H * P_ * H.transpose() + R;
    const Eigen::Matrix<double, 5, 3> K = P_ * H.transpose() * S.inverse();
    x_ += K * y;
    x_(2) = wrap_angle(x_(2));
    // Joseph form keeps P symmetric PSD.
    const Mat5 I_KH = Mat5::Identity() - K * H;
    P_ = I_KH * P_ * I_KH.transpose() + K * R * K.transpose();
    P_ = 0.5 * (P_ + P_.transpose());
  }

  /// Predict to the observation time, then fuse it.
  MixtureBelief step(const ObstacleState& obs, double dt) {
    if (!initialized_) {
      initialize(obs, time_ + dt);
      return belief();
    }
    predict(dt);
    update(obs.pose);
    return belief();
  }

  MixtureBelief belief() const {
    Mat3 cov = P_.topLeftCorner<3, 3>();
    return MixtureBelief::single(Pose2(x_(0), x_(1), x_(2)), 0.5 * (cov + cov.transpose()), time_);
  }

  Vec2 velocity() const { return {x_(3), x_(4)}; }
  const Mat5& covariance() const { return P_; }
  const Vec5& state() const { return x_; }

 private:
  EkfNoise noise_;
  Vec5 x_ = Vec5::Zero();
  Mat5 P_ = Mat5::Zero();
  double time_ = 0.0;
  bool initialized_ = false;
};

/// Single-step form: seeds a tracker from `prev` and fuses `observation`.
inline MixtureBelief ekf_track(const ObstacleState& prev, const ObstacleState& observation,
                               double dt, EkfNoise noise = {}) {
  if (!(dt > 0.0)) throw std::invalid_argument("ekf_track: dt must be > 0");
  EkfTracker tracker(noise);
  tracker.initialize(prev, 0.0);
  return tracker.step(observation, dt);
}

}  // namespace latrisk
