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
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "latrisk/ego_plan.hpp"
#include "latrisk/rng.hpp"

namespace latrisk {

/// A delay component: fixed when jitter is 0, otherwise uniform on
/// [mean - jitter, mean + jitter] clamped at 0.
struct DelayComponent {
  double mean = 0.0;
  double jitter = 0.0;

  bool fixed() const { return jitter == 0.0; }
  void validate() const {
    if (!(mean >= 0.0) || !(jitter >= 0.0) || !std::isfinite(mean) || !std::isfinite(jitter)) {
      throw std::invalid_argument("DelayComponent: mean and jitter must be finite and >= 0");
    }
  }
};

/// Total decision latency = human response + network transmission.
struct LatencyModel {
  DelayComponent human;
  DelayComponent network;

  static LatencyModel fixed(double total) { return {{total, 0.0}, {0.0, 0.0}}; }
  double expected() const { return human.mean + network.mean; }
};

inline double draw_component(const DelayComponent& c, Rng& rng) {
  c.validate();
  if (c.fixed()) return c.mean;
  return std::max(0.0, rng.uniform(c.mean - c.jitter, c.mean + c.jitter));
}

inline double draw_latency(const LatencyModel& model, Rng& rng) {
  const double h = draw_component(model.human, rng);
  return h + draw_component(model.network, rng);
}

/// Ceiling quantization onto the step grid, as an integer step index.
inline std::int64_t quantize_up(double t, double step) {
  return static_cast<std::int64_t>(std::ceil(t / step - 1e-9));
}

struct PendingDecision {
  std::uint64_t id = 0;
  double issued_at = 0.0;
  double latency = 0.0;
  std::int64_t apply_step = 0;
  double step = 0.01;
  DecisionAction action;

  double apply_at() const { return static_cast<double>(apply_step) * step; }
};

/// Delayed decisions ordered by apply step, FIFO among equals.
class DecisionQueue {
 public:
  explicit DecisionQueue(double step = 0.01) : step_(step) {
    if (!(step > 0.0)) throw std::invalid_argument("DecisionQueue: step must be > 0");
  }

  PendingDecision enqueue(const DecisionAction& action, double issued_at, double latency,
                          std::uint64_t id = 0) {
    if (!(latency >= 0.0) || !std::isfinite(latency) || !std::isfinite(issued_at)) {
      throw std::invalid_argument("DecisionQueue::enqueue: latency must be finite and >= 0");
    }
    PendingDecision d{id, issued_at, latency, quantize_up(issued_at + latency, step_), step_, action};
    const auto pos = std::upper_bound(
        items_.begin(), items_.end(), d.apply_step,
        [](std::int64_t s, const PendingDecision& e) { return s < e.apply_step; });
    items_.insert(pos, d);
    return d;
  }

  /// Removes and returns every decision with apply_at <= now.
  std::vector<PendingDecision> poll_due(double now) {
    const std::int64_t now_step = static_cast<std::int64_t>(std::floor(now / step_ + 1e-9));
    std::vector<PendingDecision> due;
    while (!items_.empty() && items_.front().apply_step <= now_step) {
      due.push_back(items_.front());
      items_.pop_front();
    }
    return due;
  }

  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  double step() const { return step_; }

 private:
  double step_;
  std::deque<PendingDecision> items_;
};

}  // namespace latrisk
