// Copyright 2026 The POPLIN Toolkit Authors
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

// Analytic control tasks with closed-form dynamics and rewards. The equations
// of motion and reward coefficients are listed in docs/environments.md.

#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "poplin/common.hpp"

namespace poplin {

struct EnvSpec {
  std::string id;
  int state_dim = 0;
  int action_dim = 0;
  Vector action_low;
  Vector action_high;
  int horizon = 0;
  double dt = 0.0;

  Vector ActionMidpoint() const {
    Vector mid(action_dim);
    for (int i = 0; i < action_dim; ++i) {
      mid[i] = 0.5 * (action_low[i] + action_high[i]);
    }
    return mid;
  }
};

struct EnvState {
  Vector observation;
  int step_index = 0;
  bool done = false;
};

struct Transition {
  Vector state;
  Vector action;
  Vector next_state;
  double reward = 0.0;
};

inline bool WithinBounds(std::span<const double> action, const EnvSpec& spec) {
  if (static_cast<int>(action.size()) != spec.action_dim) return false;
  for (int i = 0; i < spec.action_dim; ++i) {
    if (!(action[i] >= spec.action_low[i] && action[i] <= spec.action_high[i])) {
      return false;
    }
  }
  return true;
}

inline void ClipInPlace(std::span<double> action, const EnvSpec& spec) {
  for (int i = 0; i < spec.action_dim; ++i) {
    action[i] = std::clamp(action[i], spec.action_low[i], spec.action_high[i]);
  }
}

inline Vector Clip(std::span<const double> action, const EnvSpec& spec) {
  Vector out(action.begin(), action.end());
  ClipInPlace(out, spec);
  return out;
}

// An environment is an immutable description: every method is const and pure,
// state travels by value.
class Environment {
 public:
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }

  // Nominal initial observation perturbed by uniform noise in [-0.05, 0.05]
  // drawn from `seed`.
  EnvState Reset(std::uint64_t seed) const {
    Rng rng = MakeRng(seed, {0x5eedULL});
    EnvState state;
    state.observation = InitialObservation(rng);
    return state;
  }

  // Advances one step. The action must already be clipped to the bounds.
  std::pair<EnvState, double> Step(const EnvState& state,
                                   std::span<const double> action) const {
    if (state.done) throw UsageError("step called on a finished episode");
    if (static_cast<int>(state.observation.size()) != spec_.state_dim) {
      throw UsageError("observation has wrong dimension");
    }
    if (!WithinBounds(action, spec_)) {
      throw UsageError("action outside bounds of " + spec_.id);
    }
    double reward = Reward(state.observation, action);
    EnvState next;
    next.observation = Dynamics(state.observation, action);
    next.step_index = state.step_index + 1;
    next.done = next.step_index >= spec_.horizon;
    return {std::move(next), reward};
  }

  // r(s, a), shared by the simulator and by planners scoring imagined states.
  virtual double Reward(std::span<const double> obs,
                        std::span<const double> action) const = 0;

  // Next observation; a pure function of (observation, action).
  virtual Vector Dynamics(std::span<const double> obs,
                          std::span<const double> action) const = 0;

 protected:
  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {}
  virtual Vector InitialObservation(Rng& rng) const = 0;

  static double Noise(Rng& rng) {
    return std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
  }

 private:
  EnvSpec spec_;
};

// Torque-driven uniform rod on a pivot with viscous damping:
//   w' = 3 g / (2 l) sin t + 3 u / (m l^2) - b w
// Observation [cos t, sin t, w] with t = 0 upright. Starts hanging down.
class Pendulum final : public Environment {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDamping = 0.1;
  static constexpr double kMaxTorque = 3.0;

  Pendulum() : Environment(MakeSpec()) {}

  double Reward(std::span<const double> obs,
                std::span<const double> action) const override {
    double angle = std::atan2(obs[1], obs[0]);
    double vel = obs[2];
    double u = action[0];
    return -(angle * angle + 0.1 * vel * vel + 0.001 * u * u);
  }

  Vector Dynamics(std::span<const double> obs,
                  std::span<const double> action) const override {
    double angle = std::atan2(obs[1], obs[0]);
    double vel = obs[2];
    double accel = 1.5 * kGravity / kLength * std::sin(angle) +
                   3.0 * action[0] / (kMass * kLength * kLength) - kDamping * vel;
    double dt = spec().dt;
    vel += dt * accel;
    angle += dt * vel;
    return {std::cos(angle), std::sin(angle), vel};
  }

 protected:
  Vector InitialObservation(Rng& rng) const override {
    double angle = std::numbers::pi + Noise(rng);
    double vel = Noise(rng);
    return {std::cos(angle), std::sin(angle), vel};
  }

 private:
  static EnvSpec MakeSpec() {
    return {"pendulum", 3, 1, {-kMaxTorque}, {kMaxTorque}, 200, 0.05};
  }
};

// Cart-pole swing-up with cart friction and pivot damping. Observation
// [x, xdot, cos t, sin t, w] with t = 0 upright. Starts hanging down.
class Cartpole final : public Environment {
 public:
  static constexpr double kGravity = 9.81;
  static constexpr double kCartMass = 0.5;
  static constexpr double kPoleMass = 0.5;
  static constexpr double kPoleLength = 0.6;  // full length, pivot to tip
  static constexpr double kForceScale = 10.0;
  static constexpr double kCartFriction = 0.1;
  static constexpr double kPivotDamping = 0.01;

  Cartpole() : Environment(MakeSpec()) {}

  double Reward(std::span<const double> obs,
                std::span<const double> action) const override {
    double x = obs[0];
    double c = obs[2];
    double s = obs[3];
    double norm = std::hypot(c, s);
    if (norm > 0.0) {
      c /= norm;
      s /= norm;
    }
    double dx = x + kPoleLength * s;
    double dy = kPoleLength * c - kPoleLength;
    double dist2 = dx * dx + dy * dy;
    double a = action[0];
    return std::exp(-dist2 / (kPoleLength * kPoleLength)) - 0.01 * a * a;
  }

  Vector Dynamics(std::span<const double> obs,
                  std::span<const double> action) const override {
    double x = obs[0];
    double xdot = obs[1];
    double angle = std::atan2(obs[3], obs[2]);
    double w = obs[4];
    double force = kForceScale * action[0] - kCartFriction * xdot;

    constexpr double total = kCartMass + kPoleMass;
    constexpr double half = 0.5 * kPoleLength;
    double sin_t = std::sin(angle);
    double cos_t = std::cos(angle);
    double temp = (force + kPoleMass * half * w * w * sin_t) / total;
    double angle_acc =
        (kGravity * sin_t - cos_t * temp - kPivotDamping * w / (kPoleMass * half)) /
        (half * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total));
    double x_acc = temp - kPoleMass * half * angle_acc * cos_t / total;

    double dt = spec().dt;
    xdot += dt * x_acc;
    x += dt * xdot;
    w += dt * angle_acc;
    angle += dt * w;
    return {x, xdot, std::cos(angle), std::sin(angle), w};
  }

 protected:
  Vector InitialObservation(Rng& rng) const override {
    double x = Noise(rng);
    double xdot = Noise(rng);
    double angle = std::numbers::pi + Noise(rng);
    double w = Noise(rng);
    return {x, xdot, std::cos(angle), std::sin(angle), w};
  }

 private:
  static EnvSpec MakeSpec() {
    return {"cartpole", 5, 1, {-1.0}, {1.0}, 200, 0.05};
  }
};

// Planar two-link arm reaching a fixed target. Joints are independently
// actuated with viscous damping. Observation
// [cos q1, sin q1, cos q2, sin q2, q1dot, q2dot].
class Reacher2d final : public Environment {
 public:
  static constexpr double kLink1 = 0.5;
  static constexpr double kLink2 = 0.5;
  static constexpr double kTorqueGain = 5.0;
  static constexpr double kDamping = 1.0;
  static constexpr double kTargetX = 0.5;
  static constexpr double kTargetY = 0.5;

  Reacher2d() : Environment(MakeSpec()) {}

  double Reward(std::span<const double> obs,
                std::span<const double> action) const override {
    double q1 = std::atan2(obs[1], obs[0]);
    double q2 = std::atan2(obs[3], obs[2]);
    double tip_x = kLink1 * std::cos(q1) + kLink2 * std::cos(q1 + q2);
    double tip_y = kLink1 * std::sin(q1) + kLink2 * std::sin(q1 + q2);
    double dx = tip_x - kTargetX;
    double dy = tip_y - kTargetY;
    double effort = action[0] * action[0] + action[1] * action[1];
    return -(dx * dx + dy * dy + 0.01 * effort);
  }

  Vector Dynamics(std::span<const double> obs,
                  std::span<const double> action) const override {
    double q1 = std::atan2(obs[1], obs[0]);
    double q2 = std::atan2(obs[3], obs[2]);
    double w1 = obs[4];
    double w2 = obs[5];
    double dt = spec().dt;
    w1 += dt * (kTorqueGain * action[0] - kDamping * w1);
    w2 += dt * (kTorqueGain * action[1] - kDamping * w2);
    q1 += dt * w1;
    q2 += dt * w2;
    return {std::cos(q1), std::sin(q1), std::cos(q2), std::sin(q2), w1, w2};
  }

 protected:
  Vector InitialObservation(Rng& rng) const override {
    double q1 = Noise(rng);
    double q2 = Noise(rng);
    double w1 = Noise(rng);
    double w2 = Noise(rng);
    return {std::cos(q1), std::sin(q1), std::cos(q2), std::sin(q2), w1, w2};
  }

 private:
  static EnvSpec MakeSpec() {
    return {"reacher2d", 6, 2, {-1.0, -1.0}, {1.0, 1.0}, 100, 0.05};
  }
};

inline std::unique_ptr<Environment> MakeEnvironment(std::string_view id) {
  if (id == "pendulum") return std::make_unique<Pendulum>();
  if (id == "cartpole") return std::make_unique<Cartpole>();
  if (id == "reacher2d") return std::make_unique<Reacher2d>();
  throw ConfigError("env.id", "unknown environment '" + std::string(id) + "'");
}

// Undiscounted return of an open-loop action sequence on the simulator.
inline double SimulateReturn(const Environment& env, std::span<const double> start,
                             std::span<const Vector> actions) {
  Vector obs(start.begin(), start.end());
  double total = 0.0;
  for (const Vector& a : actions) {
    total += env.Reward(obs, a);
    obs = env.Dynamics(obs, a);
  }
  return total;
}

}  // namespace poplin
