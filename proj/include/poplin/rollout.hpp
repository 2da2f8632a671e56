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

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

#include "poplin/common.hpp"
#include "poplin/envs.hpp"

namespace poplin {

// Imagined rollout of n candidates from a shared start state through `model`.
//
// `action_fn(t, states, actions)` fills `actions` (action_dim x n) for step t
// given the imagined `states` (state_dim x n). Actions are clipped to the
// environment bounds before use. returns[c] is the undiscounted reward sum, or
// -inf once candidate c produces a non-finite state or reward.
//
// If `actions_out` is given it receives the executed (clipped) actions, one
// column per candidate, step-major ((horizon * action_dim) x n). Likewise
// `states_out` receives the imagined states visited before each action.
template <typename Model, typename ActionFn>
void RolloutBatch(const Model& model, const Environment& env,
                  std::span<const double> start, int n, int horizon,
                  ActionFn&& action_fn, std::span<double> returns,
                  Eigen::MatrixXd* actions_out = nullptr,
                  Eigen::MatrixXd* states_out = nullptr) {
  const EnvSpec& spec = env.spec();
  const int sd = spec.state_dim;
  const int ad = spec.action_dim;
  if (static_cast<int>(start.size()) != sd) throw UsageError("rollout: start state dimension");
  if (static_cast<int>(returns.size()) != n) throw UsageError("rollout: returns size");
  Eigen::MatrixXd states(sd, n);
  for (int c = 0; c < n; ++c) {
    for (int i = 0; i < sd; ++i) states(i, c) = start[i];
  }
  std::fill(returns.begin(), returns.end(), 0.0);
  std::vector<char> alive(n, 1);
  Eigen::MatrixXd actions(ad, n);
  if (actions_out) actions_out->resize(static_cast<Eigen::Index>(horizon) * ad, n);
  if (states_out) states_out->resize(static_cast<Eigen::Index>(horizon) * sd, n);
  for (int t = 0; t < horizon; ++t) {
    action_fn(t, static_cast<const Eigen::MatrixXd&>(states), actions);
    for (int c = 0; c < n; ++c) {
      double* a = actions.col(c).data();
      ClipInPlace({a, static_cast<std::size_t>(ad)}, spec);
      if (!alive[c]) continue;
      double r = env.Reward({states.col(c).data(), static_cast<std::size_t>(sd)},
                            {a, static_cast<std::size_t>(ad)});
      if (!std::isfinite(r)) {
        alive[c] = 0;
        returns[c] = kNegInf;
      } else {
        returns[c] += r;
      }
    }
    if (actions_out) actions_out->middleRows(static_cast<Eigen::Index>(t) * ad, ad) = actions;
    if (states_out) states_out->middleRows(static_cast<Eigen::Index>(t) * sd, sd) = states;
    if (t + 1 == horizon) break;
    states = model.PredictBatch(states, actions);
    for (int c = 0; c < n; ++c) {
      if (!alive[c]) continue;
      if (!states.col(c).allFinite()) {
        alive[c] = 0;
        returns[c] = kNegInf;
      }
    }
  }
}

using ActionProvider =
    std::function<Vector(std::span<const double> state, int t)>;

// Expected planning return of one candidate: roll `model` forward `horizon`
// steps from `start`, summing reward over (imagined state, action) pairs.
// Returns -inf if the imagined trajectory leaves the finite range.
template <typename Model>
double ExpectedReturn(const Model& model, const Environment& env,
                      std::span<const double> start, const ActionProvider& provider,
                      int horizon) {
  if (horizon <= 0) return 0.0;
  const int ad = env.spec().action_dim;
  double ret = 0.0;
  RolloutBatch(
      model, env, start, 1, horizon,
      [&](int t, const Eigen::MatrixXd& states, Eigen::MatrixXd& actions) {
        Vector a = provider({states.col(0).data(), static_cast<std::size_t>(states.rows())}, t);
        if (static_cast<int>(a.size()) != ad) throw UsageError("action provider dimension");
        for (int i = 0; i < ad; ++i) actions(i, 0) = a[i];
      },
      std::span<double>(&ret, 1));
  return ret;
}

}  // namespace poplin
