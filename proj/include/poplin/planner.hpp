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

// Model-predictive planners. Every planner scores candidates by imagined
// rollouts through a transition model and returns the first action of the
// optimized plan.
//
//   random shooting   best of K uniform action sequences
//   PETS              CEM over action sequences, warm-started from the
//                     previous step's solution shifted by one step
//   POPLIN-A init     CEM over additive action noise around the policy's
//                     reference rollout a_t = pi(s_t)
//   POPLIN-A replan   CEM over additive action noise, policy re-queried along
//                     each candidate's own imagined trajectory
//   POPLIN-P uni      CEM over one parameter perturbation w shared by all
//                     steps: a_t = pi_{theta + w}(s_t)
//   POPLIN-P sep      CEM over one parameter perturbation per step
//
// Actions are clipped to the bounds after noise is added.

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poplin/cem.hpp"
#include "poplin/common.hpp"
#include "poplin/envs.hpp"
#include "poplin/net.hpp"
#include "poplin/rollout.hpp"

namespace poplin {

enum class PlannerVariant {
  kRandomShooting,
  kPets,
  kPoplinAInit,
  kPoplinAReplan,
  kPoplinPUni,
  kPoplinPSep,
};

inline std::string_view ToString(PlannerVariant v) {
  switch (v) {
    case PlannerVariant::kRandomShooting: return "rs";
    case PlannerVariant::kPets: return "pets";
    case PlannerVariant::kPoplinAInit: return "poplin-a-init";
    case PlannerVariant::kPoplinAReplan: return "poplin-a-replan";
    case PlannerVariant::kPoplinPUni: return "poplin-p-uni";
    case PlannerVariant::kPoplinPSep: return "poplin-p-sep";
  }
  return "?";
}

inline PlannerVariant ParsePlannerVariant(std::string_view s) {
  for (auto v : {PlannerVariant::kRandomShooting, PlannerVariant::kPets,
                 PlannerVariant::kPoplinAInit, PlannerVariant::kPoplinAReplan,
                 PlannerVariant::kPoplinPUni, PlannerVariant::kPoplinPSep}) {
    if (ToString(v) == s) return v;
  }
  throw ConfigError("planner.variant", "unknown planner '" + std::string(s) + "'");
}

inline bool UsesPolicy(PlannerVariant v) {
  return v != PlannerVariant::kRandomShooting && v != PlannerVariant::kPets;
}

inline bool IsParameterSpace(PlannerVariant v) {
  return v == PlannerVariant::kPoplinPUni || v == PlannerVariant::kPoplinPSep;
}

enum class ActionNoiseMode { kInit, kReplan };
enum class ParamNoiseMode { kUni, kSep };

struct PlanOptions {
  // Execute the best candidate ever scored instead of the final mean.
  bool execute_best = false;
  // Keep every iteration's candidates, returns and induced actions.
  bool record = false;
  // Score the initial mean as candidate 0 of the first iteration.
  bool include_mean_candidate = false;
  std::function<double(double)> score_transform;
  int threads = 0;
};

struct PlanOutcome {
  Vector chosen_action;
  double best_candidate_return = kNegInf;
  Vector best_candidate;
  GaussianSearchDist final_dist;
  std::optional<CemTrace> trace;
  // Optimized parameter noise for the first step (POPLIN-P only).
  Vector optimized_noise;
  // Imagined rollout of the executed solution: state before each action and
  // the action, step-major (horizon x state_dim / horizon x action_dim).
  Vector plan_states;
  Vector plan_actions;
};

namespace detail {

inline ActionBounds BoundsOf(const EnvSpec& spec) {
  return {spec.action_low, spec.action_high};
}

// Squashed policy outputs for a batch of states (state_dim x n).
inline Eigen::MatrixXd PolicyBatch(const FlatParams& policy, const double* params,
                                   const Eigen::MatrixXd& states, const EnvSpec& spec) {
  return SquashedForwardColumns(policy.shape, params, states, BoundsOf(spec));
}

inline void CheckPolicy(const FlatParams& policy, const EnvSpec& spec) {
  if (policy.shape.input_dim() != spec.state_dim ||
      policy.shape.output_dim() != spec.action_dim) {
    throw UsageError("policy shape does not match environment dimensions");
  }
}

inline CemOptions MakeCemOptions(const PlanOptions& o) {
  CemOptions c;
  c.record = o.record;
  c.include_mean_candidate = o.include_mean_candidate;
  c.score_transform = o.score_transform;
  c.threads = o.threads;
  return c;
}

// Rolls out a single action-generating rule and stores the executed plan.
template <typename Model, typename ActionFn>
void FillPlan(const Model& model, const Environment& env, std::span<const double> state,
              int horizon, ActionFn&& fn, PlanOutcome& out) {
  Eigen::MatrixXd acts, states;
  double ret = 0.0;
  RolloutBatch(model, env, state, 1, horizon, fn, std::span<double>(&ret, 1), &acts, &states);
  out.plan_actions.assign(acts.data(), acts.data() + acts.size());
  out.plan_states.assign(states.data(), states.data() + states.size());
}

}  // namespace detail

// Uniform random shooting: K action sequences uniform in the bounds, one
// round, first action of the best sequence.
template <typename Model>
PlanOutcome PlanRandomShooting(std::span<const double> state, const Model& model,
                               const Environment& env, const CemConfig& cfg,
                               std::uint64_t seed, const PlanOptions& opts = {}) {
  cfg.Validate();
  const EnvSpec& spec = env.spec();
  const int ad = spec.action_dim;
  const int dim = cfg.horizon * ad;
  const int k = cfg.population;
  Eigen::MatrixXd cands(dim, k);
  for (int c = 0; c < k; ++c) {
    Rng rng = MakeRng(seed, {0x25ULL, static_cast<std::uint64_t>(c)});
    for (int t = 0; t < cfg.horizon; ++t) {
      for (int i = 0; i < ad; ++i) {
        cands(t * ad + i, c) =
            std::uniform_real_distribution<double>(spec.action_low[i], spec.action_high[i])(rng);
      }
    }
  }
  Vector returns(k);
  Eigen::MatrixXd acts;
  RolloutBatch(
      model, env, state, k, cfg.horizon,
      [&](int t, const Eigen::MatrixXd&, Eigen::MatrixXd& a) { a = cands.middleRows(t * ad, ad); },
      returns, opts.record ? &acts : nullptr);
  std::vector<int> best = SelectElites(returns, 1);
  if (best.empty()) throw PlannerError("random shooting: no finite candidate");
  PlanOutcome out;
  out.best_candidate_return = returns[best[0]];
  out.best_candidate.assign(cands.col(best[0]).data(), cands.col(best[0]).data() + dim);
  out.chosen_action.assign(out.best_candidate.begin(), out.best_candidate.begin() + ad);
  out.final_dist.mean = out.best_candidate;
  out.final_dist.var.assign(dim, 0.0);
  if (opts.record) {
    CemIterationTrace it;
    it.candidates = cands;
    it.actions = acts;
    it.returns = returns;
    it.elites = best;
    it.mean_elite_return = out.best_candidate_return;
    it.dist_after = out.final_dist;
    out.trace = CemTrace{{std::move(it)}};
  }
  const Vector& sol = out.best_candidate;
  detail::FillPlan(
      model, env, state, cfg.horizon,
      [&](int t, const Eigen::MatrixXd&, Eigen::MatrixXd& a) {
        for (int i = 0; i < ad; ++i) a(i, 0) = sol[t * ad + i];
      },
      out);
  return out;
}

// Initial mean for PETS: the previous solution shifted one step earlier with
// the last step set to the action midpoint, or all midpoints.
inline Vector PetsInitialMean(const EnvSpec& spec, int horizon,
                              const std::optional<Vector>& prev_solution) {
  const int ad = spec.action_dim;
  Vector mid = spec.ActionMidpoint();
  Vector mean(static_cast<std::size_t>(horizon) * ad);
  for (int t = 0; t < horizon; ++t) {
    for (int i = 0; i < ad; ++i) {
      bool shifted = prev_solution && t + 1 < horizon;
      mean[t * ad + i] = shifted ? (*prev_solution)[(t + 1) * ad + i] : mid[i];
    }
  }
  return mean;
}

template <typename Model>
PlanOutcome PlanPets(std::span<const double> state, const Model& model,
                     const Environment& env, const CemConfig& cfg,
                     const std::optional<Vector>& prev_solution, std::uint64_t seed,
                     const PlanOptions& opts = {}) {
  const EnvSpec& spec = env.spec();
  const int ad = spec.action_dim;
  const int dim = cfg.horizon * ad;
  if (prev_solution && static_cast<int>(prev_solution->size()) != dim) {
    throw UsageError("previous solution has wrong length");
  }
  BatchObjective objective = [&](const Eigen::MatrixXd& cands, std::span<double> ret,
                                 Eigen::MatrixXd* acts) {
    RolloutBatch(
        model, env, state, static_cast<int>(cands.cols()), cfg.horizon,
        [&](int t, const Eigen::MatrixXd&, Eigen::MatrixXd& a) { a = cands.middleRows(t * ad, ad); },
        ret, acts);
  };
  CemOptions copts = detail::MakeCemOptions(opts);
  copts.initial_mean = PetsInitialMean(spec, cfg.horizon, prev_solution);
  CemResult res = CemOptimize(objective, dim, cfg, seed, copts);

  PlanOutcome out;
  out.best_candidate_return = res.best_return;
  out.best_candidate = res.best_candidate;
  out.final_dist = res.final_dist;
  if (opts.record) out.trace = std::move(res.trace);
  const Vector& sol = opts.execute_best ? out.best_candidate : out.final_dist.mean;
  out.chosen_action = Clip(std::span<const double>(sol).first(ad), spec);
  detail::FillPlan(
      model, env, state, cfg.horizon,
      [&](int t, const Eigen::MatrixXd&, Eigen::MatrixXd& a) {
        for (int i = 0; i < ad; ++i) a(i, 0) = sol[t * ad + i];
      },
      out);
  return out;
}

// Reference actions from rolling the policy through the model:
// a_t = pi(s_t), s_{t+1} = f(s_t, a_t), s_0 = state. Step-major.
template <typename Model>
Vector PolicyReferenceActions(std::span<const double> state, const FlatParams& policy,
                              const Model& model, const Environment& env, int horizon) {
  const EnvSpec& spec = env.spec();
  detail::CheckPolicy(policy, spec);
  Eigen::MatrixXd acts;
  double ret = 0.0;
  RolloutBatch(
      model, env, state, 1, horizon,
      [&](int, const Eigen::MatrixXd& s, Eigen::MatrixXd& a) {
        a = detail::PolicyBatch(policy, policy.values.data(), s, spec);
      },
      std::span<double>(&ret, 1), &acts);
  return Vector(acts.data(), acts.data() + acts.size());
}

template <typename Model>
PlanOutcome PlanPoplinA(std::span<const double> state, const FlatParams& policy,
                        const Model& model, const Environment& env, const CemConfig& cfg,
                        ActionNoiseMode mode, std::uint64_t seed,
                        const PlanOptions& opts = {}) {
  const EnvSpec& spec = env.spec();
  detail::CheckPolicy(policy, spec);
  const int ad = spec.action_dim;
  const int dim = cfg.horizon * ad;
  Vector reference;
  if (mode == ActionNoiseMode::kInit) {
    reference = PolicyReferenceActions(state, policy, model, env, cfg.horizon);
  }
  // actions for step t of noise columns `noise`
  auto make_actions = [&](const Eigen::MatrixXd& noise) {
    return [&, mode](int t, const Eigen::MatrixXd& s, Eigen::MatrixXd& a) {
      if (mode == ActionNoiseMode::kInit) {
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
          for (int i = 0; i < ad; ++i) a(i, c) = reference[t * ad + i] + noise(t * ad + i, c);
        }
      } else {
        a = detail::PolicyBatch(policy, policy.values.data(), s, spec) +
            noise.middleRows(t * ad, ad);
      }
    };
  };
  BatchObjective objective = [&](const Eigen::MatrixXd& cands, std::span<double> ret,
                                 Eigen::MatrixXd* acts) {
    RolloutBatch(model, env, state, static_cast<int>(cands.cols()), cfg.horizon,
                 make_actions(cands), ret, acts);
  };
  CemResult res = CemOptimize(objective, dim, cfg, seed, detail::MakeCemOptions(opts));

  PlanOutcome out;
  out.best_candidate_return = res.best_return;
  out.best_candidate = res.best_candidate;
  out.final_dist = res.final_dist;
  if (opts.record) out.trace = std::move(res.trace);
  const Vector& sol = opts.execute_best ? out.best_candidate : out.final_dist.mean;
  Eigen::MatrixXd sol_col = Eigen::Map<const Eigen::VectorXd>(sol.data(), dim);
  detail::FillPlan(model, env, state, cfg.horizon, make_actions(sol_col), out);
  out.chosen_action.assign(out.plan_actions.begin(), out.plan_actions.begin() + ad);
  return out;
}

// Action rule of a parameter-noise candidate: column c of `noise` holds
// either one perturbation (uni) or one per step (sep).
struct ParamNoiseActions {
  const FlatParams& policy;
  const EnvSpec& spec;
  ParamNoiseMode mode;
  const Eigen::MatrixXd& noise;

  void operator()(int t, const Eigen::MatrixXd& s, Eigen::MatrixXd& a) const {
    const int p = static_cast<int>(policy.size());
    const Eigen::Index offset = mode == ParamNoiseMode::kUni ? 0 : static_cast<Eigen::Index>(t) * p;
    Vector perturbed(p);
    Vector scratch;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double* w = noise.col(c).data() + offset;
      for (int i = 0; i < p; ++i) perturbed[i] = policy.values[i] + w[i];
      ForwardColumn(policy.shape, perturbed.data(), s.col(c).data(), a.col(c).data(), scratch);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        a(i, c) = SquashScalar(a(i, c), spec.action_low[i], spec.action_high[i]);
      }
    }
  }
};

// Imagined returns of the perturbed policies pi_{theta + w} for each column
// w of `noise`.
template <typename Model>
void ScoreParameterNoise(std::span<const double> state, const FlatParams& policy,
                         const Model& model, const Environment& env, int horizon,
                         ParamNoiseMode mode, const Eigen::MatrixXd& noise,
                         std::span<double> returns, Eigen::MatrixXd* actions = nullptr) {
  detail::CheckPolicy(policy, env.spec());
  const Eigen::Index expected = mode == ParamNoiseMode::kUni
                                    ? static_cast<Eigen::Index>(policy.size())
                                    : static_cast<Eigen::Index>(horizon) * policy.size();
  if (noise.rows() != expected) throw UsageError("parameter noise has wrong dimension");
  RolloutBatch(model, env, state, static_cast<int>(noise.cols()), horizon,
               ParamNoiseActions{policy, env.spec(), mode, noise}, returns, actions);
}

// Imagined returns of fixed action sequences (columns, step-major).
template <typename Model>
void ScoreActionSequences(std::span<const double> state, const Model& model,
                          const Environment& env, int horizon, const Eigen::MatrixXd& seqs,
                          std::span<double> returns, Eigen::MatrixXd* actions = nullptr) {
  const int ad = env.spec().action_dim;
  if (seqs.rows() != static_cast<Eigen::Index>(horizon) * ad) {
    throw UsageError("action sequences have wrong dimension");
  }
  RolloutBatch(
      model, env, state, static_cast<int>(seqs.cols()), horizon,
      [&](int t, const Eigen::MatrixXd&, Eigen::MatrixXd& a) { a = seqs.middleRows(t * ad, ad); },
      returns, actions);
}

template <typename Model>
PlanOutcome PlanPoplinP(std::span<const double> state, const FlatParams& policy,
                        const Model& model, const Environment& env, const CemConfig& cfg,
                        ParamNoiseMode mode, std::uint64_t seed,
                        const PlanOptions& opts = {}) {
  const EnvSpec& spec = env.spec();
  detail::CheckPolicy(policy, spec);
  const int p = static_cast<int>(policy.size());
  const int dim = mode == ParamNoiseMode::kUni ? p : cfg.horizon * p;

  BatchObjective objective = [&](const Eigen::MatrixXd& cands, std::span<double> ret,
                                 Eigen::MatrixXd* acts) {
    ScoreParameterNoise(state, policy, model, env, cfg.horizon, mode, cands, ret, acts);
  };
  CemResult res = CemOptimize(objective, dim, cfg, seed, detail::MakeCemOptions(opts));

  PlanOutcome out;
  out.best_candidate_return = res.best_return;
  out.best_candidate = res.best_candidate;
  out.final_dist = res.final_dist;
  if (opts.record) out.trace = std::move(res.trace);
  const Vector& sol = opts.execute_best ? out.best_candidate : out.final_dist.mean;
  out.optimized_noise.assign(sol.begin(), sol.begin() + p);
  Eigen::MatrixXd sol_col = Eigen::Map<const Eigen::VectorXd>(sol.data(), dim);
  detail::FillPlan(model, env, state, cfg.horizon, ParamNoiseActions{policy, spec, mode, sol_col},
                   out);
  out.chosen_action.assign(out.plan_actions.begin(), out.plan_actions.begin() + spec.action_dim);
  return out;
}

struct PlannerSettings {
  PlannerVariant variant = PlannerVariant::kPoplinPSep;
  CemConfig cem;
  PlanOptions options;
  bool warm_start = true;  // PETS only
};

// Stateful wrapper used by the agent: dispatches on the variant and carries
// the PETS warm start between consecutive steps of an episode.
class Planner {
 public:
  explicit Planner(PlannerSettings settings) : settings_(std::move(settings)) {
    settings_.cem.Validate();
  }

  const PlannerSettings& settings() const { return settings_; }
  PlanOptions& options() { return settings_.options; }
  void ResetEpisode() { previous_.reset(); }

  template <typename Model>
  PlanOutcome Plan(std::span<const double> state, const Model& model, const Environment& env,
                   const FlatParams* policy, std::uint64_t seed) {
    const auto& cfg = settings_.cem;
    const auto& opts = settings_.options;
    if (UsesPolicy(settings_.variant) && policy == nullptr) {
      throw UsageError("planner variant needs a policy");
    }
    PlanOutcome out;
    switch (settings_.variant) {
      case PlannerVariant::kRandomShooting:
        out = PlanRandomShooting(state, model, env, cfg, seed, opts);
        break;
      case PlannerVariant::kPets:
        out = PlanPets(state, model, env, cfg,
                       settings_.warm_start ? previous_ : std::optional<Vector>{}, seed, opts);
        previous_ = out.final_dist.mean;
        break;
      case PlannerVariant::kPoplinAInit:
        out = PlanPoplinA(state, *policy, model, env, cfg, ActionNoiseMode::kInit, seed, opts);
        break;
      case PlannerVariant::kPoplinAReplan:
        out = PlanPoplinA(state, *policy, model, env, cfg, ActionNoiseMode::kReplan, seed, opts);
        break;
      case PlannerVariant::kPoplinPUni:
        out = PlanPoplinP(state, *policy, model, env, cfg, ParamNoiseMode::kUni, seed, opts);
        break;
      case PlannerVariant::kPoplinPSep:
        out = PlanPoplinP(state, *policy, model, env, cfg, ParamNoiseMode::kSep, seed, opts);
        break;
    }
    return out;
  }

 private:
  PlannerSettings settings_;
  std::optional<Vector> previous_;
};

}  // namespace poplin
