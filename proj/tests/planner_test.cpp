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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "poplin/dynamics.hpp"
#include "poplin/planner.hpp"

namespace poplin {
namespace {

constexpr PlannerVariant kAll[] = {
    PlannerVariant::kRandomShooting, PlannerVariant::kPets,       PlannerVariant::kPoplinAInit,
    PlannerVariant::kPoplinAReplan,  PlannerVariant::kPoplinPUni, PlannerVariant::kPoplinPSep,
};

FlatParams RandomPolicy(const EnvSpec& spec, std::uint64_t seed, std::vector<int> hidden = {8}) {
  MlpShape s;
  s.layers.push_back(spec.state_dim);
  for (int h : hidden) s.layers.push_back(h);
  s.layers.push_back(spec.action_dim);
  Rng rng(seed);
  return InitParams(s, rng);
}

FlatParams ZeroPolicy(const EnvSpec& spec, std::vector<int> hidden = {8}) {
  FlatParams p = RandomPolicy(spec, 0, std::move(hidden));
  std::fill(p.values.begin(), p.values.end(), 0.0);
  return p;
}

CemConfig SmallConfig() {
  CemConfig cfg;
  cfg.population = 64;
  cfg.elites = 8;
  cfg.iterations = 3;
  cfg.horizon = 10;
  cfg.init_sigma = 0.3;
  return cfg;
}

PlanOutcome PlanWith(PlannerVariant v, const CemConfig& cfg, std::span<const double> state,
                     const Environment& env, const FlatParams& policy, std::uint64_t seed,
                     PlanOptions opts = {}) {
  PlannerSettings settings;
  settings.variant = v;
  settings.cem = cfg;
  settings.options = opts;
  settings.warm_start = false;
  Planner planner(settings);
  TrueDynamics model(env);
  return planner.Plan(state, model, env, &policy, seed);
}

TEST(PlannerVariant, NamesRoundTrip) {
  for (auto v : kAll) EXPECT_EQ(ParsePlannerVariant(ToString(v)), v);
  try {
    ParsePlannerVariant("mppi");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "planner.variant");
  }
}

TEST(Planner, SeededPlansAreReproducible) {
  Cartpole env;
  Vector s = env.Reset(1).observation;
  FlatParams policy = RandomPolicy(env.spec(), 2);
  for (auto v : kAll) {
    PlanOutcome a = PlanWith(v, SmallConfig(), s, env, policy, 5);
    PlanOutcome b = PlanWith(v, SmallConfig(), s, env, policy, 5);
    EXPECT_EQ(a.chosen_action, b.chosen_action) << ToString(v);
    EXPECT_EQ(a.best_candidate_return, b.best_candidate_return) << ToString(v);
    PlanOptions many;
    many.threads = 3;
    PlanOutcome c = PlanWith(v, SmallConfig(), s, env, policy, 5, many);
    EXPECT_EQ(a.chosen_action, c.chosen_action) << ToString(v);
  }
}

TEST(Planner, ChosenActionsRespectBounds) {
  Pendulum env;
  Vector s = env.Reset(2).observation;
  FlatParams policy = RandomPolicy(env.spec(), 3);
  CemConfig cfg = SmallConfig();
  cfg.init_sigma = 50.0;
  for (auto v : kAll) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      PlanOutcome out = PlanWith(v, cfg, s, env, policy, seed);
      EXPECT_TRUE(WithinBounds(out.chosen_action, env.spec())) << ToString(v);
      for (double a : out.plan_actions) EXPECT_LE(std::abs(a), Pendulum::kMaxTorque);
    }
  }
}

TEST(Planner, MissingPolicyIsAUsageError) {
  Pendulum env;
  TrueDynamics model(env);
  PlannerSettings settings;
  settings.variant = PlannerVariant::kPoplinPUni;
  Planner planner(settings);
  EXPECT_THROW(planner.Plan(env.Reset(0).observation, model, env, nullptr, 0), UsageError);
  FlatParams wrong = RandomPolicy(Cartpole().spec(), 1);
  EXPECT_THROW(planner.Plan(env.Reset(0).observation, model, env, &wrong, 0), UsageError);
}

// Two-step lookahead from near upright: CEM should match a dense grid search
// over (a0, a1).
TEST(Pets, MatchesGridSearchOnTwoStepProblem) {
  Pendulum env;
  TrueDynamics model(env);
  const double t = 0.3, w = -0.5;
  Vector s = {std::cos(t), std::sin(t), w};
  CemConfig cfg;
  cfg.population = 400;
  cfg.elites = 40;
  cfg.iterations = 10;
  cfg.horizon = 2;
  cfg.init_sigma = 1.5;
  PlanOutcome out = PlanPets(s, model, env, cfg, std::nullopt, 0);
  double best = kNegInf;
  const int n = 601;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Vector a0 = {-3.0 + 6.0 * i / (n - 1)}, a1 = {-3.0 + 6.0 * j / (n - 1)};
      std::vector<Vector> seq = {a0, a1};
      best = std::max(best, SimulateReturn(env, s, seq));
    }
  }
  EXPECT_GE(out.best_candidate_return, best - 1e-4);
  EXPECT_LE(out.best_candidate_return, best + 1e-3);
}

TEST(Pets, WarmStartShiftsPreviousSolution) {
  EnvSpec spec = Pendulum().spec();
  Vector prev = {1.0, 2.0, 3.0};
  EXPECT_EQ(PetsInitialMean(spec, 3, prev), (Vector{2.0, 3.0, 0.0}));
  EXPECT_EQ(PetsInitialMean(spec, 3, std::nullopt), (Vector{0.0, 0.0, 0.0}));
  Reacher2d reacher;
  EXPECT_EQ(PetsInitialMean(reacher.spec(), 2, Vector{1, 2, 3, 4}), (Vector{3, 4, 0, 0}));
}

TEST(Pets, PlannerCarriesWarmStartWithinAnEpisode) {
  Pendulum env;
  TrueDynamics model(env);
  CemConfig cfg = SmallConfig();
  cfg.init_sigma = 0.0;
  cfg.variance_floor = 0.0;
  PlannerSettings settings;
  settings.variant = PlannerVariant::kPets;
  settings.cem = cfg;
  Planner planner(settings);
  Vector s = env.Reset(0).observation;
  planner.Plan(s, model, env, nullptr, 0);
  PlanOutcome second = planner.Plan(s, model, env, nullptr, 1);
  EXPECT_EQ(second.final_dist.mean, Vector(10, 0.0));
  planner.ResetEpisode();
  EXPECT_EQ(planner.Plan(s, model, env, nullptr, 2).chosen_action, (Vector{0.0}));
}

TEST(Pets, SingleCandidateSingleEliteRuns) {
  Cartpole env;
  TrueDynamics model(env);
  CemConfig cfg;
  cfg.population = cfg.elites = cfg.iterations = 1;
  cfg.horizon = 5;
  cfg.alpha = 0.0;
  cfg.init_sigma = 0.5;
  PlanOptions opts;
  opts.record = true;
  PlanOutcome out = PlanPets(env.Reset(0).observation, model, env, cfg, std::nullopt, 3, opts);
  const auto& it = out.trace->iterations.front();
  // the lone candidate is the new mean
  for (int d = 0; d < 5; ++d) EXPECT_EQ(out.final_dist.mean[d], it.candidates(d, 0));
  EXPECT_EQ(out.chosen_action[0], std::clamp(it.candidates(0, 0), -1.0, 1.0));
  EXPECT_EQ(out.best_candidate_return, it.returns[0]);
}

TEST(RandomShooting, PicksTheBestSampledSequence) {
  Pendulum env;
  TrueDynamics model(env);
  CemConfig cfg = SmallConfig();
  PlanOptions opts;
  opts.record = true;
  Vector s = env.Reset(4).observation;
  PlanOutcome out = PlanRandomShooting(s, model, env, cfg, 9, opts);
  const auto& it = out.trace->iterations.front();
  double best = kNegInf;
  int arg = -1;
  for (int c = 0; c < cfg.population; ++c) {
    std::vector<Vector> seq;
    for (int t = 0; t < cfg.horizon; ++t) seq.push_back({it.candidates(t, c)});
    double r = SimulateReturn(env, s, seq);
    if (r > best) best = r, arg = c;
  }
  EXPECT_NEAR(out.best_candidate_return, best, 1e-9);
  EXPECT_EQ(out.chosen_action[0], it.candidates(0, arg));
}

// ----- reductions ----- //

TEST(Reduction, PoplinAInitWithZeroPolicyIsPets) {
  for (const char* id : {"pendulum", "cartpole"}) {
    auto env = MakeEnvironment(id);
    TrueDynamics model(*env);
    FlatParams zero = ZeroPolicy(env->spec());
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Vector s = env->Reset(seed).observation;
      PlanOutcome pets = PlanPets(s, model, *env, SmallConfig(), std::nullopt, seed);
      PlanOutcome a = PlanPoplinA(s, zero, model, *env, SmallConfig(), ActionNoiseMode::kInit, seed);
      EXPECT_EQ(pets.chosen_action, a.chosen_action) << id;
      EXPECT_EQ(pets.best_candidate_return, a.best_candidate_return) << id;
      EXPECT_EQ(pets.final_dist.mean, a.final_dist.mean) << id;
      EXPECT_EQ(pets.plan_actions, a.plan_actions) << id;
    }
  }
}

TEST(Reduction, UniEqualsSepAtHorizonOne) {
  Cartpole env;
  TrueDynamics model(env);
  FlatParams policy = RandomPolicy(env.spec(), 5);
  CemConfig cfg = SmallConfig();
  cfg.horizon = 1;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Vector s = env.Reset(seed).observation;
    PlanOutcome uni = PlanPoplinP(s, policy, model, env, cfg, ParamNoiseMode::kUni, seed);
    PlanOutcome sep = PlanPoplinP(s, policy, model, env, cfg, ParamNoiseMode::kSep, seed);
    EXPECT_EQ(uni.chosen_action, sep.chosen_action);
    EXPECT_EQ(uni.final_dist.mean, sep.final_dist.mean);
    EXPECT_EQ(uni.optimized_noise, sep.optimized_noise);
  }
}

TEST(Reduction, ZeroSigmaExecutesTheDeterministicProposal) {
  Cartpole env;
  TrueDynamics model(env);
  CemConfig cfg = SmallConfig();
  cfg.init_sigma = 0.0;
  cfg.variance_floor = 0.0;
  FlatParams policy = RandomPolicy(env.spec(), 6);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Vector s = env.Reset(seed).observation;
    Vector proposal = Forward(policy, s, detail::BoundsOf(env.spec()));
    for (auto v : kAll) {
      if (v == PlannerVariant::kRandomShooting) continue;
      PlanOutcome out = PlanWith(v, cfg, s, env, policy, seed);
      Vector expected = UsesPolicy(v) ? proposal : env.spec().ActionMidpoint();
      EXPECT_EQ(out.chosen_action, expected) << ToString(v);
    }
  }
}

TEST(Reduction, ExpTransformLeavesChosenActionUnchanged) {
  Cartpole env;
  FlatParams policy = RandomPolicy(env.spec(), 7);
  PlanOptions transformed;
  transformed.score_transform = [](double r) { return std::exp(r); };
  for (auto v : kAll) {
    if (v == PlannerVariant::kRandomShooting) continue;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Vector s = env.Reset(seed).observation;
      PlanOutcome a = PlanWith(v, SmallConfig(), s, env, policy, seed);
      PlanOutcome b = PlanWith(v, SmallConfig(), s, env, policy, seed, transformed);
      EXPECT_EQ(a.chosen_action, b.chosen_action) << ToString(v);
    }
  }
}

// ----- improvement over the proposal ----- //

TEST(PoplinP, BestCandidateDominatesTheUnperturbedPolicy) {
  Pendulum env;
  TrueDynamics model(env);
  FlatParams policy = RandomPolicy(env.spec(), 8);
  PlanOptions opts;
  opts.include_mean_candidate = true;
  for (auto mode : {ParamNoiseMode::kUni, ParamNoiseMode::kSep}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Vector s = env.Reset(seed).observation;
      Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(
          mode == ParamNoiseMode::kUni ? policy.size() : policy.size() * 10, 1);
      double base = 0.0;
      ScoreParameterNoise(s, policy, model, env, 10, mode, zero, std::span<double>(&base, 1));
      PlanOutcome out = PlanPoplinP(s, policy, model, env, SmallConfig(), mode, seed, opts);
      EXPECT_GE(out.best_candidate_return, base);
    }
  }
}

TEST(PoplinP, ImprovesOnAZeroPolicy) {
  Pendulum env;
  TrueDynamics model(env);
  FlatParams zero = ZeroPolicy(env.spec(), {});
  CemConfig cfg;
  cfg.population = 500;
  cfg.elites = 50;
  cfg.horizon = 25;
  cfg.init_sigma = 0.1;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Vector s = env.Reset(seed).observation;
    std::vector<Vector> idle(25, Vector{0.0});
    double base = SimulateReturn(env, s, idle);
    PlanOutcome out = PlanPoplinP(s, zero, model, env, cfg, ParamNoiseMode::kUni, seed);
    EXPECT_GT(out.best_candidate_return, base);
  }
}

TEST(PoplinP, ScoresMatchSimulatedPerturbedPolicies) {
  Cartpole env;
  TrueDynamics model(env);
  FlatParams policy = RandomPolicy(env.spec(), 9);
  Rng rng(1);
  Eigen::MatrixXd noise(policy.size(), 4);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
  Vector s = env.Reset(3).observation;
  Vector returns(4);
  ScoreParameterNoise(s, policy, model, env, 15, ParamNoiseMode::kUni, noise, returns);
  for (int c = 0; c < 4; ++c) {
    FlatParams w(policy.shape, Vector(noise.col(c).data(), noise.col(c).data() + policy.size()));
    Vector obs = s;
    double total = 0.0;
    for (int t = 0; t < 15; ++t) {
      Vector a = PerturbedForward(policy, w, obs, detail::BoundsOf(env.spec()));
      total += env.Reward(obs, a);
      obs = env.Dynamics(obs, a);
    }
    EXPECT_NEAR(returns[c], total, 1e-10);
  }
}

TEST(PoplinP, OptimizedNoiseIsTheFirstStepSlice) {
  Pendulum env;
  TrueDynamics model(env);
  FlatParams policy = RandomPolicy(env.spec(), 10);
  Vector s = env.Reset(0).observation;
  PlanOutcome out = PlanPoplinP(s, policy, model, env, SmallConfig(), ParamNoiseMode::kSep, 0);
  ASSERT_EQ(out.optimized_noise.size(), policy.size());
  EXPECT_TRUE(std::equal(out.optimized_noise.begin(), out.optimized_noise.end(),
                         out.final_dist.mean.begin()));
}

TEST(PoplinA, ReplanWithZeroNoiseFollowsThePolicy) {
  Cartpole env;
  TrueDynamics model(env);
  FlatParams policy = RandomPolicy(env.spec(), 11);
  Vector s = env.Reset(0).observation;
  Vector ref = PolicyReferenceActions(s, policy, model, env, 10);
  CemConfig cfg = SmallConfig();
  cfg.init_sigma = 0.0;
  cfg.variance_floor = 0.0;
  for (auto mode : {ActionNoiseMode::kInit, ActionNoiseMode::kReplan}) {
    PlanOutcome out = PlanPoplinA(s, policy, model, env, cfg, mode, 0);
    EXPECT_EQ(out.plan_actions, ref);
  }
}

}  // namespace
}  // namespace poplin
