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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "poplin/agent.hpp"

namespace poplin {
namespace {

namespace fs = std::filesystem;

AgentConfig TinyConfig() {
  AgentConfig cfg;
  cfg.env_id = "pendulum";
  cfg.planner.variant = PlannerVariant::kPoplinPUni;
  cfg.planner.cem.population = 16;
  cfg.planner.cem.elites = 4;
  cfg.planner.cem.iterations = 2;
  cfg.planner.cem.horizon = 5;
  cfg.policy_hidden = {4};
  cfg.ensemble = {2, {8}, ModelMode::kProbabilistic};
  cfg.dynamics_train.epochs = 1;
  cfg.distill.epochs = 1;
  cfg.total_timesteps = 600;
  cfg.initial_random_timesteps = 200;
  return cfg;
}

std::string ReadFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path ScratchDir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("poplin_agent_test_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Training, RandomPhaseOnlyWhenScheduleIsExhausted) {
  AgentConfig cfg = TinyConfig();
  cfg.total_timesteps = cfg.initial_random_timesteps;
  TrainingResult r = RunTraining(cfg);
  ASSERT_EQ(r.record.rows.size(), 1u);
  EXPECT_FALSE(r.record.rows[0].dyn_loss.has_value());
  EXPECT_TRUE(r.mpc_states.empty());
  EXPECT_EQ(r.data.size(), 200u);
  EXPECT_EQ(r.policy.values, MakePolicy(Pendulum().spec(), cfg.policy_hidden, false, 0).values);
}

TEST(Training, IsDeterministic) {
  TrainingResult a = RunTraining(TinyConfig());
  TrainingResult b = RunTraining(TinyConfig());
  EXPECT_EQ(a.record.ToCsv(), b.record.ToCsv());
  EXPECT_EQ(a.policy.values, b.policy.values);
}

TEST(Training, ParallelEvaluationMatchesSerial) {
  AgentConfig serial = TinyConfig(), parallel = TinyConfig();
  serial.planner.options.threads = 1;
  parallel.planner.options.threads = 3;
  EXPECT_EQ(RunTraining(serial).record.ToCsv(), RunTraining(parallel).record.ToCsv());
}

TEST(Training, SeedsAreIsolated) {
  AgentConfig other = TinyConfig();
  other.seed = 1;
  EXPECT_NE(RunTraining(TinyConfig()).record.ToCsv(), RunTraining(other).record.ToCsv());
}

TEST(Training, DatasetGrowsOneTransitionPerStep) {
  TrainingResult r = RunTraining(TinyConfig());
  EXPECT_EQ(r.data.size(), 600u);
  EXPECT_EQ(r.mpc_states.size(), 400u);
  EXPECT_EQ(r.data.distill_pairs.size(), 400u);
  ASSERT_EQ(r.record.rows.size(), 3u);
  EXPECT_EQ(r.record.rows.back().timestep, 600);
  EXPECT_TRUE(r.record.rows.back().dyn_loss.has_value());
  EXPECT_TRUE(r.record.rows.back().distill_loss.has_value());
}

TEST(Training, HallucinationAddsImaginedPairs) {
  AgentConfig cfg = TinyConfig();
  cfg.distill.data = DistillData::kHallucination;
  TrainingResult r = RunTraining(cfg);
  EXPECT_EQ(r.data.distill_pairs.size(), 400u * cfg.planner.cem.horizon);
}

TEST(Training, NoDistillationKeepsThePolicy) {
  AgentConfig cfg = TinyConfig();
  cfg.distill.scheme = DistillScheme::kNone;
  TrainingResult r = RunTraining(cfg);
  EXPECT_EQ(r.policy.values, MakePolicy(Pendulum().spec(), cfg.policy_hidden, false, 0).values);
  EXPECT_FALSE(r.record.rows.back().distill_loss.has_value());
}

TEST(Training, AveragingMovesThePolicyAndConsumesRecords) {
  AgentConfig cfg = TinyConfig();
  cfg.distill.scheme = DistillScheme::kAvg;
  TrainingResult r = RunTraining(cfg);
  EXPECT_NE(r.policy.values, MakePolicy(Pendulum().spec(), cfg.policy_hidden, false, 0).values);
  EXPECT_TRUE(r.data.noise_records.empty());
}

TEST(Training, PolicyFreeVariantHasNoPolicyColumn) {
  AgentConfig cfg = TinyConfig();
  cfg.planner.variant = PlannerVariant::kPets;
  cfg.distill.scheme = DistillScheme::kNone;
  TrainingResult r = RunTraining(cfg);
  for (const auto& row : r.record.rows) EXPECT_FALSE(row.policy_return.has_value());
}

TEST(Training, WritesArtifacts) {
  AgentConfig cfg = TinyConfig();
  fs::path dir = ScratchDir("artifacts");
  cfg.output_dir = dir.string();
  cfg.dump_step = 3;
  TrainingResult r = RunTraining(cfg);
  EXPECT_EQ(ReadFile(dir / "run.csv"), r.record.ToCsv());
  EXPECT_EQ(LoadParams((dir / "policy.bin").string()).values, r.policy.values);
  EXPECT_TRUE(fs::exists(dir / "policy_iter1.bin"));
  EXPECT_TRUE(fs::exists(dir / "dynamics.bin"));
  std::string states = ReadFile(dir / "states.csv");
  EXPECT_EQ(states.substr(0, states.find('\n')), "index,s0,s1,s2");
  EXPECT_EQ(std::count(states.begin(), states.end(), '\n'), 401);
  auto dump = ReadCandidateDump((dir / "candidates.bin").string());
  ASSERT_EQ(dump.size(), 2u);
  EXPECT_EQ(dump[0].candidates.rows(), 16);
  EXPECT_EQ(dump[0].actions.cols(), 5);
  EXPECT_EQ(dump[0].returns.size(), 16u);
  fs::remove_all(dir);
}

TEST(Training, ScheduleValidation) {
  AgentConfig cfg = TinyConfig();
  cfg.initial_random_timesteps = 150;
  try {
    RunTraining(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.initial_random_timesteps");
  }
  cfg = TinyConfig();
  cfg.total_timesteps = 650;
  EXPECT_THROW(RunTraining(cfg), ConfigError);
}

TEST(RunRecord, CsvLeavesMissingFieldsEmpty) {
  RunRecord r;
  r.rows.push_back({200, 0, -1.5, std::nullopt, std::nullopt, std::nullopt});
  r.rows.push_back({400, 1, 2.0, 0.25, 1e-3, std::nullopt});
  EXPECT_EQ(r.ToCsv(),
            "timestep,episode,mpc_return,policy_return,dyn_loss,distill_loss\n"
            "200,0,-1.5,,,\n"
            "400,1,2,0.25,0.001,\n");
}

// ----- evaluation ----- //

TEST(Evaluation, ZeroPolicyAppliesTheMidpointAction) {
  Pendulum env;
  FlatParams zero = MakePolicy(env.spec(), {8}, true, 0);
  ReturnStats s = EvaluatePolicyControl(zero, env, 2, 3);
  for (int e = 0; e < 2; ++e) {
    // oracle: zero torque from the same reset
    EnvState st = env.Reset(EpisodeResetSeed(3, e));
    double total = 0.0;
    while (!st.done) {
      auto [next, r] = env.Step(st, Vector{0.0});
      total += r;
      st = next;
    }
    EXPECT_EQ(s.returns[e], total);
  }
}

TEST(Evaluation, NeedsAtLeastOneEpisode) {
  Pendulum env;
  EXPECT_THROW(EvaluateRandom(env, 0, 0), UsageError);
}

TEST(Evaluation, TrueModelMpcBeatsRandom) {
  Pendulum env;
  TrueDynamics model(env);
  PlannerSettings settings;
  settings.variant = PlannerVariant::kPets;
  settings.cem.population = 100;
  settings.cem.elites = 10;
  settings.cem.iterations = 3;
  settings.cem.horizon = 15;
  settings.cem.init_sigma = 1.0;
  Planner planner(settings);
  double mpc = EvaluateMpc(planner, model, nullptr, env, 1, 0).mean;
  double random = EvaluateRandom(env, 3, 0).mean;
  EXPECT_GT(mpc, random);
}

}  // namespace
}  // namespace poplin
