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

#include <string>

#include "poplin/config.hpp"

namespace poplin {
namespace {

std::string ErrorKey(const std::string& text) {
  try {
    ParseConfig(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  AgentConfig cfg = ParseConfig(
      "# cartpole run\n"
      "env.id = cartpole\n"
      "\n"
      "  cem.population=300  \n"
      "cem.elites = 30\n"
      "cem.alpha = 0.25\n"
      "planner.variant = poplin-p-sep\n"
      "policy.hidden = 16,16\n"
      "policy.zero_init = true\n"
      "dynamics.mode = deterministic\n"
      "distill.scheme = gan\n"
      "distill.data = hallucination\n"
      "seed = 12\n");
  EXPECT_EQ(cfg.env_id, "cartpole");
  EXPECT_EQ(cfg.planner.cem.population, 300);
  EXPECT_EQ(cfg.planner.cem.elites, 30);
  EXPECT_EQ(cfg.planner.cem.alpha, 0.25);
  EXPECT_EQ(cfg.planner.variant, PlannerVariant::kPoplinPSep);
  EXPECT_EQ(cfg.policy_hidden, (std::vector<int>{16, 16}));
  EXPECT_TRUE(cfg.policy_zero_init);
  EXPECT_EQ(cfg.ensemble.mode, ModelMode::kDeterministic);
  EXPECT_EQ(cfg.distill.scheme, DistillScheme::kGan);
  EXPECT_EQ(cfg.distill.data, DistillData::kHallucination);
  EXPECT_EQ(cfg.seed, 12u);
}

TEST(Config, EmptyTextGivesDefaults) {
  AgentConfig cfg = ParseConfig("");
  AgentConfig defaults;
  EXPECT_EQ(EchoConfig(cfg), EchoConfig(defaults));
}

TEST(Config, NoneMeansNoHiddenLayers) {
  EXPECT_TRUE(ParseConfig("policy.hidden = none\n").policy_hidden.empty());
}

TEST(Config, EchoRoundTrips) {
  AgentConfig cfg = ParseConfig(
      "env.id = reacher2d\ncem.init_sigma = 0.03\ncem.horizon = 20\n"
      "train.total_timesteps = 1000\ntrain.initial_random_timesteps = 100\n"
      "output.dir = /tmp/x\n");
  std::string echo = EchoConfig(cfg);
  EXPECT_EQ(EchoConfig(ParseConfig(echo)), echo);
  EXPECT_EQ(ParseConfig(echo).planner.cem.init_sigma, 0.03);
}

TEST(Config, BaseIsOverridden) {
  AgentConfig base = ParseConfig("seed = 3\ncem.population = 100\ncem.elites = 10\n");
  AgentConfig cfg = ParseConfig("seed = 4\n", base);
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_EQ(cfg.planner.cem.population, 100);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(ErrorKey("cem.populaton = 5\n"), "cem.populaton");
  EXPECT_EQ(ErrorKey("seed = 1\nseed = 2\n"), "seed");
  EXPECT_EQ(ErrorKey("cem.population = 10\ncem.elites = 20\n"), "cem.elites");
  EXPECT_EQ(ErrorKey("cem.population = ten\n"), "cem.population");
  EXPECT_EQ(ErrorKey("cem.alpha = 2\n"), "cem.alpha");
  EXPECT_EQ(ErrorKey("env.id = hopper\n"), "env.id");
  EXPECT_EQ(ErrorKey("policy.zero_init = maybe\n"), "policy.zero_init");
  EXPECT_EQ(ErrorKey("dynamics.mode = exact\n"), "dynamics.mode");
  EXPECT_EQ(ErrorKey("train.initial_random_timesteps = 150\n"),
            "train.initial_random_timesteps");
  EXPECT_EQ(ErrorKey("planner.execute = worst\n"), "planner.execute");
}

TEST(Config, LineWithoutEqualsIsRejected) {
  EXPECT_THROW(ParseConfig("seed 4\n"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"pendulum_zero_policy.cfg", "cartpole_bc.cfg"}) {
    EXPECT_NO_THROW(LoadConfig(std::string(POPLIN_CONFIG_DIR) + "/" + name)) << name;
  }
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW(LoadConfig("/nonexistent/poplin.cfg"), ConfigError);
}

}  // namespace
}  // namespace poplin
