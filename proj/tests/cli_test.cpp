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
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

constexpr char kSmallRun[] =
    "env.id = pendulum\n"
    "planner.variant = poplin-p-sep\n"
    "cem.population = 16\n"
    "cem.elites = 4\n"
    "cem.iterations = 2\n"
    "cem.horizon = 5\n"
    "policy.hidden = 4\n"
    "dynamics.ensemble_size = 2\n"
    "dynamics.hidden = 8\n"
    "dynamics.epochs = 1\n"
    "distill.epochs = 1\n"
    "train.total_timesteps = 400\n"
    "train.initial_random_timesteps = 200\n"
    "output.dump_step = 2\n";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("poplin_cli_" + std::string(
                                 ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path Write(const std::string& name, const std::string& text) {
    fs::path p = root_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Exit status of `poplin <args>`; stdout and stderr land in `log_`.
  int Run(const std::string& args) {
    log_ = (root_ / "log.txt").string();
    std::string cmd = std::string(POPLIN_CLI) + " " + args + " > " + log_ + " 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string Log() const { return Read(log_); }

  static std::string Read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static std::string FirstLine(const std::string& text) { return text.substr(0, text.find('\n')); }

  static long Lines(const std::string& text) { return std::count(text.begin(), text.end(), '\n'); }

  std::string TrainSmall(const std::string& name, const std::string& extra = "") {
    fs::path cfg = Write(name + ".cfg", kSmallRun);
    fs::path out = root_ / name;
    EXPECT_EQ(Run("train " + cfg.string() + " --output " + out.string() + extra), 0) << Log();
    return out.string();
  }

  fs::path root_;
  std::string log_;
};

TEST_F(Cli, TrainWritesTheRunDirectory) {
  fs::path out = TrainSmall("run");
  EXPECT_NE(Log().find("wrote 2 rows"), std::string::npos) << Log();
  std::string csv = Read(out / "run.csv");
  EXPECT_EQ(FirstLine(csv), "timestep,episode,mpc_return,policy_return,dyn_loss,distill_loss");
  EXPECT_EQ(Lines(csv), 3);
  for (const char* f : {"config.txt", "policy.bin", "dynamics.bin", "states.csv",
                        "candidates.bin", "candidates.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_EQ(FirstLine(Read(out / "candidates.csv")), "iteration,candidate,return,elite_rank");
}

TEST_F(Cli, RerunIsByteIdentical) {
  fs::path a = TrainSmall("a");
  fs::path b = TrainSmall("b");
  EXPECT_EQ(Read(a / "run.csv"), Read(b / "run.csv"));
  EXPECT_EQ(Read(a / "policy.bin"), Read(b / "policy.bin"));
}

TEST_F(Cli, EchoedConfigReproducesTheRun) {
  fs::path a = TrainSmall("a");
  fs::path b = root_ / "b";
  ASSERT_EQ(Run("train " + (a / "config.txt").string() + " --output " + b.string()), 0) << Log();
  EXPECT_EQ(Read(a / "run.csv"), Read(b / "run.csv"));
}

TEST_F(Cli, SetOverridesTheFile) {
  fs::path a = TrainSmall("a");
  fs::path b = TrainSmall("b", " --set seed=1");
  EXPECT_NE(Read(b / "config.txt").find("seed = 1\n"), std::string::npos);
  EXPECT_NE(Read(a / "run.csv"), Read(b / "run.csv"));
}

TEST_F(Cli, InvalidConfigExitsWithTwoAndNamesTheKey) {
  fs::path cfg = Write("bad.cfg", "cem.population = 10\ncem.elites = 20\n");
  EXPECT_EQ(Run("train " + cfg.string() + " --output " + (root_ / "out").string()), 2);
  EXPECT_NE(Log().find("cem.elites"), std::string::npos) << Log();
}

TEST_F(Cli, UnknownKeyExitsWithTwo) {
  fs::path cfg = Write("bad.cfg", "cem.popsize = 10\n");
  EXPECT_EQ(Run("train " + cfg.string() + " --output " + (root_ / "out").string()), 2);
  EXPECT_NE(Log().find("cem.popsize"), std::string::npos) << Log();
}

TEST_F(Cli, MissingSubcommandFails) { EXPECT_NE(Run(""), 0); }

TEST_F(Cli, EvalWritesOneRowPerEpisode) {
  fs::path out = TrainSmall("run");
  ASSERT_EQ(Run("eval " + out.string() + " --mode policy --episodes 2"), 0) << Log();
  std::string csv = Read(out / "eval.csv");
  EXPECT_EQ(FirstLine(csv), "episode,return");
  EXPECT_EQ(Lines(csv), 3);
}

TEST_F(Cli, EvalIsRepeatable) {
  fs::path out = TrainSmall("run");
  ASSERT_EQ(Run("eval " + out.string() + " --mode mpc --episodes 1 --seed 5"), 0) << Log();
  std::string first = Read(out / "eval.csv");
  ASSERT_EQ(Run("eval " + out.string() + " --mode mpc --episodes 1 --seed 5"), 0) << Log();
  EXPECT_EQ(Read(out / "eval.csv"), first);
}

TEST_F(Cli, MpcEvalNeedsTheDynamicsCheckpoint) {
  fs::path out = TrainSmall("run");
  fs::remove(out / "dynamics.bin");
  EXPECT_EQ(Run("eval " + out.string() + " --mode mpc"), 1);
  EXPECT_EQ(Run("eval " + out.string() + " --mode mpc --true-model"), 0) << Log();
}

TEST_F(Cli, EvalOfMissingDirectoryFails) {
  EXPECT_EQ(Run("eval " + (root_ / "nothing").string()), 1);
}

TEST_F(Cli, SurfaceWritesResolutionSquaredRows) {
  fs::path out = TrainSmall("run");
  for (const char* space : {"action", "parameter"}) {
    ASSERT_EQ(Run("surface " + out.string() + " --space " + space +
                  " --resolution 4 --state-index 10"),
              0)
        << Log();
    EXPECT_NE(Log().find("smoothness"), std::string::npos);
    std::string csv = Read(out / "surface.csv");
    EXPECT_EQ(FirstLine(csv), "u,v,return");
    EXPECT_EQ(Lines(csv), 17);
  }
  EXPECT_NE(Run("surface " + out.string() + " --state-index 100000"), 0);
  ASSERT_EQ(Run("surface " + out.string() + " --resolution 1"), 0) << Log();
  EXPECT_EQ(Lines(Read(out / "surface.csv")), 2);
}

TEST_F(Cli, PcaScatterCoversEveryCandidate) {
  fs::path out = TrainSmall("run");
  ASSERT_EQ(Run("pca " + out.string() + " --space parameter"), 0) << Log();
  std::string csv = Read(out / "pca_scatter.csv");
  EXPECT_EQ(FirstLine(csv), "iteration,u,v,return");
  EXPECT_EQ(Lines(csv), 1 + 2 * 16);
}

}  // namespace
