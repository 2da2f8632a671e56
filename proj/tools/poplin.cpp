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

// poplin: training, evaluation and analysis front end.
//
//   poplin train CONFIG [--output DIR] [--set key=value]...
//   poplin eval DIR --mode mpc|policy [--episodes N] [--seed S] [--true-model]
//   poplin surface DIR --space action|parameter [--state-index I]
//                  [--span X] [--resolution R] [--seed S]
//   poplin pca DIR [--space action|parameter]

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "poplin/poplin.hpp"

namespace fs = std::filesystem;

namespace {

using poplin::AgentConfig;

void WriteFile(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

fs::path RequireFile(const fs::path& dir, const std::string& name) {
  fs::path p = dir / name;
  if (!fs::is_regular_file(p)) throw std::runtime_error("missing " + p.string());
  return p;
}

AgentConfig LoadRunConfig(const fs::path& dir) {
  return poplin::LoadConfig(RequireFile(dir, "config.txt").string());
}

std::vector<poplin::Vector> LoadStates(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);  // header
  std::vector<poplin::Vector> states;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // index
    poplin::Vector s;
    while (std::getline(ss, cell, ',')) s.push_back(std::stod(cell));
    states.push_back(std::move(s));
  }
  return states;
}

int CmdTrain(const std::string& config_path, const std::string& output,
             const std::vector<std::string>& overrides) {
  std::ifstream is(config_path);
  if (!is) throw poplin::ConfigError("", "cannot read config file " + config_path);
  std::stringstream text, extra;
  text << is.rdbuf();
  for (const auto& o : overrides) extra << o << '\n';
  AgentConfig cfg = poplin::ParseConfig(extra.str(), poplin::ParseConfig(text.str()));
  if (!output.empty()) cfg.output_dir = output;
  if (cfg.output_dir.empty()) throw poplin::ConfigError("output.dir", "no output directory");
  fs::create_directories(cfg.output_dir);
  WriteFile(fs::path(cfg.output_dir) / "config.txt", poplin::EchoConfig(cfg));
  poplin::TrainingResult result = poplin::RunTraining(cfg);
  const auto& rows = result.record.rows;
  std::printf("wrote %zu rows to %s\n", rows.size(),
              (fs::path(cfg.output_dir) / "run.csv").string().c_str());
  if (!rows.empty()) std::printf("final mpc return %.4f\n", rows.back().mpc_return);
  return 0;
}

int CmdEval(const fs::path& dir, const std::string& mode, int episodes, std::uint64_t seed,
            bool true_model) {
  AgentConfig cfg = LoadRunConfig(dir);
  auto env = poplin::MakeEnvironment(cfg.env_id);
  poplin::ReturnStats stats;
  if (mode == "policy") {
    poplin::FlatParams policy = poplin::LoadParams(RequireFile(dir, "policy.bin").string());
    stats = poplin::EvaluatePolicyControl(policy, *env, episodes, seed);
  } else if (mode == "mpc") {
    std::optional<poplin::FlatParams> policy;
    if (poplin::UsesPolicy(cfg.planner.variant)) {
      policy = poplin::LoadParams(RequireFile(dir, "policy.bin").string());
    }
    poplin::Planner planner(cfg.planner);
    const poplin::FlatParams* pp = policy ? &*policy : nullptr;
    if (true_model) {
      poplin::TrueDynamics model(*env);
      stats = poplin::EvaluateMpc(planner, model, pp, *env, episodes, seed);
    } else {
      poplin::DynamicsEnsemble model =
          poplin::LoadEnsemble(RequireFile(dir, "dynamics.bin").string());
      stats = poplin::EvaluateMpc(planner, model, pp, *env, episodes, seed);
    }
  } else {
    throw poplin::UsageError("--mode must be mpc or policy");
  }
  std::ostringstream csv;
  csv << "episode,return\n";
  for (std::size_t e = 0; e < stats.returns.size(); ++e) {
    csv << e << ',' << poplin::RunRecord::FormatDouble(stats.returns[e]) << '\n';
  }
  WriteFile(dir / "eval.csv", csv.str());
  std::printf("%s return %.4f +- %.4f over %d episodes\n", mode.c_str(), stats.mean, stats.std,
              episodes);
  return 0;
}

int CmdSurface(const fs::path& dir, const std::string& space_name, int state_index,
               double span, int resolution, std::uint64_t seed) {
  AgentConfig cfg = LoadRunConfig(dir);
  auto env = poplin::MakeEnvironment(cfg.env_id);
  const poplin::SurfaceSpace space = poplin::ParseSurfaceSpace(space_name);
  auto states = LoadStates(RequireFile(dir, "states.csv"));
  if (state_index < 0 || state_index >= static_cast<int>(states.size())) {
    throw poplin::UsageError("--state-index outside the " + std::to_string(states.size()) +
                             " recorded states");
  }
  poplin::DynamicsEnsemble model = poplin::LoadEnsemble(RequireFile(dir, "dynamics.bin").string());
  std::optional<poplin::FlatParams> policy;
  if (space == poplin::SurfaceSpace::kParameter) {
    policy = poplin::LoadParams(RequireFile(dir, "policy.bin").string());
  }
  const auto mode = cfg.planner.variant == poplin::PlannerVariant::kPoplinPSep
                        ? poplin::ParamNoiseMode::kSep
                        : poplin::ParamNoiseMode::kUni;
  poplin::SurfaceResult surface = poplin::PlannerSurface(
      space, states[state_index], model, *env, policy ? &*policy : nullptr, cfg.planner.cem,
      seed, span, resolution, mode);
  WriteFile(dir / "surface.csv", surface.grid.ToCsv());
  std::printf("smoothness %.6g (span %.6g, %d cells excluded)\n", surface.smoothness.score,
              surface.span, surface.smoothness.excluded_cells);
  return 0;
}

int CmdPca(const fs::path& dir, const std::string& space_name) {
  const poplin::SurfaceSpace space = poplin::ParseSurfaceSpace(space_name);
  auto dump = poplin::ReadCandidateDump(RequireFile(dir, "candidates.bin").string());
  Eigen::Index rows = 0;
  for (const auto& it : dump) rows += it.candidates.rows();
  const auto& first = space == poplin::SurfaceSpace::kAction ? dump.front().actions
                                                             : dump.front().candidates;
  Eigen::MatrixXd all(rows, first.cols());
  Eigen::Index r = 0;
  for (const auto& it : dump) {
    const auto& m = space == poplin::SurfaceSpace::kAction ? it.actions : it.candidates;
    if (m.cols() != all.cols()) throw poplin::FormatError("inconsistent candidate widths");
    all.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  poplin::PcaModel pca = poplin::PcaFit(all);
  std::ostringstream csv;
  csv << "iteration,u,v,return\n";
  r = 0;
  for (std::size_t j = 0; j < dump.size(); ++j) {
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(dump[j].returns.size()); ++c, ++r) {
      auto uv = pca.Project(all.row(r).transpose());
      csv << j << ',' << poplin::RunRecord::FormatDouble(uv[0]) << ','
          << poplin::RunRecord::FormatDouble(uv[1]) << ','
          << poplin::RunRecord::FormatDouble(dump[j].returns[c]) << '\n';
    }
  }
  WriteFile(dir / "pca_scatter.csv", csv.str());
  std::printf("explained variance %.6g %.6g\n", pca.explained_variance[0],
              pca.explained_variance[1]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"POPLIN model-based planning toolkit"};
  app.require_subcommand(1);

  std::string config_path, output;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "run training from a config file");
  train->add_option("config", config_path, "config file")->required();
  train->add_option("--output", output, "output directory (overrides output.dir)");
  train->add_option("--set", overrides, "key=value applied after the file");

  std::string dir, mode = "policy", space = "action";
  int episodes = 1, state_index = 0, resolution = 21;
  std::uint64_t seed = 0;
  double span = 0.0;
  bool true_model = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint directory");
  eval->add_option("dir", dir, "checkpoint directory")->required();
  eval->add_option("--mode", mode, "mpc or policy")->check(CLI::IsMember({"mpc", "policy"}));
  eval->add_option("--episodes", episodes, "episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_flag("--true-model", true_model, "plan with the analytic dynamics");

  auto* surface = app.add_subcommand("surface", "return surface on a PCA plane");
  surface->add_option("dir", dir, "checkpoint directory")->required();
  surface->add_option("--space", space, "action or parameter")
      ->check(CLI::IsMember({"action", "parameter"}));
  surface->add_option("--state-index", state_index, "row of states.csv");
  surface->add_option("--span", span, "half width of the grid; 0 picks 3 std devs");
  surface->add_option("--resolution", resolution, "grid points per axis")
      ->check(CLI::PositiveNumber);
  surface->add_option("--seed", seed, "planner seed");

  auto* pca = app.add_subcommand("pca", "PCA scatter of a candidate dump");
  pca->add_option("dir", dir, "run directory holding candidates.bin")->required();
  pca->add_option("--space", space, "action or parameter")
      ->check(CLI::IsMember({"action", "parameter"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return CmdTrain(config_path, output, overrides);
    if (*eval) return CmdEval(dir, mode, episodes, seed, true_model);
    if (*surface) return CmdSurface(dir, space, state_index, span, resolution, seed);
    if (*pca) return CmdPca(dir, space);
  } catch (const poplin::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
