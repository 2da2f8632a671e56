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

// Planner return surfaces at one state.
//
// Action space: PETS is run with recording, PCA is fit on every candidate
// action sequence of every iteration and the surface is centered on the final
// mean. Parameter space: the same with POPLIN-P and flat parameter-noise
// candidates, scored as perturbed policies.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string_view>

#include "poplin/analysis.hpp"
#include "poplin/cem.hpp"
#include "poplin/planner.hpp"

namespace poplin {

enum class SurfaceSpace { kAction, kParameter };

inline SurfaceSpace ParseSurfaceSpace(std::string_view s) {
  if (s == "action") return SurfaceSpace::kAction;
  if (s == "parameter") return SurfaceSpace::kParameter;
  throw UsageError("surface space must be action or parameter");
}

struct SurfaceResult {
  SurfaceGrid grid;
  Smoothness smoothness;
  PcaModel pca;
  double span = 0.0;
};

// Stacks the candidates of every traced iteration as rows.
inline Eigen::MatrixXd StackCandidates(const CemTrace& trace) {
  Eigen::Index rows = 0;
  for (const auto& it : trace.iterations) rows += it.candidates.cols();
  Require(!trace.iterations.empty(), "empty planner trace");
  Eigen::MatrixXd out(rows, trace.iterations.front().candidates.rows());
  Eigen::Index r = 0;
  for (const auto& it : trace.iterations) {
    out.middleRows(r, it.candidates.cols()) = it.candidates.transpose();
    r += it.candidates.cols();
  }
  return out;
}

// `span` <= 0 selects 3 standard deviations along the first component.
template <typename Model>
SurfaceResult PlannerSurface(SurfaceSpace space, std::span<const double> state,
                             const Model& model, const Environment& env,
                             const FlatParams* policy, const CemConfig& cfg, std::uint64_t seed,
                             double span, int resolution,
                             ParamNoiseMode mode = ParamNoiseMode::kUni) {
  PlanOptions opts;
  opts.record = true;
  PlanOutcome plan;
  SurfaceObjective objective;
  if (space == SurfaceSpace::kAction) {
    plan = PlanPets(state, model, env, cfg, std::nullopt, seed, opts);
    objective = [&](const Eigen::MatrixXd& pts, std::span<double> out) {
      ScoreActionSequences(state, model, env, cfg.horizon, pts, out);
    };
  } else {
    if (policy == nullptr) throw UsageError("parameter-space surface needs a policy");
    plan = PlanPoplinP(state, *policy, model, env, cfg, mode, seed, opts);
    objective = [&](const Eigen::MatrixXd& pts, std::span<double> out) {
      ScoreParameterNoise(state, *policy, model, env, cfg.horizon, mode, pts, out);
    };
  }
  SurfaceResult result;
  result.pca = PcaFit(StackCandidates(*plan.trace));
  result.span = span > 0 ? span : 3.0 * std::sqrt(result.pca.explained_variance[0]);
  Eigen::VectorXd center =
      Eigen::Map<const Eigen::VectorXd>(plan.final_dist.mean.data(),
                                        static_cast<Eigen::Index>(plan.final_dist.mean.size()));
  result.grid = ComputeSurface(objective, result.pca, center, result.span, resolution);
  result.smoothness = SmoothnessScore(result.grid.values);
  return result;
}

}  // namespace poplin
