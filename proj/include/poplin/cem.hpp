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

// Cross-entropy method over a diagonal Gaussian.
//
// Each iteration samples `population` candidates from N(mean, diag(var)),
// scores them, keeps the top `elites` by score (ties go to the lower
// candidate index, non-finite scores never qualify) and blends the elite
// statistics into the distribution:
//
//   mean <- alpha * mean + (1 - alpha) * elite_mean
//   var  <- max(alpha * var + (1 - alpha) * elite_var, variance_floor)
//
// so `alpha` is the fraction of the previous distribution that is retained.
//
// Candidate k of iteration j is drawn from its own random stream derived from
// (seed, j, k). Candidates are scored in fixed-size chunks that may run on
// several threads; the chunking does not depend on the thread count, so
// serial and parallel runs agree bitwise.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "poplin/common.hpp"

namespace poplin {

struct CemConfig {
  int population = 400;
  int elites = 40;
  int iterations = 5;
  double alpha = 0.1;
  double init_sigma = 0.1;
  int horizon = 30;
  double variance_floor = 1e-8;

  void Validate() const {
    if (population < 1) throw ConfigError("cem.population", "must be >= 1");
    if (elites < 1) throw ConfigError("cem.elites", "must be >= 1");
    if (elites > population) {
      throw ConfigError("cem.elites", "must not exceed cem.population");
    }
    if (iterations < 1) throw ConfigError("cem.iterations", "must be >= 1");
    if (horizon < 1) throw ConfigError("cem.horizon", "must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("cem.alpha", "must lie in [0, 1]");
    if (!(variance_floor >= 0.0)) throw ConfigError("cem.variance_floor", "must be >= 0");
    if (!(init_sigma >= 0.0)) throw ConfigError("cem.init_sigma", "must be >= 0");
    // a degenerate zero-width search is allowed only with a zero floor
    if (init_sigma == 0.0 && variance_floor != 0.0) {
      throw ConfigError("cem.init_sigma", "zero sigma requires cem.variance_floor = 0");
    }
  }
};

struct GaussianSearchDist {
  Vector mean;
  Vector var;  // diagonal covariance

  std::size_t dim() const { return mean.size(); }
};

struct CemIterationTrace {
  Eigen::MatrixXd candidates;  // dim x population
  Eigen::MatrixXd actions;     // induced action sequences, if the objective reports them
  Vector returns;
  std::vector<int> elites;     // indices, best first
  double mean_elite_return = kNegInf;
  GaussianSearchDist dist_after;
};

struct CemTrace {
  std::vector<CemIterationTrace> iterations;
};

// Scores candidates (columns of `candidates`) into `returns`. When `actions`
// is non-null the objective may fill it with the induced action sequence of
// each candidate (one column per candidate). Must be safe to call
// concurrently on disjoint blocks.
using BatchObjective = std::function<void(const Eigen::MatrixXd& candidates,
                                          std::span<double> returns,
                                          Eigen::MatrixXd* actions)>;

using Objective = std::function<double(std::span<const double>)>;

struct CemOptions {
  std::optional<Vector> initial_mean;  // zero when absent
  std::optional<Vector> initial_var;   // init_sigma^2 when absent
  bool record = false;
  // Replaces candidate 0 of the first iteration with the initial mean.
  bool include_mean_candidate = false;
  // Applied to returns before ranking; best-candidate bookkeeping uses the
  // raw returns.
  std::function<double(double)> score_transform;
  int chunk_size = 32;
  int threads = 0;  // 0: ThreadCount()
};

struct CemResult {
  Vector best_candidate;
  double best_return = kNegInf;
  GaussianSearchDist final_dist;
  CemTrace trace;
};

namespace detail {

inline void SampleCandidate(const GaussianSearchDist& dist, std::uint64_t seed,
                            int iteration, int index, double* out) {
  Rng rng = MakeRng(seed, {static_cast<std::uint64_t>(iteration),
                           static_cast<std::uint64_t>(index)});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < dist.dim(); ++i) {
    out[i] = dist.mean[i] + std::sqrt(dist.var[i]) * normal(rng);
  }
}

}  // namespace detail

// Indices of the top `count` finite scores, best first, ties to lower index.
inline std::vector<int> SelectElites(std::span<const double> scores, int count) {
  std::vector<int> idx;
  idx.reserve(scores.size());
  for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
    if (std::isfinite(scores[i])) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  if (static_cast<int>(idx.size()) > count) idx.resize(count);
  return idx;
}

inline CemResult CemOptimize(const BatchObjective& objective, int dim,
                             const CemConfig& cfg, std::uint64_t seed,
                             const CemOptions& opts = {}) {
  cfg.Validate();
  if (dim < 1) throw UsageError("CEM dimension must be positive");
  const int k = cfg.population;

  GaussianSearchDist dist;
  dist.mean = opts.initial_mean.value_or(Vector(dim, 0.0));
  dist.var = opts.initial_var.value_or(Vector(dim, cfg.init_sigma * cfg.init_sigma));
  if (static_cast<int>(dist.mean.size()) != dim || static_cast<int>(dist.var.size()) != dim) {
    throw UsageError("initial distribution has wrong dimension");
  }

  CemResult result;
  result.best_candidate = dist.mean;
  const int chunk = std::max(1, opts.chunk_size);
  const int num_chunks = (k + chunk - 1) / chunk;
  const int threads = opts.threads > 0 ? opts.threads : ThreadCount();
  bool any_finite = false;

  Eigen::MatrixXd candidates(dim, k);
  Vector returns(k);
  Vector scores(k);
  Eigen::MatrixXd actions;
  for (int j = 0; j < cfg.iterations; ++j) {
    if (opts.record) actions.resize(0, k);
    ParallelFor(
        num_chunks,
        [&](int c) {
          const int begin = c * chunk;
          const int count = std::min(chunk, k - begin);
          for (int i = begin; i < begin + count; ++i) {
            if (j == 0 && i == 0 && opts.include_mean_candidate) {
              std::copy(dist.mean.begin(), dist.mean.end(), candidates.col(i).data());
            } else {
              detail::SampleCandidate(dist, seed, j, i, candidates.col(i).data());
            }
          }
          Eigen::MatrixXd block = candidates.middleCols(begin, count);
          Eigen::MatrixXd block_actions;
          objective(block, std::span<double>(returns).subspan(begin, count),
                    opts.record ? &block_actions : nullptr);
          // recording runs serially, so the first chunk may size the matrix
          if (opts.record && block_actions.cols() == count) {
            if (actions.rows() != block_actions.rows()) actions.resize(block_actions.rows(), k);
            actions.middleCols(begin, count) = block_actions;
          }
        },
        opts.record ? 1 : threads);

    for (int i = 0; i < k; ++i) {
      if (std::isnan(returns[i])) returns[i] = kNegInf;
      scores[i] = opts.score_transform ? opts.score_transform(returns[i]) : returns[i];
      if (std::isnan(scores[i])) scores[i] = kNegInf;
      if (returns[i] > result.best_return) {
        result.best_return = returns[i];
        result.best_candidate.assign(candidates.col(i).data(), candidates.col(i).data() + dim);
      }
    }

    std::vector<int> elites = SelectElites(scores, cfg.elites);
    double elite_return = kNegInf;
    if (!elites.empty()) {
      any_finite = true;
      const double m = static_cast<double>(elites.size());
      elite_return = 0.0;
      for (int e : elites) elite_return += returns[e];
      elite_return /= m;
      for (int d = 0; d < dim; ++d) {
        double mu = 0.0;
        for (int e : elites) mu += candidates(d, e);
        mu /= m;
        double var = 0.0;
        for (int e : elites) {
          double diff = candidates(d, e) - mu;
          var += diff * diff;
        }
        var /= m;
        dist.mean[d] = cfg.alpha * dist.mean[d] + (1.0 - cfg.alpha) * mu;
        dist.var[d] =
            std::max(cfg.alpha * dist.var[d] + (1.0 - cfg.alpha) * var, cfg.variance_floor);
      }
    }
    if (opts.record) {
      CemIterationTrace it;
      it.candidates = candidates;
      it.actions = actions;
      it.returns = returns;
      it.elites = elites;
      it.mean_elite_return = elite_return;
      it.dist_after = dist;
      result.trace.iterations.push_back(std::move(it));
    }
  }
  if (!any_finite) {
    throw PlannerError("CEM: every candidate scored non-finite in every iteration");
  }
  result.final_dist = std::move(dist);
  return result;
}

// Single-candidate objective convenience overload.
inline CemResult CemOptimize(const Objective& objective, int dim, const CemConfig& cfg,
                             std::uint64_t seed, const CemOptions& opts = {}) {
  BatchObjective batch = [&objective](const Eigen::MatrixXd& cands, std::span<double> out,
                                      Eigen::MatrixXd*) {
    for (Eigen::Index c = 0; c < cands.cols(); ++c) {
      out[c] = objective({cands.col(c).data(), static_cast<std::size_t>(cands.rows())});
    }
  };
  return CemOptimize(batch, dim, cfg, seed, opts);
}

}  // namespace poplin
