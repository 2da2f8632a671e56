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

// Diagnostics over planner candidates: a two-component PCA of candidate
// vectors, return surfaces on the PCA plane and a roughness score for them.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "poplin/common.hpp"

namespace poplin {

struct PcaModel {
  Eigen::VectorXd mean;
  std::array<Eigen::VectorXd, 2> components;
  std::array<double, 2> explained_variance{};

  std::array<double, 2> Project(const Eigen::VectorXd& x) const {
    Eigen::VectorXd d = x - mean;
    return {components[0].dot(d), components[1].dot(d)};
  }
};

// Top-2 principal components of the rows of `rows` (N x D). Variance uses the
// 1/N normalization. Each component's largest-magnitude entry is positive.
inline PcaModel PcaFit(const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 2) throw UsageError("PCA needs at least two rows");
  if (d < 2) throw UsageError("PCA needs at least two dimensions");
  PcaModel model;
  model.mean = rows.colwise().mean().transpose();
  Eigen::MatrixXd centered = rows.rowwise() - model.mean.transpose();
  const double scale = 1.0 / static_cast<double>(n);

  Eigen::MatrixXd top(d, 2);
  if (d <= n) {
    Eigen::MatrixXd cov = scale * (centered.transpose() * centered);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    // ascending eigenvalues
    for (int k = 0; k < 2; ++k) {
      top.col(k) = eig.eigenvectors().col(d - 1 - k);
      model.explained_variance[k] = std::max(0.0, eig.eigenvalues()(d - 1 - k));
    }
  } else {
    // Gram form: X X^T shares the nonzero spectrum; v = X^T u / |X^T u|
    Eigen::MatrixXd gram = scale * (centered * centered.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd v = centered.transpose() * eig.eigenvectors().col(n - 1 - k);
      double norm = v.norm();
      if (norm > 0) {
        v /= norm;
      } else {
        v = Eigen::VectorXd::Zero(d);
      }
      top.col(k) = v;
      model.explained_variance[k] = std::max(0.0, eig.eigenvalues()(n - 1 - k));
    }
    // a zero-variance second direction still needs an orthonormal vector
    if (top.col(1).squaredNorm() == 0 || top.col(0).squaredNorm() == 0) {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(top);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, 2);
      if (top.col(0).squaredNorm() == 0) top.col(0) = q.col(0);
      if (top.col(1).squaredNorm() == 0) {
        Eigen::VectorXd v = q.col(1) - q.col(1).dot(top.col(0)) * top.col(0);
        top.col(1) = v.normalized();
      }
    }
  }
  for (int k = 0; k < 2; ++k) {
    Eigen::Index arg = 0;
    top.col(k).cwiseAbs().maxCoeff(&arg);
    if (top(arg, k) < 0) top.col(k) = -top.col(k);
    model.components[k] = top.col(k);
  }
  return model;
}

struct SurfaceGrid {
  int resolution = 0;
  Vector u;                     // axis coordinates, length resolution
  Vector v;
  std::vector<Vector> values;   // values[i][j] at (u[i], v[j])

  std::string ToCsv() const {
    std::ostringstream os;
    os.precision(10);
    os << "u,v,return\n";
    for (int i = 0; i < resolution; ++i) {
      for (int j = 0; j < resolution; ++j) os << u[i] << ',' << v[j] << ',' << values[i][j] << '\n';
    }
    return os.str();
  }
};

inline Vector GridAxis(double span, int resolution) {
  Vector axis(resolution);
  for (int i = 0; i < resolution; ++i) {
    axis[i] = resolution == 1 ? 0.0 : -span + 2.0 * span * i / (resolution - 1);
  }
  return axis;
}

// Scores the columns of `points` (D x n) into `out`.
using SurfaceObjective = std::function<void(const Eigen::MatrixXd& points, std::span<double> out)>;

// objective(center + u c1 + v c2) on a resolution x resolution grid with
// u, v in [-span, span].
inline SurfaceGrid ComputeSurface(const SurfaceObjective& objective, const PcaModel& pca,
                                  const Eigen::VectorXd& center, double span, int resolution) {
  if (resolution < 1) throw UsageError("surface resolution must be >= 1");
  if (!(span >= 0)) throw UsageError("surface span must be >= 0");
  if (center.size() != pca.components[0].size()) {
    throw UsageError("surface center does not match the PCA dimension");
  }
  SurfaceGrid grid;
  grid.resolution = resolution;
  grid.u = GridAxis(span, resolution);
  grid.v = GridAxis(span, resolution);
  const int n = resolution * resolution;
  Eigen::MatrixXd points(center.size(), n);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      points.col(i * resolution + j) =
          center + grid.u[i] * pca.components[0] + grid.v[j] * pca.components[1];
    }
  }
  Vector flat(n);
  objective(points, flat);
  grid.values.assign(resolution, Vector(resolution));
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) grid.values[i][j] = flat[i * resolution + j];
  }
  return grid;
}

struct Smoothness {
  double score = 0.0;
  int excluded_cells = 0;
};

// Mean absolute second difference along both grid axes divided by the range
// of the grid values. Cells that are not finite are excluded, as is every
// second difference touching one. A constant grid scores 0.
inline Smoothness SmoothnessScore(const std::vector<Vector>& grid) {
  Smoothness out;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const int rows = static_cast<int>(grid.size());
  for (const auto& row : grid) {
    for (double x : row) {
      if (std::isfinite(x)) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      } else {
        ++out.excluded_cells;
      }
    }
  }
  if (!(hi >= lo)) throw UsageError("smoothness of a grid without finite cells");
  const double range = hi - lo;
  if (range == 0.0) return out;
  double sum = 0.0;
  long count = 0;
  auto add = [&](double a, double b, double c) {
    if (std::isfinite(a) && std::isfinite(b) && std::isfinite(c)) {
      sum += std::abs(a - 2.0 * b + c);
      ++count;
    }
  };
  for (int i = 0; i < rows; ++i) {
    const int cols = static_cast<int>(grid[i].size());
    for (int j = 0; j < cols; ++j) {
      if (j >= 1 && j + 1 < cols) add(grid[i][j - 1], grid[i][j], grid[i][j + 1]);
      if (i >= 1 && i + 1 < rows && j < static_cast<int>(grid[i - 1].size()) &&
          j < static_cast<int>(grid[i + 1].size())) {
        add(grid[i - 1][j], grid[i][j], grid[i + 1][j]);
      }
    }
  }
  if (count > 0) out.score = sum / static_cast<double>(count) / range;
  return out;
}

}  // namespace poplin
