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

// Fully-connected networks over a single flat parameter vector.
//
// Flat layout (frozen; parameter averaging across runs depends on it): layers
// in order, and for each layer the weight matrix (out x in, row-major)
// followed by the bias (out). Hidden layers apply the shape's activation; the
// last layer is linear. Policies additionally squash the linear output with
// tanh and rescale it into the action box.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "poplin/common.hpp"

namespace poplin {

enum class Activation : std::uint32_t { kTanh = 0, kSwish = 1 };

inline std::string ToString(Activation a) {
  return a == Activation::kTanh ? "tanh" : "swish";
}

struct MlpShape {
  std::vector<int> layers;  // input, hidden..., output
  Activation hidden = Activation::kTanh;

  int input_dim() const { return layers.front(); }
  int output_dim() const { return layers.back(); }
  int num_layers() const { return static_cast<int>(layers.size()) - 1; }

  std::size_t ParamCount() const {
    std::size_t n = 0;
    for (int l = 0; l + 1 < static_cast<int>(layers.size()); ++l) {
      n += static_cast<std::size_t>(layers[l]) * layers[l + 1] + layers[l + 1];
    }
    return n;
  }

  void Validate() const {
    if (layers.size() < 2) throw UsageError("MlpShape needs at least input and output sizes");
    for (int n : layers) {
      if (n <= 0) throw UsageError("MlpShape layer sizes must be positive");
    }
  }

  // Offset of layer l's weights in the flat vector; its bias follows the
  // out*in weights.
  std::size_t LayerOffset(int l) const {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k) {
      off += static_cast<std::size_t>(layers[k]) * layers[k + 1] + layers[k + 1];
    }
    return off;
  }

  bool operator==(const MlpShape&) const = default;
};

// Parameters of one network as a flat vector. Also used for parameter noise,
// which shares the shape of the parameters it perturbs.
struct FlatParams {
  MlpShape shape;
  Vector values;

  FlatParams() = default;
  explicit FlatParams(MlpShape s) : shape(std::move(s)) {
    shape.Validate();
    values.assign(shape.ParamCount(), 0.0);
  }
  FlatParams(MlpShape s, Vector v) : shape(std::move(s)), values(std::move(v)) {
    shape.Validate();
    if (values.size() != shape.ParamCount()) {
      throw UsageError("FlatParams length does not match shape");
    }
  }

  std::size_t size() const { return values.size(); }
};

// Layer-by-layer view of the parameters.
struct StructuredParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMajorMatrix>;
using WeightMap = Eigen::Map<RowMajorMatrix>;

inline StructuredParams Unflatten(const FlatParams& p) {
  StructuredParams out;
  const double* ptr = p.values.data();
  for (int l = 0; l < p.shape.num_layers(); ++l) {
    int in = p.shape.layers[l];
    int o = p.shape.layers[l + 1];
    out.weights.emplace_back(ConstWeightMap(ptr, o, in));
    ptr += static_cast<std::ptrdiff_t>(o) * in;
    out.biases.emplace_back(Eigen::Map<const Eigen::VectorXd>(ptr, o));
    ptr += o;
  }
  return out;
}

inline FlatParams Flatten(const StructuredParams& s, const MlpShape& shape) {
  FlatParams p(shape);
  if (static_cast<int>(s.weights.size()) != shape.num_layers() ||
      s.biases.size() != s.weights.size()) {
    throw UsageError("structured params do not match shape");
  }
  double* ptr = p.values.data();
  for (int l = 0; l < shape.num_layers(); ++l) {
    int in = shape.layers[l];
    int o = shape.layers[l + 1];
    if (s.weights[l].rows() != o || s.weights[l].cols() != in ||
        s.biases[l].size() != o) {
      throw UsageError("structured params do not match shape");
    }
    WeightMap(ptr, o, in) = s.weights[l];
    ptr += static_cast<std::ptrdiff_t>(o) * in;
    Eigen::Map<Eigen::VectorXd>(ptr, o) = s.biases[l];
    ptr += o;
  }
  return p;
}

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) on weights and biases
inline FlatParams InitParams(const MlpShape& shape, Rng& rng) {
  FlatParams p(shape);
  std::size_t idx = 0;
  for (int l = 0; l < shape.num_layers(); ++l) {
    double bound = 1.0 / std::sqrt(static_cast<double>(shape.layers[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::size_t n = static_cast<std::size_t>(shape.layers[l]) * shape.layers[l + 1] +
                    shape.layers[l + 1];
    for (std::size_t k = 0; k < n; ++k) p.values[idx++] = dist(rng);
  }
  return p;
}

struct ActionBounds {
  Vector low;
  Vector high;
};

// ----- batched evaluation ----- //

// Per-layer pre-activations and outputs from a batched forward pass.
struct BatchCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // W x + b of each layer
};

namespace detail {

inline void ApplyActivation(Activation act, const Eigen::MatrixXd& z,
                            Eigen::MatrixXd& out) {
  if (act == Activation::kTanh) {
    out = z.array().tanh().matrix();
  } else {
    out = (z.array() / (1.0 + (-z.array()).exp())).matrix();
  }
}

// d act / dz evaluated at z, multiplied elementwise into grad
inline void ScaleByActivationDerivative(Activation act, const Eigen::MatrixXd& z,
                                        Eigen::MatrixXd& grad) {
  if (act == Activation::kTanh) {
    grad.array() *= 1.0 - z.array().tanh().square();
  } else {
    Eigen::ArrayXXd sig = 1.0 / (1.0 + (-z.array()).exp());
    grad.array() *= sig + z.array() * sig * (1.0 - sig);
  }
}

}  // namespace detail

// Linear output for each column of `x` (input_dim x batch). `params` points at
// ParamCount() values laid out as described at the top of this file.
inline Eigen::MatrixXd ForwardBatch(const MlpShape& shape, const double* params,
                                    const Eigen::MatrixXd& x,
                                    BatchCache* cache = nullptr) {
  if (x.rows() != shape.input_dim()) throw UsageError("input dimension mismatch");
  Eigen::MatrixXd h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  const double* ptr = params;
  for (int l = 0; l < shape.num_layers(); ++l) {
    int in = shape.layers[l];
    int o = shape.layers[l + 1];
    ConstWeightMap w(ptr, o, in);
    ptr += static_cast<std::ptrdiff_t>(o) * in;
    Eigen::Map<const Eigen::VectorXd> b(ptr, o);
    ptr += o;
    Eigen::MatrixXd z = w * h;
    z.colwise() += b;
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(z);
    }
    if (l + 1 < shape.num_layers()) {
      detail::ApplyActivation(shape.hidden, z, h);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

// Accumulates d(sum_ij out_grad_ij * out_ij)/d params into `grad` (length
// ParamCount()). Returns the gradient with respect to the input batch.
inline Eigen::MatrixXd BackwardBatch(const MlpShape& shape, const double* params,
                                     const BatchCache& cache,
                                     const Eigen::MatrixXd& out_grad,
                                     double* grad) {
  int layers = shape.num_layers();
  if (static_cast<int>(cache.pre.size()) != layers) {
    throw UsageError("backward needs a cache from a forward pass");
  }
  if (out_grad.rows() != shape.output_dim() ||
      out_grad.cols() != cache.pre.back().cols()) {
    throw UsageError("output gradient dimension mismatch");
  }
  Eigen::MatrixXd delta = out_grad;
  for (int l = layers - 1; l >= 0; --l) {
    int in = shape.layers[l];
    int o = shape.layers[l + 1];
    std::size_t off = shape.LayerOffset(l);
    if (l + 1 < layers) detail::ScaleByActivationDerivative(shape.hidden, cache.pre[l], delta);
    WeightMap gw(grad + off, o, in);
    gw.noalias() += delta * cache.inputs[l].transpose();
    Eigen::Map<Eigen::VectorXd> gb(grad + off + static_cast<std::size_t>(o) * in, o);
    gb += delta.rowwise().sum();
    ConstWeightMap w(params + off, o, in);
    delta = w.transpose() * delta;
  }
  return delta;
}

// y = low + (tanh(z) + 1) / 2 * (high - low), elementwise.
inline double SquashScalar(double z, double low, double high) {
  return low + 0.5 * (std::tanh(z) + 1.0) * (high - low);
}

// Raw output for a single input column. Plain loops with a fixed summation
// order: the result does not depend on how many columns are evaluated
// together, which the planners rely on for exact reductions. `scratch` is
// resized as needed and may be reused across calls.
inline void ForwardColumn(const MlpShape& shape, const double* params, const double* x,
                          double* out, Vector& scratch) {
  int width = 0;
  for (int n : shape.layers) width = std::max(width, n);
  if (static_cast<int>(scratch.size()) < 2 * width) scratch.resize(2 * width);
  double* cur = scratch.data();
  double* next = scratch.data() + width;
  std::copy(x, x + shape.input_dim(), cur);
  const double* ptr = params;
  const int layers = shape.num_layers();
  for (int l = 0; l < layers; ++l) {
    const int in = shape.layers[l];
    const int o = shape.layers[l + 1];
    const double* bias = ptr + static_cast<std::ptrdiff_t>(o) * in;
    for (int r = 0; r < o; ++r) {
      const double* row = ptr + static_cast<std::ptrdiff_t>(r) * in;
      double z = 0.0;
      for (int c = 0; c < in; ++c) z += row[c] * cur[c];
      z += bias[r];
      if (l + 1 < layers) {
        z = shape.hidden == Activation::kTanh ? std::tanh(z) : z / (1.0 + std::exp(-z));
      }
      next[r] = z;
    }
    ptr = bias + o;
    std::swap(cur, next);
  }
  std::copy(cur, cur + shape.output_dim(), out);
}

// Squashed outputs for each column of `x` via ForwardColumn.
inline Eigen::MatrixXd SquashedForwardColumns(const MlpShape& shape, const double* params,
                                              const Eigen::MatrixXd& x,
                                              const ActionBounds& bounds) {
  if (x.rows() != shape.input_dim()) throw UsageError("input dimension mismatch");
  Eigen::MatrixXd y(shape.output_dim(), x.cols());
  Vector scratch;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    ForwardColumn(shape, params, x.col(c).data(), y.col(c).data(), scratch);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      y(i, c) = SquashScalar(y(i, c), bounds.low[i], bounds.high[i]);
    }
  }
  return y;
}

// ----- single-sample API ----- //

inline Eigen::MatrixXd AsColumn(std::span<const double> x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

inline void CheckInput(const FlatParams& p, std::span<const double> x) {
  if (static_cast<int>(x.size()) != p.shape.input_dim()) {
    throw UsageError("input dimension mismatch");
  }
}

inline void CheckBounds(const FlatParams& p, const ActionBounds& b) {
  if (static_cast<int>(b.low.size()) != p.shape.output_dim() ||
      b.high.size() != b.low.size()) {
    throw UsageError("action bounds do not match network output");
  }
}

inline Vector ForwardRaw(const FlatParams& p, std::span<const double> x) {
  CheckInput(p, x);
  Vector y(p.shape.output_dim());
  Vector scratch;
  ForwardColumn(p.shape, p.values.data(), x.data(), y.data(), scratch);
  return y;
}

// Policy output, squashed into [low, high].
inline Vector Forward(const FlatParams& p, std::span<const double> x,
                      const ActionBounds& bounds) {
  CheckBounds(p, bounds);
  Vector z = ForwardRaw(p, x);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = SquashScalar(z[i], bounds.low[i], bounds.high[i]);
  }
  return z;
}

inline FlatParams BackwardRaw(const FlatParams& p, std::span<const double> x,
                              std::span<const double> output_grad) {
  CheckInput(p, x);
  if (static_cast<int>(output_grad.size()) != p.shape.output_dim()) {
    throw UsageError("output gradient dimension mismatch");
  }
  BatchCache cache;
  ForwardBatch(p.shape, p.values.data(), AsColumn(x), &cache);
  FlatParams grad(p.shape);
  BackwardBatch(p.shape, p.values.data(), cache, AsColumn(output_grad),
                grad.values.data());
  return grad;
}

// d(output_grad . Forward(p, x)) / dp through the squashing head.
inline FlatParams Backward(const FlatParams& p, std::span<const double> x,
                           std::span<const double> output_grad,
                           const ActionBounds& bounds) {
  CheckInput(p, x);
  CheckBounds(p, bounds);
  if (static_cast<int>(output_grad.size()) != p.shape.output_dim()) {
    throw UsageError("output gradient dimension mismatch");
  }
  BatchCache cache;
  Eigen::MatrixXd z = ForwardBatch(p.shape, p.values.data(), AsColumn(x), &cache);
  Eigen::MatrixXd g(z.rows(), 1);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double t = std::tanh(z(i, 0));
    g(i, 0) = output_grad[i] * 0.5 * (1.0 - t * t) * (bounds.high[i] - bounds.low[i]);
  }
  FlatParams grad(p.shape);
  BackwardBatch(p.shape, p.values.data(), cache, g, grad.values.data());
  return grad;
}

// Forward(params + noise, x) without touching `params`.
inline Vector PerturbedForward(const FlatParams& params, const FlatParams& noise,
                               std::span<const double> x,
                               const ActionBounds& bounds) {
  if (noise.shape != params.shape) throw UsageError("noise shape differs from params");
  FlatParams sum(params.shape);
  for (std::size_t i = 0; i < sum.values.size(); ++i) {
    sum.values[i] = params.values[i] + noise.values[i];
  }
  return Forward(sum, x, bounds);
}

// ----- Adam ----- //

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState For(std::size_t n, double lr) {
    AdamState s;
    s.first_moment.assign(n, 0.0);
    s.second_moment.assign(n, 0.0);
    s.learning_rate = lr;
    return s;
  }
};

// One bias-corrected Adam update, in place.
inline void AdamStep(AdamState& state, std::span<double> params,
                     std::span<const double> grad) {
  if (params.size() != grad.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw UsageError("Adam state, params and grad lengths differ");
  }
  ++state.step_count;
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grad[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    double m_hat = m / c1;
    double v_hat = v / c2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace poplin
