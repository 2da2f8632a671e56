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

// Learned transition models. An ensemble of B networks maps the normalized
// input [s; a] to the normalized state change; predictions average the
// members' means (expectation propagation, no particle sampling).
//
// Anything with `state_dim()`, `action_dim()` and
// `PredictBatch(states, actions)` (column-per-sample matrices) can stand in
// for the ensemble; TrueDynamics wraps an analytic environment that way.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poplin/common.hpp"
#include "poplin/envs.hpp"
#include "poplin/net.hpp"
#include "poplin/record.hpp"

namespace poplin {

enum class ModelMode : std::uint32_t { kDeterministic = 0, kProbabilistic = 1 };

// Replay data. `distill_pairs` holds (state, planned action) targets for
// policy distillation; `noise_records` holds optimized parameter noise from
// parameter-space planning, consumed by averaging distillation.
struct TransitionDataset {
  struct StateAction {
    Vector state;
    Vector action;
  };
  struct NoiseRecord {
    Vector state;
    Vector noise;
  };

  std::vector<Transition> transitions;
  std::vector<StateAction> distill_pairs;
  std::vector<NoiseRecord> noise_records;
  std::optional<std::size_t> capacity;

  void Add(Transition t) {
    if (!transitions.empty() &&
        (t.state.size() != transitions.front().state.size() ||
         t.action.size() != transitions.front().action.size())) {
      throw UsageError("transition dimensions differ from dataset");
    }
    transitions.push_back(std::move(t));
    if (capacity && transitions.size() > *capacity) {
      transitions.erase(transitions.begin(),
                        transitions.begin() + static_cast<std::ptrdiff_t>(
                                                  transitions.size() - *capacity));
    }
  }

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
};

struct Normalizer {
  static constexpr double kStdFloor = 1e-6;

  Vector in_mean, in_std;    // over [s; a]
  Vector out_mean, out_std;  // over s' - s

  static Normalizer Identity(int in_dim, int out_dim) {
    return {Vector(in_dim, 0.0), Vector(in_dim, 1.0), Vector(out_dim, 0.0),
            Vector(out_dim, 1.0)};
  }

  static Normalizer Fit(std::span<const Transition> data) {
    Require(!data.empty(), "cannot fit normalizer on empty data");
    const std::size_t sd = data.front().state.size();
    const std::size_t ad = data.front().action.size();
    Normalizer n;
    n.in_mean.assign(sd + ad, 0.0);
    n.in_std.assign(sd + ad, 0.0);
    n.out_mean.assign(sd, 0.0);
    n.out_std.assign(sd, 0.0);
    const double count = static_cast<double>(data.size());
    for (const auto& t : data) {
      for (std::size_t i = 0; i < sd; ++i) {
        n.in_mean[i] += t.state[i];
        n.out_mean[i] += t.next_state[i] - t.state[i];
      }
      for (std::size_t i = 0; i < ad; ++i) n.in_mean[sd + i] += t.action[i];
    }
    for (auto& v : n.in_mean) v /= count;
    for (auto& v : n.out_mean) v /= count;
    for (const auto& t : data) {
      for (std::size_t i = 0; i < sd; ++i) {
        double a = t.state[i] - n.in_mean[i];
        double b = t.next_state[i] - t.state[i] - n.out_mean[i];
        n.in_std[i] += a * a;
        n.out_std[i] += b * b;
      }
      for (std::size_t i = 0; i < ad; ++i) {
        double a = t.action[i] - n.in_mean[sd + i];
        n.in_std[sd + i] += a * a;
      }
    }
    for (auto& v : n.in_std) v = std::max(std::sqrt(v / count), kStdFloor);
    for (auto& v : n.out_std) v = std::max(std::sqrt(v / count), kStdFloor);
    return n;
  }
};

struct EnsembleConfig {
  int ensemble_size = 5;
  std::vector<int> hidden = {64, 64};
  ModelMode mode = ModelMode::kProbabilistic;
};

struct EnsembleMember {
  FlatParams net;    // [s;a] -> normalized delta (and raw log-variance)
  Vector max_logvar;  // learned clamp bounds, probabilistic mode only
  Vector min_logvar;
  // optimizer state carried across incremental training calls
  std::optional<AdamState> net_adam;
  std::optional<AdamState> bound_adam;
};

namespace detail {

inline double Softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

class DynamicsEnsemble {
 public:
  static constexpr double kInitMaxLogvar = 0.5;
  static constexpr double kInitMinLogvar = -10.0;

  DynamicsEnsemble() = default;

  static DynamicsEnsemble Create(int state_dim, int action_dim,
                                 const EnsembleConfig& cfg, std::uint64_t seed) {
    if (cfg.ensemble_size < 1) throw UsageError("ensemble needs at least one member");
    DynamicsEnsemble e;
    e.state_dim_ = state_dim;
    e.action_dim_ = action_dim;
    e.mode_ = cfg.mode;
    MlpShape shape;
    shape.hidden = Activation::kSwish;
    shape.layers.push_back(state_dim + action_dim);
    for (int h : cfg.hidden) shape.layers.push_back(h);
    shape.layers.push_back(cfg.mode == ModelMode::kProbabilistic ? 2 * state_dim
                                                                  : state_dim);
    for (int b = 0; b < cfg.ensemble_size; ++b) {
      Rng rng = MakeRng(seed, {0xd1ULL, static_cast<std::uint64_t>(b)});
      EnsembleMember m;
      m.net = InitParams(shape, rng);
      if (cfg.mode == ModelMode::kProbabilistic) {
        m.max_logvar.assign(state_dim, kInitMaxLogvar);
        m.min_logvar.assign(state_dim, kInitMinLogvar);
      }
      e.members_.push_back(std::move(m));
    }
    e.normalizer_ = Normalizer::Identity(state_dim + action_dim, state_dim);
    return e;
  }

  // Builds an ensemble from explicit member networks (deterministic mode).
  static DynamicsEnsemble FromMembers(int state_dim, int action_dim,
                                      std::vector<FlatParams> nets,
                                      Normalizer normalizer) {
    Require(!nets.empty(), "ensemble needs at least one member");
    DynamicsEnsemble e;
    e.state_dim_ = state_dim;
    e.action_dim_ = action_dim;
    e.mode_ = ModelMode::kDeterministic;
    const MlpShape shape = nets.front().shape;
    for (auto& n : nets) {
      if (n.shape.input_dim() != state_dim + action_dim ||
          n.shape.output_dim() != state_dim || n.shape != shape) {
        throw UsageError("member shape does not match ensemble dimensions");
      }
      e.members_.push_back({std::move(n), {}, {}, {}, {}});
    }
    e.normalizer_ = std::move(normalizer);
    return e;
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  ModelMode mode() const { return mode_; }
  int size() const { return static_cast<int>(members_.size()); }
  const std::vector<EnsembleMember>& members() const { return members_; }
  std::vector<EnsembleMember>& mutable_members() { return members_; }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) { normalizer_ = std::move(n); }

  // Normalized network input for a batch.
  Eigen::MatrixXd NormalizeInputs(const Eigen::MatrixXd& states,
                                  const Eigen::MatrixXd& actions) const {
    Eigen::MatrixXd x(state_dim_ + action_dim_, states.cols());
    x.topRows(state_dim_) = states;
    x.bottomRows(action_dim_) = actions;
    for (int i = 0; i < state_dim_ + action_dim_; ++i) {
      x.row(i).array() = (x.row(i).array() - normalizer_.in_mean[i]) / normalizer_.in_std[i];
    }
    return x;
  }

  // Member-averaged normalized delta prediction.
  Eigen::MatrixXd PredictNormalizedDelta(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(state_dim_, x.cols());
    for (const auto& m : members_) {
      Eigen::MatrixXd out = ForwardBatch(m.net.shape, m.net.values.data(), x);
      sum += out.topRows(state_dim_);
    }
    return sum / static_cast<double>(members_.size());
  }

  // Next states for each column of (states, actions).
  Eigen::MatrixXd PredictBatch(const Eigen::MatrixXd& states,
                               const Eigen::MatrixXd& actions) const {
    Eigen::MatrixXd delta = PredictNormalizedDelta(NormalizeInputs(states, actions));
    for (int i = 0; i < state_dim_; ++i) {
      delta.row(i).array() = delta.row(i).array() * normalizer_.out_std[i] +
                             normalizer_.out_mean[i];
    }
    return states + delta;
  }

  Vector Predict(std::span<const double> state, std::span<const double> action) const {
    if (static_cast<int>(state.size()) != state_dim_ ||
        static_cast<int>(action.size()) != action_dim_) {
      throw UsageError("predict: dimension mismatch");
    }
    if (!AllFinite(state) || !AllFinite(action)) {
      throw UsageError("predict: non-finite input");
    }
    Eigen::MatrixXd next = PredictBatch(AsColumn(state), AsColumn(action));
    return Vector(next.data(), next.data() + next.size());
  }

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  ModelMode mode_ = ModelMode::kProbabilistic;
  std::vector<EnsembleMember> members_;
  Normalizer normalizer_;
};

// Analytic environment dynamics exposed through the model interface.
class TrueDynamics {
 public:
  explicit TrueDynamics(const Environment& env) : env_(&env) {}

  int state_dim() const { return env_->spec().state_dim; }
  int action_dim() const { return env_->spec().action_dim; }

  Eigen::MatrixXd PredictBatch(const Eigen::MatrixXd& states,
                               const Eigen::MatrixXd& actions) const {
    Eigen::MatrixXd next(states.rows(), states.cols());
    for (Eigen::Index c = 0; c < states.cols(); ++c) {
      Eigen::VectorXd s = states.col(c);
      Eigen::VectorXd a = actions.col(c);
      Vector n = env_->Dynamics({s.data(), static_cast<std::size_t>(s.size())},
                                {a.data(), static_cast<std::size_t>(a.size())});
      next.col(c) = Eigen::Map<const Eigen::VectorXd>(n.data(), next.rows());
    }
    return next;
  }

  Vector Predict(std::span<const double> state, std::span<const double> action) const {
    return env_->Dynamics(state, action);
  }

 private:
  const Environment* env_;
};

// ----- training ----- //

struct DynamicsTrainOptions {
  int epochs = 5;
  int batch = 32;
  double learning_rate = 1e-3;
};

struct LossEntry {
  int epoch = 0;
  int member = 0;
  double loss = 0.0;
};

namespace detail {

// Loss and output gradient for one minibatch of one member. `out` is the raw
// network output, `target` the normalized deltas.
inline double MemberLoss(const EnsembleMember& m, ModelMode mode, int sd,
                         const Eigen::MatrixXd& out, const Eigen::MatrixXd& target,
                         Eigen::MatrixXd& out_grad, Vector& max_grad,
                         Vector& min_grad) {
  const double scale = 1.0 / static_cast<double>(out.cols() * sd);
  out_grad.setZero(out.rows(), out.cols());
  if (mode == ModelMode::kDeterministic) {
    Eigen::MatrixXd diff = out - target;
    out_grad = 2.0 * scale * diff;
    return diff.squaredNorm() * scale;
  }
  max_grad.assign(sd, 0.0);
  min_grad.assign(sd, 0.0);
  double loss = 0.0;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    for (int i = 0; i < sd; ++i) {
      double mu = out(i, c);
      double raw = out(sd + i, c);
      double hi = m.max_logvar[i];
      double lo = m.min_logvar[i];
      double lv1 = hi - Softplus(hi - raw);
      double lv = lo + Softplus(lv1 - lo);
      double inv_var = std::exp(-lv);
      double err = mu - target(i, c);
      loss += (err * err * inv_var + lv) * scale;
      out_grad(i, c) = 2.0 * err * inv_var * scale;
      double g_lv = (1.0 - err * err * inv_var) * scale;
      double s_hi = Sigmoid(hi - raw);
      double s_lo = Sigmoid(lv1 - lo);
      out_grad(sd + i, c) = g_lv * s_lo * s_hi;
      max_grad[i] += g_lv * s_lo * (1.0 - s_hi);
      min_grad[i] += g_lv * (1.0 - s_lo);
    }
  }
  constexpr double kBoundPenalty = 0.01;
  for (int i = 0; i < sd; ++i) {
    loss += kBoundPenalty * (m.max_logvar[i] - m.min_logvar[i]);
    max_grad[i] += kBoundPenalty;
    min_grad[i] -= kBoundPenalty;
  }
  return loss;
}

inline void GatherBatch(std::span<const Transition> data, const Normalizer& norm,
                        std::span<const std::size_t> idx, Eigen::MatrixXd& x,
                        Eigen::MatrixXd& y) {
  const int sd = static_cast<int>(data.front().state.size());
  const int ad = static_cast<int>(data.front().action.size());
  const auto n = static_cast<Eigen::Index>(idx.size());
  x.resize(sd + ad, n);
  y.resize(sd, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Transition& t = data[idx[c]];
    for (int i = 0; i < sd; ++i) {
      x(i, c) = (t.state[i] - norm.in_mean[i]) / norm.in_std[i];
      y(i, c) = (t.next_state[i] - t.state[i] - norm.out_mean[i]) / norm.out_std[i];
    }
    for (int i = 0; i < ad; ++i) {
      x(sd + i, c) = (t.action[i] - norm.in_mean[sd + i]) / norm.in_std[sd + i];
    }
  }
}

}  // namespace detail

// Refits the normalizer on `data` and trains every member on its own bootstrap
// resample. Deterministic mode minimizes squared error on normalized deltas;
// probabilistic mode minimizes the Gaussian negative log-likelihood. Training
// continues from the current weights.
inline DynamicsEnsemble TrainDynamics(DynamicsEnsemble ensemble,
                                      const TransitionDataset& data,
                                      const DynamicsTrainOptions& opts,
                                      std::uint64_t seed,
                                      std::vector<LossEntry>* history = nullptr) {
  if (data.empty()) throw UsageError("cannot train dynamics on an empty dataset");
  if (static_cast<int>(data.transitions.front().state.size()) != ensemble.state_dim() ||
      static_cast<int>(data.transitions.front().action.size()) != ensemble.action_dim()) {
    throw UsageError("dataset dimensions do not match ensemble");
  }
  if (opts.batch < 1) throw UsageError("batch size must be positive");
  ensemble.set_normalizer(Normalizer::Fit(data.transitions));
  if (opts.epochs <= 0) return ensemble;

  const int sd = ensemble.state_dim();
  const std::size_t n = data.size();
  const Normalizer& norm = ensemble.normalizer();
  auto& members = ensemble.mutable_members();
  for (int b = 0; b < static_cast<int>(members.size()); ++b) {
    EnsembleMember& m = members[b];
    Rng rng = MakeRng(seed, {0xb007ULL, static_cast<std::uint64_t>(b)});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> boot(n);
    for (auto& i : boot) i = pick(rng);

    if (!m.net_adam) m.net_adam = AdamState::For(m.net.size(), opts.learning_rate);
    m.net_adam->learning_rate = opts.learning_rate;
    const bool prob = ensemble.mode() == ModelMode::kProbabilistic;
    Vector bounds;
    if (prob) {
      if (!m.bound_adam) m.bound_adam = AdamState::For(2 * sd, opts.learning_rate);
      m.bound_adam->learning_rate = opts.learning_rate;
    }

    Eigen::MatrixXd x, y, out_grad;
    Vector grad(m.net.size());
    Vector max_grad, min_grad;
    BatchCache cache;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      std::shuffle(boot.begin(), boot.end(), rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < n; start += opts.batch) {
        std::size_t end = std::min(n, start + static_cast<std::size_t>(opts.batch));
        detail::GatherBatch(data.transitions, norm,
                            std::span<const std::size_t>(boot).subspan(start, end - start),
                            x, y);
        Eigen::MatrixXd out = ForwardBatch(m.net.shape, m.net.values.data(), x, &cache);
        epoch_loss += detail::MemberLoss(m, ensemble.mode(), sd, out, y, out_grad,
                                         max_grad, min_grad);
        ++batches;
        std::fill(grad.begin(), grad.end(), 0.0);
        BackwardBatch(m.net.shape, m.net.values.data(), cache, out_grad, grad.data());
        AdamStep(*m.net_adam, m.net.values, grad);
        if (prob) {
          bounds.assign(2 * sd, 0.0);
          Vector bound_grad(2 * sd);
          for (int i = 0; i < sd; ++i) {
            bounds[i] = m.max_logvar[i];
            bounds[sd + i] = m.min_logvar[i];
            bound_grad[i] = max_grad[i];
            bound_grad[sd + i] = min_grad[i];
          }
          AdamStep(*m.bound_adam, bounds, bound_grad);
          for (int i = 0; i < sd; ++i) {
            m.max_logvar[i] = bounds[i];
            m.min_logvar[i] = bounds[sd + i];
          }
        }
      }
      if (history) history->push_back({epoch, b, epoch_loss / batches});
    }
  }
  return ensemble;
}

// Mean squared one-step error in normalized delta space over `data`, using
// the ensemble's current normalizer.
inline double NormalizedMse(const DynamicsEnsemble& ensemble,
                            std::span<const Transition> data) {
  Require(!data.empty(), "cannot evaluate on empty data");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Eigen::MatrixXd x, y;
  detail::GatherBatch(data, ensemble.normalizer(), idx, x, y);
  Eigen::MatrixXd pred = ensemble.PredictNormalizedDelta(x);
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

// ----- checkpoints ----- //

inline void SaveEnsemble(const std::string& path, const DynamicsEnsemble& e) {
  std::vector<Record> records;
  records.push_back({RecordKind::kEnsemble, static_cast<std::uint32_t>(e.mode()),
                     {static_cast<std::uint32_t>(e.size()),
                      static_cast<std::uint32_t>(e.state_dim()),
                      static_cast<std::uint32_t>(e.action_dim())},
                     {}});
  for (const auto& m : e.members()) {
    records.push_back(ToRecord(m.net));
    if (e.mode() == ModelMode::kProbabilistic) {
      Vector b = m.max_logvar;
      b.insert(b.end(), m.min_logvar.begin(), m.min_logvar.end());
      records.push_back({RecordKind::kVector, 0, {static_cast<std::uint32_t>(b.size())}, b});
    }
  }
  const Normalizer& n = e.normalizer();
  Vector v = n.in_mean;
  v.insert(v.end(), n.in_std.begin(), n.in_std.end());
  v.insert(v.end(), n.out_mean.begin(), n.out_mean.end());
  v.insert(v.end(), n.out_std.begin(), n.out_std.end());
  records.push_back({RecordKind::kNormalizer, 0,
                     {static_cast<std::uint32_t>(n.in_mean.size()),
                      static_cast<std::uint32_t>(n.out_mean.size())},
                     v});
  WriteRecords(path, records);
}

inline DynamicsEnsemble LoadEnsemble(const std::string& path) {
  auto records = ReadRecords(path);
  if (records.empty() || records.front().kind != RecordKind::kEnsemble ||
      records.front().dims.size() != 3) {
    throw FormatError(path + ": missing ensemble header");
  }
  const auto& head = records.front();
  if (head.tag > 1) throw FormatError(path + ": unknown model mode");
  const auto mode = static_cast<ModelMode>(head.tag);
  const int count = static_cast<int>(head.dims[0]);
  const int sd = static_cast<int>(head.dims[1]);
  const int ad = static_cast<int>(head.dims[2]);
  const std::size_t per = mode == ModelMode::kProbabilistic ? 2 : 1;
  if (count < 1 || records.size() != 2 + per * count) {
    throw FormatError(path + ": wrong number of records");
  }
  EnsembleConfig cfg;
  cfg.ensemble_size = count;
  cfg.mode = mode;
  cfg.hidden.clear();
  DynamicsEnsemble e = DynamicsEnsemble::Create(sd, ad, cfg, 0);
  auto& members = e.mutable_members();
  for (int b = 0; b < count; ++b) {
    const Record& r = records[1 + per * b];
    members[b].net = ParamsFromRecord(r);
    if (members[b].net.shape.input_dim() != sd + ad ||
        members[b].net.shape.output_dim() != static_cast<int>(per) * sd) {
      throw FormatError(path + ": member shape does not match header");
    }
    if (mode == ModelMode::kProbabilistic) {
      const Record& bounds = records[2 + per * b];
      if (bounds.values.size() != static_cast<std::size_t>(2 * sd)) {
        throw FormatError(path + ": bad log-variance bounds");
      }
      members[b].max_logvar.assign(bounds.values.begin(), bounds.values.begin() + sd);
      members[b].min_logvar.assign(bounds.values.begin() + sd, bounds.values.end());
    }
  }
  const Record& nr = records.back();
  if (nr.kind != RecordKind::kNormalizer ||
      nr.values.size() != static_cast<std::size_t>(2 * (sd + ad) + 2 * sd)) {
    throw FormatError(path + ": bad normalizer record");
  }
  Normalizer n;
  auto it = nr.values.begin();
  n.in_mean.assign(it, it + sd + ad);
  it += sd + ad;
  n.in_std.assign(it, it + sd + ad);
  it += sd + ad;
  n.out_mean.assign(it, it + sd);
  it += sd;
  n.out_std.assign(it, it + sd);
  e.set_normalizer(std::move(n));
  return e;
}

}  // namespace poplin
