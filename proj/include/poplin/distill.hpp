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

// Policy distillation: transfer planned behavior into the policy network.
//
//   bc    regression of pi_theta(s) onto executed planned actions
//   gan   adversarial matching: a discriminator D(s, a) separates planned
//         actions from perturbed-policy actions pi_{theta + z}(s), with
//         z ~ N(0, sigma^2 I); the policy is trained to fool it
//   avg   theta <- theta + mean of the recorded optimized parameter noise

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <iostream>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "poplin/common.hpp"
#include "poplin/dynamics.hpp"
#include "poplin/envs.hpp"
#include "poplin/net.hpp"
#include "poplin/planner.hpp"

namespace poplin {

enum class DistillScheme { kNone, kBc, kGan, kAvg };
enum class DistillData { kReal, kHallucination };

inline std::string_view ToString(DistillScheme s) {
  switch (s) {
    case DistillScheme::kNone: return "none";
    case DistillScheme::kBc: return "bc";
    case DistillScheme::kGan: return "gan";
    case DistillScheme::kAvg: return "avg";
  }
  return "?";
}

inline DistillScheme ParseDistillScheme(std::string_view s) {
  for (auto v : {DistillScheme::kNone, DistillScheme::kBc, DistillScheme::kGan,
                 DistillScheme::kAvg}) {
    if (ToString(v) == s) return v;
  }
  throw ConfigError("distill.scheme", "unknown scheme '" + std::string(s) + "'");
}

inline std::string_view ToString(DistillData d) {
  return d == DistillData::kReal ? "real" : "hallucination";
}

inline DistillData ParseDistillData(std::string_view s) {
  if (s == "real") return DistillData::kReal;
  if (s == "hallucination") return DistillData::kHallucination;
  throw ConfigError("distill.data", "expected real or hallucination");
}

struct DistillConfig {
  DistillScheme scheme = DistillScheme::kBc;
  int epochs = 5;
  int batch = 32;
  double bc_learning_rate = 1e-3;
  double gan_generator_learning_rate = 1e-4;
  double gan_discriminator_learning_rate = 1e-4;
  double gan_noise_sigma = 0.1;
  double entropy_penalty = 0.001;
  // Generator minimizes log(1 - D) literally instead of -log D.
  bool gan_minimax = false;
  std::vector<int> discriminator_hidden = {32};
  DistillData data = DistillData::kReal;

  void Validate(PlannerVariant planner) const {
    if (epochs < 0) throw ConfigError("distill.epochs", "must be >= 0");
    if (batch < 1) throw ConfigError("distill.batch", "must be >= 1");
    if (!(bc_learning_rate > 0)) throw ConfigError("distill.bc_lr", "must be > 0");
    if (!(gan_generator_learning_rate > 0)) throw ConfigError("distill.gan_g_lr", "must be > 0");
    if (!(gan_discriminator_learning_rate > 0)) {
      throw ConfigError("distill.gan_d_lr", "must be > 0");
    }
    if (!(gan_noise_sigma >= 0)) throw ConfigError("distill.gan_sigma", "must be >= 0");
    if (!(entropy_penalty >= 0)) throw ConfigError("distill.entropy_penalty", "must be >= 0");
    if ((scheme == DistillScheme::kGan || scheme == DistillScheme::kAvg) &&
        !IsParameterSpace(planner)) {
      throw ConfigError("distill.scheme", std::string(ToString(scheme)) +
                                              " needs a poplin-p planner");
    }
  }
};

struct DistillResult {
  FlatParams policy;
  double loss = 0.0;              // final loss over the whole dataset
  Vector epoch_losses;            // mean minibatch loss per epoch
  Vector discriminator_losses;    // gan only
};

namespace detail {

inline void CheckPairs(const std::vector<TransitionDataset::StateAction>& pairs,
                       const FlatParams& policy) {
  for (const auto& p : pairs) {
    if (static_cast<int>(p.state.size()) != policy.shape.input_dim() ||
        static_cast<int>(p.action.size()) != policy.shape.output_dim()) {
      throw UsageError("distillation pair dimensions do not match the policy");
    }
  }
}

// d squash(z) / dz for each entry of z (output_dim x n).
inline Eigen::MatrixXd SquashDerivative(const Eigen::MatrixXd& z, const ActionBounds& b) {
  Eigen::MatrixXd d(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      double t = std::tanh(z(i, c));
      d(i, c) = 0.5 * (1.0 - t * t) * (b.high[i] - b.low[i]);
    }
  }
  return d;
}

// Mean over pairs of ||pi(s) - a||^2. Gradient accumulated into `grad` when
// non-null.
inline double BcLoss(const FlatParams& policy, const ActionBounds& bounds,
                     const std::vector<TransitionDataset::StateAction>& pairs,
                     std::span<const std::size_t> idx, double* grad) {
  const int sd = policy.shape.input_dim();
  const int ad = policy.shape.output_dim();
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd x(sd, n), target(ad, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& p = pairs[idx[c]];
    for (int i = 0; i < sd; ++i) x(i, c) = p.state[i];
    for (int i = 0; i < ad; ++i) target(i, c) = p.action[i];
  }
  Eigen::MatrixXd err =
      SquashedForwardColumns(policy.shape, policy.values.data(), x, bounds) - target;
  double loss = err.squaredNorm() / static_cast<double>(n);
  if (grad) {
    BatchCache cache;
    Eigen::MatrixXd z = ForwardBatch(policy.shape, policy.values.data(), x, &cache);
    Eigen::MatrixXd g = (2.0 / static_cast<double>(n)) * err.cwiseProduct(SquashDerivative(z, bounds));
    BackwardBatch(policy.shape, policy.values.data(), cache, g, grad);
  }
  return loss;
}

}  // namespace detail

// Behavior cloning by minibatch Adam on mean ||pi_theta(s) - a||^2 over
// data.distill_pairs. The policy is evaluated at its own parameters, never at
// a perturbed copy.
inline DistillResult DistillBc(const FlatParams& policy, const ActionBounds& bounds,
                               const TransitionDataset& data, const DistillConfig& cfg,
                               std::uint64_t seed) {
  const auto& pairs = data.distill_pairs;
  if (pairs.empty()) throw UsageError("behavior cloning needs state-action pairs");
  detail::CheckPairs(pairs, policy);
  CheckBounds(policy, bounds);
  DistillResult result{policy, 0.0, {}, {}};
  FlatParams& theta = result.policy;
  AdamState adam = AdamState::For(theta.size(), cfg.bc_learning_rate);
  Rng rng = MakeRng(seed, {0xbcULL});
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Vector grad(theta.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t count = std::min<std::size_t>(cfg.batch, order.size() - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      sum += detail::BcLoss(theta, bounds, pairs,
                            std::span<const std::size_t>(order).subspan(start, count),
                            grad.data());
      ++batches;
      AdamStep(adam, theta.values, grad);
    }
    result.epoch_losses.push_back(sum / batches);
  }
  std::iota(order.begin(), order.end(), 0);
  result.loss = detail::BcLoss(theta, bounds, pairs, order, nullptr);
  return result;
}

// ----- adversarial distillation ----- //

// Anything that scores (state, action) with a logit and reports the logit's
// gradient with respect to the action.
template <typename D>
concept ActionDiscriminator = requires(const D& d, std::span<const double> s,
                                       std::span<const double> a) {
  { d.Logit(s, a) } -> std::convertible_to<double>;
  { d.ActionGradient(s, a) } -> std::convertible_to<Vector>;
};

// MLP discriminator [s; a] -> logit with tanh hidden layers.
class MlpDiscriminator {
 public:
  MlpDiscriminator(int state_dim, int action_dim, const std::vector<int>& hidden,
                   double entropy_penalty, std::uint64_t seed)
      : state_dim_(state_dim), entropy_penalty_(entropy_penalty) {
    MlpShape shape;
    shape.hidden = Activation::kTanh;
    shape.layers.push_back(state_dim + action_dim);
    for (int h : hidden) shape.layers.push_back(h);
    shape.layers.push_back(1);
    Rng rng = MakeRng(seed, {0xd15cULL});
    net_ = InitParams(shape, rng);
  }

  const FlatParams& params() const { return net_; }
  FlatParams& mutable_params() { return net_; }
  double entropy_penalty() const { return entropy_penalty_; }

  double Logit(std::span<const double> s, std::span<const double> a) const {
    Vector x = Join(s, a);
    return ForwardRaw(net_, x)[0];
  }

  Vector ActionGradient(std::span<const double> s, std::span<const double> a) const {
    Vector x = Join(s, a);
    BatchCache cache;
    ForwardBatch(net_.shape, net_.values.data(), AsColumn(x), &cache);
    Vector unused(net_.size());
    Eigen::MatrixXd g = BackwardBatch(net_.shape, net_.values.data(), cache,
                                      Eigen::MatrixXd::Ones(1, 1), unused.data());
    return Vector(g.data() + state_dim_, g.data() + g.size());
  }

  // Loss over real pairs (label 1) and fake pairs (label 0):
  //   -mean log D(real) - mean log(1 - D(fake)) - penalty * mean H(D)
  // where H is the binary entropy of D's prediction. Accumulates the
  // parameter gradient into `grad` when non-null.
  double Loss(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake, double* grad) const {
    double loss = 0.0;
    for (int label = 1; label >= 0; --label) {
      const Eigen::MatrixXd& x = label ? real : fake;
      const double n = static_cast<double>(x.cols());
      BatchCache cache;
      Eigen::MatrixXd logit = ForwardBatch(net_.shape, net_.values.data(), x, &cache);
      Eigen::MatrixXd g(1, x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double l = logit(0, c);
        const double p = detail::Sigmoid(l);
        // log sigma(l) = -softplus(-l), log(1 - sigma(l)) = -softplus(l)
        const double nll = label ? detail::Softplus(-l) : detail::Softplus(l);
        const double entropy = detail::Softplus(-l) * p + detail::Softplus(l) * (1.0 - p);
        loss += (nll - entropy_penalty_ * entropy) / n;
        const double d_nll = label ? p - 1.0 : p;
        const double d_entropy = -l * p * (1.0 - p);
        g(0, c) = (d_nll - entropy_penalty_ * d_entropy) / n;
      }
      if (grad) BackwardBatch(net_.shape, net_.values.data(), cache, g, grad);
    }
    return loss;
  }

 private:
  static Vector Join(std::span<const double> s, std::span<const double> a) {
    Vector x(s.begin(), s.end());
    x.insert(x.end(), a.begin(), a.end());
    return x;
  }

  int state_dim_;
  double entropy_penalty_;
  FlatParams net_;
};

struct GeneratorGradient {
  Vector grad;
  double loss = 0.0;
};

// Generator loss and its gradient with respect to theta over `states`, each
// evaluated at pi_{theta + z}(s) with its own z ~ N(0, sigma^2 I). The
// default loss is -mean log D; `minimax` switches to mean log(1 - D).
template <ActionDiscriminator D>
GeneratorGradient ComputeGeneratorGradient(const FlatParams& policy, const ActionBounds& bounds,
                                           const D& disc,
                                           const std::vector<Vector>& states,
                                           double sigma, Rng& rng, bool minimax) {
  GeneratorGradient out{Vector(policy.size(), 0.0), 0.0};
  const double n = static_cast<double>(states.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  FlatParams perturbed = policy;
  for (const Vector& s : states) {
    for (std::size_t i = 0; i < policy.size(); ++i) {
      perturbed.values[i] = policy.values[i] + (sigma > 0 ? sigma * normal(rng) : 0.0);
    }
    Vector a = Forward(perturbed, s, bounds);
    const double l = disc.Logit(s, a);
    const double p = detail::Sigmoid(l);
    double dloss_dlogit;
    if (minimax) {
      out.loss += std::log1p(-p) / n;
      dloss_dlogit = -p / n;
    } else {
      out.loss += -std::log(p) / n;
      dloss_dlogit = (p - 1.0) / n;
    }
    Vector ga = disc.ActionGradient(s, a);
    for (double& v : ga) v *= dloss_dlogit;
    // d theta = d (theta + z): the perturbation is additive
    FlatParams g = Backward(perturbed, s, ga, bounds);
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += g.values[i];
  }
  return out;
}

// One generator Adam step on a frozen discriminator. Returns the loss before
// the step.
template <ActionDiscriminator D>
double GeneratorStep(FlatParams& policy, AdamState& adam, const ActionBounds& bounds,
                     const D& disc, const std::vector<Vector>& states, double sigma,
                     Rng& rng, bool minimax) {
  GeneratorGradient g =
      ComputeGeneratorGradient(policy, bounds, disc, states, sigma, rng, minimax);
  AdamStep(adam, policy.values, g.grad);
  return g.loss;
}

// Alternating discriminator and generator minibatch updates over
// data.distill_pairs. The discriminator is updated in place.
inline DistillResult DistillGan(const FlatParams& policy, const ActionBounds& bounds,
                                MlpDiscriminator& disc, const TransitionDataset& data,
                                const DistillConfig& cfg, std::uint64_t seed) {
  const auto& pairs = data.distill_pairs;
  if (pairs.empty()) throw UsageError("adversarial distillation needs state-action pairs");
  detail::CheckPairs(pairs, policy);
  CheckBounds(policy, bounds);
  const int sd = policy.shape.input_dim();
  const int ad = policy.shape.output_dim();
  if (disc.params().shape.input_dim() != sd + ad) {
    throw UsageError("discriminator input does not match state and action");
  }
  DistillResult result{policy, 0.0, {}, {}};
  FlatParams& theta = result.policy;
  AdamState g_adam = AdamState::For(theta.size(), cfg.gan_generator_learning_rate);
  AdamState d_adam = AdamState::For(disc.params().size(), cfg.gan_discriminator_learning_rate);
  Rng rng = MakeRng(seed, {0x6a9ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Vector d_grad(disc.params().size());
  double last_g = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double g_sum = 0.0, d_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t count = std::min<std::size_t>(cfg.batch, order.size() - start);
      Eigen::MatrixXd real(sd + ad, count), fake(sd + ad, count);
      std::vector<Vector> states;
      FlatParams perturbed = theta;
      for (std::size_t c = 0; c < count; ++c) {
        const auto& p = pairs[order[start + c]];
        states.push_back(p.state);
        for (int i = 0; i < sd; ++i) real(i, c) = fake(i, c) = p.state[i];
        for (int i = 0; i < ad; ++i) real(sd + i, c) = p.action[i];
        for (std::size_t i = 0; i < theta.size(); ++i) {
          perturbed.values[i] = theta.values[i] + cfg.gan_noise_sigma * normal(rng);
        }
        Vector a = Forward(perturbed, p.state, bounds);
        for (int i = 0; i < ad; ++i) fake(sd + i, c) = a[i];
      }
      std::fill(d_grad.begin(), d_grad.end(), 0.0);
      d_sum += disc.Loss(real, fake, d_grad.data());
      AdamStep(d_adam, disc.mutable_params().values, d_grad);
      g_sum += GeneratorStep(theta, g_adam, bounds, disc, states, cfg.gan_noise_sigma, rng,
                             cfg.gan_minimax);
      ++batches;
    }
    last_g = g_sum / batches;
    result.epoch_losses.push_back(last_g);
    result.discriminator_losses.push_back(d_sum / batches);
  }
  result.loss = last_g;
  return result;
}

// theta + componentwise mean of every recorded optimized noise vector; the
// records are consumed. With no records the policy is returned unchanged and
// a warning is printed.
inline FlatParams DistillAvg(const FlatParams& policy, TransitionDataset& data) {
  auto& records = data.noise_records;
  if (records.empty()) {
    std::cerr << "warning: averaging distillation skipped, no noise records\n";
    return policy;
  }
  Vector sum(policy.size(), 0.0);
  for (const auto& r : records) {
    if (r.noise.size() != policy.size()) {
      throw UsageError("noise record length differs from the policy parameter count");
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += r.noise[i];
  }
  FlatParams out = policy;
  const double n = static_cast<double>(records.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out.values[i] += sum[i] / n;
  records.clear();
  return out;
}

}  // namespace poplin
