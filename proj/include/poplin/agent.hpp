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

// Outer training loop and the two evaluation protocols.
//
// Training first collects `initial_random_timesteps` steps with uniform
// random actions, then repeats:
//   1. train the dynamics ensemble on all data
//   2. run `episodes_per_iteration` episodes under MPC, executing only the
//      first planned action at each step
//   3. distill the planned behavior into the policy
// until `total_timesteps` environment steps have been taken.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "poplin/common.hpp"
#include "poplin/distill.hpp"
#include "poplin/dynamics.hpp"
#include "poplin/envs.hpp"
#include "poplin/net.hpp"
#include "poplin/planner.hpp"
#include "poplin/record.hpp"

namespace poplin {

struct AgentConfig {
  std::string env_id = "pendulum";
  std::uint64_t seed = 0;
  PlannerSettings planner;
  std::vector<int> policy_hidden = {32};
  bool policy_zero_init = false;
  EnsembleConfig ensemble;
  DynamicsTrainOptions dynamics_train;
  bool dynamics_from_scratch = false;
  DistillConfig distill;
  int episodes_per_iteration = 1;
  int total_timesteps = 4000;
  int initial_random_timesteps = 200;
  // Policy-control episodes after each iteration (0 disables the column).
  int policy_eval_episodes = 1;
  // Output directory for run.csv, checkpoints and states; empty writes nothing.
  std::string output_dir;
  // Global MPC step whose planner candidates are dumped; -1 disables.
  int dump_step = -1;

  void Validate(const EnvSpec& spec) const {
    planner.cem.Validate();
    distill.Validate(planner.variant);
    for (int h : policy_hidden) {
      if (h < 1) throw ConfigError("policy.hidden", "layer widths must be positive");
    }
    if (ensemble.ensemble_size < 1) throw ConfigError("dynamics.ensemble_size", "must be >= 1");
    for (int h : ensemble.hidden) {
      if (h < 1) throw ConfigError("dynamics.hidden", "layer widths must be positive");
    }
    if (dynamics_train.epochs < 0) throw ConfigError("dynamics.epochs", "must be >= 0");
    if (dynamics_train.batch < 1) throw ConfigError("dynamics.batch", "must be >= 1");
    if (!(dynamics_train.learning_rate > 0)) throw ConfigError("dynamics.lr", "must be > 0");
    if (episodes_per_iteration < 1) {
      throw ConfigError("train.episodes_per_iteration", "must be >= 1");
    }
    if (initial_random_timesteps < spec.horizon ||
        initial_random_timesteps % spec.horizon != 0) {
      throw ConfigError("train.initial_random_timesteps",
                        "must be a positive multiple of the episode length " +
                            std::to_string(spec.horizon));
    }
    if (total_timesteps < initial_random_timesteps || total_timesteps % spec.horizon != 0) {
      throw ConfigError("train.total_timesteps",
                        "must be a multiple of the episode length and >= "
                        "train.initial_random_timesteps");
    }
    if (policy_eval_episodes < 0) throw ConfigError("train.policy_eval_episodes", "must be >= 0");
  }
};

struct RunRow {
  long timestep = 0;
  int episode = 0;
  double mpc_return = 0.0;
  std::optional<double> policy_return;
  std::optional<double> dyn_loss;
  std::optional<double> distill_loss;
};

struct RunRecord {
  std::vector<RunRow> rows;

  std::string ToCsv() const {
    std::ostringstream os;
    os << "timestep,episode,mpc_return,policy_return,dyn_loss,distill_loss\n";
    auto put = [&os](const std::optional<double>& v) {
      os << ',';
      if (v) os << FormatDouble(*v);
    };
    for (const auto& r : rows) {
      os << r.timestep << ',' << r.episode << ',' << FormatDouble(r.mpc_return);
      put(r.policy_return);
      put(r.dyn_loss);
      put(r.distill_loss);
      os << '\n';
    }
    return os.str();
  }

  static std::string FormatDouble(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
  }
};

struct ReturnStats {
  Vector returns;
  double mean = 0.0;
  double std = 0.0;
};

inline ReturnStats MakeStats(Vector returns) {
  ReturnStats s;
  s.mean = Mean(returns);
  s.std = StdDev(returns);
  s.returns = std::move(returns);
  return s;
}

// Action for observation `obs` at step `t` of an episode; `seed` is unique to
// the (episode, step) pair.
using ControlFn = std::function<Vector(std::span<const double> obs, int t, std::uint64_t seed)>;

inline std::uint64_t EpisodeResetSeed(std::uint64_t seed, int episode) {
  return DeriveSeed(seed, {0xe9ULL, static_cast<std::uint64_t>(episode)});
}

inline std::uint64_t StepSeed(std::uint64_t seed, int episode, int t) {
  return DeriveSeed(seed, {0x91aULL, static_cast<std::uint64_t>(episode),
                           static_cast<std::uint64_t>(t)});
}

// Runs full episodes in the real environment. `on_episode_start` lets
// stateful controllers reset between episodes.
inline ReturnStats RunEpisodes(const Environment& env, const ControlFn& control, int episodes,
                               std::uint64_t seed,
                               const std::function<void()>& on_episode_start = {}) {
  if (episodes < 1) throw UsageError("evaluation needs at least one episode");
  Vector returns;
  for (int e = 0; e < episodes; ++e) {
    if (on_episode_start) on_episode_start();
    EnvState state = env.Reset(EpisodeResetSeed(seed, e));
    double total = 0.0;
    while (!state.done) {
      Vector a = Clip(control(state.observation, state.step_index,
                              StepSeed(seed, e, state.step_index)),
                      env.spec());
      auto [next, r] = env.Step(state, a);
      total += r;
      state = std::move(next);
    }
    returns.push_back(total);
  }
  return MakeStats(std::move(returns));
}

// Closed-loop a = pi_theta(s), no planning and no model.
inline ReturnStats EvaluatePolicyControl(const FlatParams& policy, const Environment& env,
                                         int episodes, std::uint64_t seed) {
  detail::CheckPolicy(policy, env.spec());
  const ActionBounds bounds = detail::BoundsOf(env.spec());
  return RunEpisodes(
      env, [&](std::span<const double> obs, int, std::uint64_t) { return Forward(policy, obs, bounds); },
      episodes, seed);
}

// Uniform random actions.
inline ReturnStats EvaluateRandom(const Environment& env, int episodes, std::uint64_t seed) {
  const EnvSpec& spec = env.spec();
  return RunEpisodes(
      env,
      [&](std::span<const double>, int, std::uint64_t step_seed) {
        Rng rng = MakeRng(step_seed, {0x7a4dULL});
        Vector a(spec.action_dim);
        for (int i = 0; i < spec.action_dim; ++i) {
          a[i] = std::uniform_real_distribution<double>(spec.action_low[i], spec.action_high[i])(rng);
        }
        return a;
      },
      episodes, seed);
}

// Full planning at every step through `model`; nothing is learned.
template <typename Model>
ReturnStats EvaluateMpc(Planner& planner, const Model& model, const FlatParams* policy,
                        const Environment& env, int episodes, std::uint64_t seed) {
  return RunEpisodes(
      env,
      [&](std::span<const double> obs, int, std::uint64_t step_seed) {
        return planner.Plan(obs, model, env, policy, step_seed).chosen_action;
      },
      episodes, seed, [&] { planner.ResetEpisode(); });
}

struct TrainingResult {
  RunRecord record;
  FlatParams policy;
  DynamicsEnsemble ensemble;
  TransitionDataset data;
  // Real states visited under MPC, in order.
  std::vector<Vector> mpc_states;
};

inline FlatParams MakePolicy(const EnvSpec& spec, const std::vector<int>& hidden, bool zero,
                             std::uint64_t seed) {
  MlpShape shape;
  shape.hidden = Activation::kTanh;
  shape.layers.push_back(spec.state_dim);
  for (int h : hidden) shape.layers.push_back(h);
  shape.layers.push_back(spec.action_dim);
  if (zero) return FlatParams(shape);
  Rng rng = MakeRng(seed, {0x901ULL});
  return InitParams(shape, rng);
}

namespace detail {

inline void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text;
}

inline std::string StatesCsv(const std::vector<Vector>& states) {
  std::ostringstream os;
  os << "index";
  if (!states.empty()) {
    for (std::size_t i = 0; i < states.front().size(); ++i) os << ",s" << i;
  }
  os << '\n';
  for (std::size_t k = 0; k < states.size(); ++k) {
    os << k;
    for (double v : states[k]) os << ',' << RunRecord::FormatDouble(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace detail

// Candidate dump of one planning call: per CEM iteration a candidate matrix
// (population x dim), the induced action matrix (population x horizon *
// action_dim) and the returns vector. Matrices are stored row-major, one
// candidate per row.
inline void WriteCandidateDump(const std::string& path, const CemTrace& trace) {
  std::vector<Record> records;
  for (const auto& it : trace.iterations) {
    // column-major (dim x K) storage equals row-major (K x dim)
    Record cands = MatrixRecord(static_cast<std::uint32_t>(it.candidates.cols()),
                                static_cast<std::uint32_t>(it.candidates.rows()),
                                Vector(it.candidates.data(),
                                       it.candidates.data() + it.candidates.size()));
    cands.tag = 0;
    records.push_back(std::move(cands));
    Record acts = MatrixRecord(static_cast<std::uint32_t>(it.actions.cols()),
                               static_cast<std::uint32_t>(it.actions.rows()),
                               Vector(it.actions.data(), it.actions.data() + it.actions.size()));
    acts.tag = 1;
    records.push_back(std::move(acts));
    records.push_back({RecordKind::kVector, 2,
                       {static_cast<std::uint32_t>(it.returns.size())}, it.returns});
  }
  WriteRecords(path, records);
}

struct CandidateDumpIteration {
  Eigen::MatrixXd candidates;  // population x dim
  Eigen::MatrixXd actions;     // population x horizon * action_dim
  Vector returns;
};

inline std::vector<CandidateDumpIteration> ReadCandidateDump(const std::string& path) {
  auto records = ReadRecords(path);
  if (records.empty() || records.size() % 3 != 0) throw FormatError(path + ": not a candidate dump");
  std::vector<CandidateDumpIteration> out;
  auto matrix = [&](const Record& r) {
    if (r.kind != RecordKind::kMatrix || r.dims.size() != 2 ||
        r.values.size() != static_cast<std::size_t>(r.dims[0]) * r.dims[1]) {
      throw FormatError(path + ": malformed matrix record");
    }
    // row-major rows x cols
    Eigen::MatrixXd m(r.dims[0], r.dims[1]);
    for (std::uint32_t i = 0; i < r.dims[0]; ++i) {
      for (std::uint32_t j = 0; j < r.dims[1]; ++j) m(i, j) = r.values[i * r.dims[1] + j];
    }
    return m;
  };
  for (std::size_t k = 0; k < records.size(); k += 3) {
    if (records[k + 2].kind != RecordKind::kVector) throw FormatError(path + ": missing returns");
    out.push_back({matrix(records[k]), matrix(records[k + 1]), records[k + 2].values});
  }
  return out;
}

inline std::string CandidateReturnsCsv(const CemTrace& trace) {
  std::ostringstream os;
  os << "iteration,candidate,return,elite_rank\n";
  for (std::size_t j = 0; j < trace.iterations.size(); ++j) {
    const auto& it = trace.iterations[j];
    std::vector<int> rank(it.returns.size(), -1);
    for (std::size_t e = 0; e < it.elites.size(); ++e) rank[it.elites[e]] = static_cast<int>(e);
    for (std::size_t c = 0; c < it.returns.size(); ++c) {
      os << j << ',' << c << ',' << RunRecord::FormatDouble(it.returns[c]) << ',' << rank[c]
         << '\n';
    }
  }
  return os.str();
}

// Training loop; fully deterministic given cfg.seed.
inline TrainingResult RunTraining(const AgentConfig& cfg) {
  auto env_ptr = MakeEnvironment(cfg.env_id);
  const Environment& env = *env_ptr;
  const EnvSpec& spec = env.spec();
  cfg.Validate(spec);
  namespace fs = std::filesystem;
  const bool write = !cfg.output_dir.empty();
  const fs::path out_dir(cfg.output_dir);
  if (write) fs::create_directories(out_dir);

  TrainingResult result;
  result.policy = MakePolicy(spec, cfg.policy_hidden, cfg.policy_zero_init, cfg.seed);
  result.ensemble = DynamicsEnsemble::Create(spec.state_dim, spec.action_dim, cfg.ensemble,
                                             DeriveSeed(cfg.seed, {0xe5ULL}));
  const DynamicsEnsemble fresh_ensemble = result.ensemble;
  TransitionDataset& data = result.data;
  RunRecord& record = result.record;
  const ActionBounds bounds = detail::BoundsOf(spec);
  const bool uses_policy = UsesPolicy(cfg.planner.variant);
  const bool param_space = IsParameterSpace(cfg.planner.variant);
  std::optional<MlpDiscriminator> disc;
  if (cfg.distill.scheme == DistillScheme::kGan) {
    disc.emplace(spec.state_dim, spec.action_dim, cfg.distill.discriminator_hidden,
                 cfg.distill.entropy_penalty, DeriveSeed(cfg.seed, {0xd15ULL}));
  }

  long timestep = 0;
  int episode = 0;
  auto flush = [&] {
    if (!write) return;
    detail::WriteText(out_dir / "run.csv", record.ToCsv());
  };

  // random phase
  while (timestep < cfg.initial_random_timesteps) {
    EnvState state = env.Reset(EpisodeResetSeed(cfg.seed, episode));
    double total = 0.0;
    while (!state.done) {
      Rng rng = MakeRng(StepSeed(cfg.seed, episode, state.step_index), {0x7a4dULL});
      Vector a(spec.action_dim);
      for (int i = 0; i < spec.action_dim; ++i) {
        a[i] = std::uniform_real_distribution<double>(spec.action_low[i], spec.action_high[i])(rng);
      }
      auto [next, r] = env.Step(state, a);
      data.Add({state.observation, a, next.observation, r});
      total += r;
      state = std::move(next);
      ++timestep;
    }
    record.rows.push_back({timestep, episode, total, std::nullopt, std::nullopt, std::nullopt});
    ++episode;
  }
  flush();

  Planner planner(cfg.planner);
  int iteration = 0;
  long mpc_step = 0;
  while (timestep < cfg.total_timesteps) {
    // 1. model
    std::vector<LossEntry> history;
    DynamicsEnsemble start = cfg.dynamics_from_scratch ? fresh_ensemble : result.ensemble;
    result.ensemble = TrainDynamics(std::move(start), data, cfg.dynamics_train,
                                    DeriveSeed(cfg.seed, {0xd7ULL, static_cast<std::uint64_t>(iteration)}),
                                    &history);
    std::optional<double> dyn_loss;
    if (!history.empty()) {
      double sum = 0.0;
      int count = 0;
      for (const auto& h : history) {
        if (h.epoch == cfg.dynamics_train.epochs - 1) {
          sum += h.loss;
          ++count;
        }
      }
      dyn_loss = sum / count;
    }

    // 2. interaction
    const std::size_t first_row = record.rows.size();
    for (int e = 0; e < cfg.episodes_per_iteration && timestep < cfg.total_timesteps; ++e) {
      planner.ResetEpisode();
      EnvState state = env.Reset(EpisodeResetSeed(cfg.seed, episode));
      double total = 0.0;
      while (!state.done) {
        const bool dump = cfg.dump_step >= 0 && mpc_step == cfg.dump_step;
        planner.options().record = dump;
        PlanOutcome plan = planner.Plan(state.observation, result.ensemble, env,
                                        uses_policy ? &result.policy : nullptr,
                                        StepSeed(cfg.seed, episode, state.step_index));
        if (!AllFinite(plan.chosen_action) || !std::isfinite(plan.best_candidate_return)) {
          std::ostringstream msg;
          msg << "non-finite plan at timestep " << timestep << " (episode " << episode
              << ", step " << state.step_index << "): best return "
              << plan.best_candidate_return << ", state [";
          for (double v : state.observation) msg << ' ' << v;
          msg << " ], action [";
          for (double v : plan.chosen_action) msg << ' ' << v;
          msg << " ]";
          throw PlannerError(msg.str());
        }
        if (dump && write && plan.trace) {
          WriteCandidateDump((out_dir / "candidates.bin").string(), *plan.trace);
          detail::WriteText(out_dir / "candidates.csv", CandidateReturnsCsv(*plan.trace));
        }
        Vector a = Clip(plan.chosen_action, spec);
        auto [next, r] = env.Step(state, a);
        result.mpc_states.push_back(state.observation);
        data.distill_pairs.push_back({state.observation, a});
        if (cfg.distill.data == DistillData::kHallucination) {
          const int sd = spec.state_dim;
          const int ad = spec.action_dim;
          const int steps = static_cast<int>(plan.plan_actions.size()) / ad;
          for (int t = 1; t < steps; ++t) {
            data.distill_pairs.push_back(
                {Vector(plan.plan_states.begin() + t * sd, plan.plan_states.begin() + (t + 1) * sd),
                 Vector(plan.plan_actions.begin() + t * ad,
                        plan.plan_actions.begin() + (t + 1) * ad)});
          }
        }
        if (param_space && cfg.distill.scheme == DistillScheme::kAvg) {
          data.noise_records.push_back({state.observation, plan.optimized_noise});
        }
        data.Add({state.observation, a, next.observation, r});
        total += r;
        state = std::move(next);
        ++timestep;
        ++mpc_step;
      }
      record.rows.push_back({timestep, episode, total, std::nullopt, dyn_loss, std::nullopt});
      ++episode;
    }

    // 3. distillation
    std::optional<double> distill_loss;
    const std::uint64_t distill_seed =
        DeriveSeed(cfg.seed, {0xd157ULL, static_cast<std::uint64_t>(iteration)});
    if (uses_policy) {
      switch (cfg.distill.scheme) {
        case DistillScheme::kNone:
          break;
        case DistillScheme::kBc: {
          DistillResult d = DistillBc(result.policy, bounds, data, cfg.distill, distill_seed);
          result.policy = std::move(d.policy);
          distill_loss = d.loss;
          break;
        }
        case DistillScheme::kGan: {
          DistillResult d =
              DistillGan(result.policy, bounds, *disc, data, cfg.distill, distill_seed);
          result.policy = std::move(d.policy);
          distill_loss = d.loss;
          break;
        }
        case DistillScheme::kAvg:
          result.policy = DistillAvg(result.policy, data);
          break;
      }
    }
    std::optional<double> policy_return;
    if (uses_policy && cfg.policy_eval_episodes > 0) {
      policy_return =
          EvaluatePolicyControl(result.policy, env, cfg.policy_eval_episodes,
                                DeriveSeed(cfg.seed, {0x90cULL, static_cast<std::uint64_t>(iteration)}))
              .mean;
    }
    for (std::size_t i = first_row; i < record.rows.size(); ++i) {
      record.rows[i].distill_loss = distill_loss;
      record.rows[i].policy_return = policy_return;
    }

    if (write) {
      SaveParams((out_dir / ("policy_iter" + std::to_string(iteration) + ".bin")).string(),
                 result.policy);
      SaveParams((out_dir / "policy.bin").string(), result.policy);
      SaveEnsemble((out_dir / "dynamics.bin").string(), result.ensemble);
      detail::WriteText(out_dir / "states.csv", detail::StatesCsv(result.mpc_states));
    }
    flush();
    ++iteration;
  }
  if (write && iteration == 0) {
    SaveParams((out_dir / "policy.bin").string(), result.policy);
  }
  return result;
}

}  // namespace poplin
