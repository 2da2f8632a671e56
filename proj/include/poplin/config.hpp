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

// Run configuration as flat `key = value` text. Blank lines and lines
// starting with '#' are ignored. Keys are dotted (`cem.population`); unknown
// or repeated keys are rejected. `EchoConfig` writes every key in a fixed
// order with round-trip precision, so an echoed file reproduces the run.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "poplin/agent.hpp"
#include "poplin/common.hpp"

namespace poplin {

namespace detail {

inline std::string Trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline long ParseInteger(const std::string& key, const std::string& v) {
  long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t ParseUnsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double ParseReal(const std::string& key, const std::string& v) {
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  return out;
}

inline bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

// Comma-separated positive widths; empty means no hidden layer.
inline std::vector<int> ParseWidths(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    long w = ParseInteger(key, Trim(item));
    if (w < 1) throw ConfigError(key, "layer widths must be positive");
    out.push_back(static_cast<int>(w));
  }
  return out;
}

inline std::string Widths(const std::vector<int>& w) {
  if (w.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

inline std::string Real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline int ToInt(const std::string& key, const std::string& v) {
  long x = ParseInteger(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(key, "out of range");
  }
  return static_cast<int>(x);
}

struct ConfigField {
  std::string key;
  std::function<void(AgentConfig&, const std::string&)> set;
  std::function<std::string(const AgentConfig&)> get;
};

#define POPLIN_INT_FIELD(KEY, MEMBER)                                                    \
  ConfigField {                                                                          \
    KEY, [](AgentConfig& c, const std::string& v) { c.MEMBER = ToInt(KEY, v); },          \
        [](const AgentConfig& c) { return std::to_string(c.MEMBER); }                    \
  }
#define POPLIN_REAL_FIELD(KEY, MEMBER)                                                   \
  ConfigField {                                                                          \
    KEY, [](AgentConfig& c, const std::string& v) { c.MEMBER = ParseReal(KEY, v); },      \
        [](const AgentConfig& c) { return Real(c.MEMBER); }                              \
  }
#define POPLIN_BOOL_FIELD(KEY, MEMBER)                                                   \
  ConfigField {                                                                          \
    KEY, [](AgentConfig& c, const std::string& v) { c.MEMBER = ParseBool(KEY, v); },      \
        [](const AgentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }    \
  }
#define POPLIN_WIDTHS_FIELD(KEY, MEMBER)                                                 \
  ConfigField {                                                                          \
    KEY, [](AgentConfig& c, const std::string& v) { c.MEMBER = ParseWidths(KEY, v); },    \
        [](const AgentConfig& c) { return Widths(c.MEMBER); }                            \
  }

inline const std::vector<ConfigField>& ConfigFields() {
  static const std::vector<ConfigField> fields = {
      {"env.id",
       [](AgentConfig& c, const std::string& v) {
         MakeEnvironment(v);  // validates the id
         c.env_id = v;
       },
       [](const AgentConfig& c) { return c.env_id; }},
      {"seed", [](AgentConfig& c, const std::string& v) { c.seed = ParseUnsigned("seed", v); },
       [](const AgentConfig& c) { return std::to_string(c.seed); }},
      {"planner.variant",
       [](AgentConfig& c, const std::string& v) { c.planner.variant = ParsePlannerVariant(v); },
       [](const AgentConfig& c) { return std::string(ToString(c.planner.variant)); }},
      POPLIN_BOOL_FIELD("planner.warm_start", planner.warm_start),
      {"planner.execute",
       [](AgentConfig& c, const std::string& v) {
         if (v != "mean" && v != "best") {
           throw ConfigError("planner.execute", "expected mean or best");
         }
         c.planner.options.execute_best = v == "best";
       },
       [](const AgentConfig& c) {
         return std::string(c.planner.options.execute_best ? "best" : "mean");
       }},
      POPLIN_INT_FIELD("cem.population", planner.cem.population),
      POPLIN_INT_FIELD("cem.elites", planner.cem.elites),
      POPLIN_INT_FIELD("cem.iterations", planner.cem.iterations),
      POPLIN_REAL_FIELD("cem.alpha", planner.cem.alpha),
      POPLIN_REAL_FIELD("cem.init_sigma", planner.cem.init_sigma),
      POPLIN_INT_FIELD("cem.horizon", planner.cem.horizon),
      POPLIN_REAL_FIELD("cem.variance_floor", planner.cem.variance_floor),
      POPLIN_WIDTHS_FIELD("policy.hidden", policy_hidden),
      POPLIN_BOOL_FIELD("policy.zero_init", policy_zero_init),
      POPLIN_INT_FIELD("dynamics.ensemble_size", ensemble.ensemble_size),
      POPLIN_WIDTHS_FIELD("dynamics.hidden", ensemble.hidden),
      {"dynamics.mode",
       [](AgentConfig& c, const std::string& v) {
         if (v == "probabilistic") {
           c.ensemble.mode = ModelMode::kProbabilistic;
         } else if (v == "deterministic") {
           c.ensemble.mode = ModelMode::kDeterministic;
         } else {
           throw ConfigError("dynamics.mode", "expected probabilistic or deterministic");
         }
       },
       [](const AgentConfig& c) {
         return std::string(c.ensemble.mode == ModelMode::kProbabilistic ? "probabilistic"
                                                                         : "deterministic");
       }},
      POPLIN_INT_FIELD("dynamics.epochs", dynamics_train.epochs),
      POPLIN_INT_FIELD("dynamics.batch", dynamics_train.batch),
      POPLIN_REAL_FIELD("dynamics.lr", dynamics_train.learning_rate),
      POPLIN_BOOL_FIELD("dynamics.from_scratch", dynamics_from_scratch),
      {"distill.scheme",
       [](AgentConfig& c, const std::string& v) { c.distill.scheme = ParseDistillScheme(v); },
       [](const AgentConfig& c) { return std::string(ToString(c.distill.scheme)); }},
      POPLIN_INT_FIELD("distill.epochs", distill.epochs),
      POPLIN_INT_FIELD("distill.batch", distill.batch),
      POPLIN_REAL_FIELD("distill.bc_lr", distill.bc_learning_rate),
      POPLIN_REAL_FIELD("distill.gan_g_lr", distill.gan_generator_learning_rate),
      POPLIN_REAL_FIELD("distill.gan_d_lr", distill.gan_discriminator_learning_rate),
      POPLIN_REAL_FIELD("distill.gan_sigma", distill.gan_noise_sigma),
      POPLIN_REAL_FIELD("distill.entropy_penalty", distill.entropy_penalty),
      POPLIN_BOOL_FIELD("distill.gan_minimax", distill.gan_minimax),
      POPLIN_WIDTHS_FIELD("distill.disc_hidden", distill.discriminator_hidden),
      {"distill.data",
       [](AgentConfig& c, const std::string& v) { c.distill.data = ParseDistillData(v); },
       [](const AgentConfig& c) { return std::string(ToString(c.distill.data)); }},
      POPLIN_INT_FIELD("train.episodes_per_iteration", episodes_per_iteration),
      POPLIN_INT_FIELD("train.total_timesteps", total_timesteps),
      POPLIN_INT_FIELD("train.initial_random_timesteps", initial_random_timesteps),
      POPLIN_INT_FIELD("train.policy_eval_episodes", policy_eval_episodes),
      {"output.dir", [](AgentConfig& c, const std::string& v) { c.output_dir = v; },
       [](const AgentConfig& c) { return c.output_dir; }},
      POPLIN_INT_FIELD("output.dump_step", dump_step),
  };
  return fields;
}

#undef POPLIN_INT_FIELD
#undef POPLIN_REAL_FIELD
#undef POPLIN_BOOL_FIELD
#undef POPLIN_WIDTHS_FIELD

}  // namespace detail

// Applies `key = value` lines on top of `base`, then validates the result.
inline AgentConfig ParseConfig(std::string_view text, AgentConfig base = {}) {
  const auto& fields = detail::ConfigFields();
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::Trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = detail::Trim(std::string_view(t).substr(0, eq));
    std::string value = detail::Trim(std::string_view(t).substr(eq + 1));
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const auto& f) { return f.key == key; });
    if (it == fields.end()) throw ConfigError(key, "unknown configuration key");
    if (seen.count(key)) {
      throw ConfigError(key, "repeated on line " + std::to_string(line_no) +
                                 " (first on line " + std::to_string(seen[key]) + ")");
    }
    seen[key] = line_no;
    it->set(base, value);
  }
  base.Validate(MakeEnvironment(base.env_id)->spec());
  return base;
}

inline AgentConfig LoadConfig(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ParseConfig(ss.str());
}

inline std::string EchoConfig(const AgentConfig& cfg) {
  std::string out;
  for (const auto& f : detail::ConfigFields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace poplin
