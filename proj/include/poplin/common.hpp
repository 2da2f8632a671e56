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

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace poplin {

using Vector = std::vector<double>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Caller violated a precondition (dimension mismatch, empty data, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration value is invalid or unknown. `key()` names the offender.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what),
        key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Planning could not produce a finite result.
class PlannerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void Require(bool condition, const char* message) {
  if (!condition) throw UsageError(message);
}

inline bool AllFinite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ----- random streams ----- //

// splitmix64 finalizer
inline std::uint64_t MixBits(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent seed from a base seed and a list of integer keys
// (e.g. iteration and candidate index). Order of keys matters.
inline std::uint64_t DeriveSeed(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = MixBits(seed);
  for (std::uint64_t k : keys) h = MixBits(h ^ MixBits(k + 0x632be59bd9b4e019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng MakeRng(std::uint64_t seed,
                   std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(DeriveSeed(seed, keys));
}

// ----- parallelism ----- //

// Worker count for candidate evaluation. POPLIN_THREADS caps it; defaults to
// the hardware concurrency.
inline int ThreadCount() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("POPLIN_THREADS")) {
    int requested = std::atoi(env);
    if (requested >= 1) return requested;
  }
  return hw;
}

// Runs fn(i) for i in [0, n). Work items are claimed dynamically; callers must
// make fn(i) depend only on i so results are independent of scheduling.
template <typename Fn>
void ParallelFor(int n, Fn&& fn, int threads = ThreadCount()) {
  if (n <= 0) return;
  threads = std::clamp(threads, 1, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ----- small statistics helpers ----- //

inline double Mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// population standard deviation
inline double StdDev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double m = Mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

inline double Median(Vector x) {
  Require(!x.empty(), "median of empty set");
  std::sort(x.begin(), x.end());
  std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

}  // namespace poplin
