// Copyright 2026 The HyperKD Authors
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

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace hyperkd {

/// 64-bit multiplicative congruential generator:
///
///   state_{n+1} = state_n * 0xf1357aea2e62a9c5  (mod 2^64),  state odd
///
/// Outputs are taken from the high bits only. Seeds are scrambled through
/// splitmix64 and forced odd. Everything here is integer arithmetic plus
/// std::log/std::cos in normal(), so sequences are platform independent.
class Rng {
 public:
  static constexpr std::uint64_t kMultiplier = 0xf1357aea2e62a9c5ULL;

  explicit Rng(std::uint64_t seed = 0) : state_(splitmix64(seed) | 1ULL) {}

  /// Deterministic child seed for a (seed, stream...) tuple.
  static std::uint64_t derive(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> streams) {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t s : streams) h = splitmix64(h ^ (s + 0x9e3779b97f4a7c15ULL));
    return h;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t next_u64() {
    state_ *= kMultiplier;
    return state_;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (one draw per call, no cached pair).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Normal with the given std, resampled until within two std of zero.
  double truncated_normal(double stddev) {
    for (;;) {
      const double z = normal();
      if (z >= -2.0 && z <= 2.0) return z * stddev;
    }
  }

  /// Seeded Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace hyperkd
