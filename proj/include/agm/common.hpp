// Copyright 2026 The AGM Authors. All Rights Reserved.
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

#ifndef AGM_COMMON_HPP_
#define AGM_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace agm {

enum class ErrorKind {
  kConfig,
  kData,
  kNumeric,
  kModality,
  kShape,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kNumeric: return "numeric failure";
    case ErrorKind::kModality: return "modality mismatch";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

/// Every failure raised by the library carries a kind so the CLI can map it
/// onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <typename... Args>
[[noreturn]] void fail(ErrorKind kind, Args&&... parts) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(parts));
  throw Error(kind, os.str());
}

/// CLI exit code for an error kind: 2 config, 3 data, 4 numeric.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kNumeric: return 4;
    default: return 3;
  }
}

// splitmix64 finalizer; used to derive independent seeds for sub-streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, Rest... rest) {
  std::uint64_t h = mix_seed(seed);
  ((h = mix_seed(h ^ static_cast<std::uint64_t>(rest))), ...);
  return h;
}

using Rng = std::mt19937_64;

// Uniform double in [0,1) built from raw engine bits, so results do not
// depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// Box-Muller; one draw per call keeps the stream position predictable.
inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  constexpr double kTwoPi = 6.283185307179586476925;
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(c[i - 1], c[j]);
  }
}

inline bool& verbose_flag() {
  static bool flag = false;
  return flag;
}

template <typename... Args>
void log_info(Args&&... parts) {
  if (!verbose_flag()) return;
  std::ostringstream os;
  (os << ... << std::forward<Args>(parts));
  std::cerr << "[agm] " << os.str() << '\n';
}

template <typename... Args>
void log_warn(Args&&... parts) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(parts));
  std::cerr << "[agm] warning: " << os.str() << '\n';
}

}  // namespace agm

#endif  // AGM_COMMON_HPP_
