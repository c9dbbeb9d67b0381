// Copyright 2026 The Polfuse Authors.
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

#ifndef POLFUSE_COMMON_HPP_
#define POLFUSE_COMMON_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace polfuse {

// Error categories map one-to-one onto the C API status codes and the CLI
// exit codes.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kData,
  kCapability,
  kNumerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error InvalidArgument(const std::string& what) {
  return Error(ErrorKind::kInvalidArgument, what);
}
inline Error ConfigError(const std::string& what) {
  return Error(ErrorKind::kConfig, what);
}
inline Error DataError(const std::string& what) {
  return Error(ErrorKind::kData, what);
}
inline Error CapabilityError(const std::string& what) {
  return Error(ErrorKind::kCapability, what);
}
inline Error NumericalError(const std::string& what) {
  return Error(ErrorKind::kNumerical, what);
}

// Warnings go through a replaceable sink so tests can observe them.
using WarningSink = std::function<void(std::string_view)>;
void SetWarningSink(WarningSink sink);
void Warn(std::string_view message);
// Progress messages; silent unless a sink is installed.
void SetInfoSink(WarningSink sink);
void Info(std::string_view message);

// 64-bit FNV-1a.
std::uint64_t Fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t SplitMix64(std::uint64_t x);

// Derives an independent seed for a named substream of a run-level seed.
std::uint64_t DeriveSeed(std::uint64_t seed, std::string_view stream);
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t index);

// Portable random source. The engine is bit-specified by the standard; the
// helpers below avoid the implementation-defined std distributions so that
// streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t Next() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t Below(std::uint64_t n);
  double Normal();

  template <typename T>
  void Shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(Below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace polfuse

#endif  // POLFUSE_COMMON_HPP_
