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

#include "polfuse/common.hpp"

#include <cmath>
#include <iostream>
#include <mutex>

namespace polfuse {
namespace {

std::mutex& SinkMutex() {
  static std::mutex mu;
  return mu;
}

WarningSink& Sink() {
  static WarningSink sink = [](std::string_view message) {
    std::cerr << "warning: " << message << '\n';
  };
  return sink;
}

WarningSink& InfoSinkRef() {
  static WarningSink sink = [](std::string_view) {};
  return sink;
}

}  // namespace

void SetInfoSink(WarningSink sink) {
  std::lock_guard<std::mutex> lock(SinkMutex());
  InfoSinkRef() = sink ? std::move(sink) : [](std::string_view) {};
}

void Info(std::string_view message) {
  std::lock_guard<std::mutex> lock(SinkMutex());
  InfoSinkRef()(message);
}

void SetWarningSink(WarningSink sink) {
  std::lock_guard<std::mutex> lock(SinkMutex());
  if (sink) {
    Sink() = std::move(sink);
  } else {
    Sink() = [](std::string_view message) {
      std::cerr << "warning: " << message << '\n';
    };
  }
}

void Warn(std::string_view message) {
  std::lock_guard<std::mutex> lock(SinkMutex());
  Sink()(message);
}

std::uint64_t Fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t DeriveSeed(std::uint64_t seed, std::string_view stream) {
  return SplitMix64(seed ^ Fnv1a64(stream));
}

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t index) {
  return SplitMix64(SplitMix64(seed) + index);
}

std::uint64_t Rng::Below(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("Rng::Below: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::Normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = Uniform();
  } while (u1 <= 0.0);
  const double u2 = Uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace polfuse
