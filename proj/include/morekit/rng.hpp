// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "morekit/tensor.hpp"

namespace morekit {

using Rng = std::mt19937_64;

/// Derives an independent child seed from a parent seed and a stream label,
/// so each consumer (init, sampling, data, ...) owns its own stream.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  // splitmix64 finalizer over the combination
  std::uint64_t z = parent + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label, std::uint64_t index) {
  return derive_seed(derive_seed(parent, label) + index, "#");
}

/// Tensor with i.i.d. N(0, stddev^2) entries.
inline Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace morekit
