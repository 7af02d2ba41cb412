// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <initializer_list>
#include <random>

#include "difftune/common.hpp"

namespace difftune {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a path of
/// indices, e.g. derive_seed(seed, {iteration, branch, example}). The result
/// depends only on the arguments, never on evaluation order.
constexpr Seed derive_seed(Seed root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(root);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Seeded random stream. Not thread-safe; give each chain/example its own.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(seed) {}

  Scalar uniform() { return uniform_(engine_); }
  Scalar normal() { return normal_(engine_); }

  Point normal_vector(Eigen::Index dim) {
    Point v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal();
    return v;
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<Scalar> uniform_{0.0, 1.0};
  std::normal_distribution<Scalar> normal_{0.0, 1.0};
};

}  // namespace difftune
