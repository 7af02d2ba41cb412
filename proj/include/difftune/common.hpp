// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace difftune {

using Scalar = double;

/// A single d-dimensional sample.
using Point = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// N x d, one sample per row.
using PointMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
/// Flat parameter vector theta.
using ParamVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Timestep = int;
using Seed = std::uint64_t;

/// Thrown when a precondition on caller input is violated.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces a non-finite value. `where` is the
/// step, iteration or layer index at which it was detected.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long where)
      : std::runtime_error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

/// Thrown by the bank/checkpoint/config readers on malformed input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Class condition. Index -1 is the unconditional (CFG null) tag.
class Condition {
 public:
  constexpr Condition() = default;
  static constexpr Condition unconditional() { return Condition{}; }
  static constexpr Condition label(int index) { return Condition{index}; }

  constexpr bool is_unconditional() const { return index_ < 0; }
  constexpr int index() const { return index_; }
  constexpr bool operator==(const Condition&) const = default;

 private:
  constexpr explicit Condition(int index) : index_(index) {}
  int index_ = -1;
};

}  // namespace difftune
