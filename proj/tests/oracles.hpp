// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

// Reference computations used by the tests. Each one is written directly
// from its formula and shares no code path with the library under test.

#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Posterior mean over atoms (rows of `support`) with plain exponentials of
/// the Gaussian log-density. Safe only at moderate distances.
inline Eigen::VectorXd posterior_mean(const Eigen::MatrixXd& support, const Eigen::VectorXd& xt,
                                      double alpha_bar) {
  const double var = 1.0 - alpha_bar;
  const double norm = std::pow(2.0 * std::numbers::pi * var, -0.5 * static_cast<double>(xt.size()));
  Eigen::VectorXd num = Eigen::VectorXd::Zero(xt.size());
  double den = 0.0;
  for (Eigen::Index i = 0; i < support.rows(); ++i) {
    double sq = 0.0;
    for (Eigen::Index c = 0; c < xt.size(); ++c) {
      const double r = xt[c] - std::sqrt(alpha_bar) * support(i, c);
      sq += r * r;
    }
    const double density = norm * std::exp(-sq / (2.0 * var));
    num += density * support.row(i).transpose();
    den += density;
  }
  return num / den;
}

/// Product (1 - beta_s) for a linear beta grid, accumulated term by term.
inline double linear_alpha_bar(int steps, double b0, double b1, int t) {
  double p = 1.0;
  for (int s = 0; s < t; ++s) p *= 1.0 - (b0 + s * (b1 - b0) / (steps - 1));
  return p;
}

/// Squared distance by a scalar loop.
inline double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1): nodes sqrt(2) x_k and weights
/// w_k / sqrt(pi) from the Golub-Welsch eigenproblem.
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline Quadrature gauss_hermite(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  Quadrature q;
  for (int k = 0; k < n; ++k) {
    q.nodes.push_back(std::sqrt(2.0) * es.eigenvalues()[k]);
    const double v = es.eigenvectors()(0, k);
    q.weights.push_back(v * v);  // sqrt(pi) v^2 / sqrt(pi)
  }
  return q;
}

/// E[f(z)] for z ~ N(0, I_2) by the tensor Gauss-Hermite rule.
inline double expect_2d(const Quadrature& q, const std::function<double(double, double)>& f) {
  double acc = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i)
    for (std::size_t j = 0; j < q.nodes.size(); ++j)
      acc += q.weights[i] * q.weights[j] * f(q.nodes[i], q.nodes[j]);
  return acc;
}

/// Sliced 2-Wasserstein between a set and its translate by v, by dense
/// quadrature over directions on the half circle: mean |<u, v>|.
inline double translated_sliced_w2(const Eigen::Vector2d& v, int directions = 200000) {
  double acc = 0.0;
  for (int k = 0; k < directions; ++k) {
    const double a = std::numbers::pi * (k + 0.5) / directions;
    acc += std::abs(std::cos(a) * v[0] + std::sin(a) * v[1]);
  }
  return acc / directions;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols,
                                     double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  return m;
}

}  // namespace oracle
