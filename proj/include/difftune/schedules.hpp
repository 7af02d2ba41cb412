// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "difftune/common.hpp"

namespace difftune {

/// Whether a schedule must reach the near-pure-noise regime
/// (alpha_bar[T] < kTerminalAlphaBarLimit) at its last step.
enum class TerminalCheck { kEnforce, kSkip };

inline constexpr double kTerminalAlphaBarLimit = 1e-3;

/// Discrete forward-process noise schedule.
///
/// `alpha_bar(t)` is defined for t in [0, T] with alpha_bar(0) == 1;
/// `beta(t)` for t in [1, T]. Immutable after construction.
template <typename T>
class BasicNoiseSchedule {
 public:
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  /// Builds the schedule from per-step betas beta_1..beta_T.
  static BasicNoiseSchedule from_betas(const Vector& betas,
                                       TerminalCheck check = TerminalCheck::kEnforce) {
    if (betas.size() < 1) throw InvalidArgument("noise schedule needs at least one step");
    for (Eigen::Index s = 0; s < betas.size(); ++s) {
      if (!(betas[s] > T(0) && betas[s] < T(1))) {
        std::ostringstream os;
        os << "beta[" << s + 1 << "] = " << betas[s] << " is outside (0, 1)";
        throw InvalidArgument(os.str());
      }
    }
    Vector alpha_bar(betas.size() + 1);
    alpha_bar[0] = T(1);
    for (Eigen::Index s = 0; s < betas.size(); ++s)
      alpha_bar[s + 1] = alpha_bar[s] * (T(1) - betas[s]);

    const T terminal = alpha_bar[betas.size()];
    if (check == TerminalCheck::kEnforce && !(terminal < T(kTerminalAlphaBarLimit))) {
      std::ostringstream os;
      os.precision(17);
      os << "alpha_bar[T] = " << terminal << " must be below " << kTerminalAlphaBarLimit
         << " so that x_T is close to pure noise";
      throw InvalidArgument(os.str());
    }
    return BasicNoiseSchedule(betas, std::move(alpha_bar));
  }

  int num_steps() const { return static_cast<int>(betas_.size()); }

  T alpha_bar(Timestep t) const {
    check_range(t, 0);
    return alpha_bar_[t];
  }

  T beta(Timestep t) const {
    check_range(t, 1);
    return betas_[t - 1];
  }

  const Vector& alpha_bars() const { return alpha_bar_; }
  const Vector& betas() const { return betas_; }

 private:
  BasicNoiseSchedule(Vector betas, Vector alpha_bar)
      : betas_(std::move(betas)), alpha_bar_(std::move(alpha_bar)) {}

  void check_range(Timestep t, Timestep lo) const {
    if (t < lo || t > num_steps()) {
      std::ostringstream os;
      os << "timestep " << t << " outside [" << lo << ", " << num_steps() << "]";
      throw InvalidArgument(os.str());
    }
  }

  Vector betas_;
  Vector alpha_bar_;
};

using NoiseSchedule = BasicNoiseSchedule<Scalar>;

/// Standard DDPM linear beta schedule.
template <typename T = Scalar>
BasicNoiseSchedule<T> make_linear_schedule(int num_steps, T beta_start, T beta_end,
                                           TerminalCheck check = TerminalCheck::kEnforce) {
  if (num_steps < 2) throw InvalidArgument("linear schedule needs num_steps >= 2");
  if (!(beta_start > T(0) && beta_start <= beta_end && beta_end < T(1)))
    throw InvalidArgument("linear schedule needs 0 < beta_start <= beta_end < 1");
  using Vector = typename BasicNoiseSchedule<T>::Vector;
  Vector betas = Vector::LinSpaced(num_steps, beta_start, beta_end);
  return BasicNoiseSchedule<T>::from_betas(betas, check);
}

/// Signal-to-noise ratio alpha_bar / (1 - alpha_bar). Infinite at t = 0, so
/// that timestep is rejected.
template <typename T>
T snr(Timestep t, const BasicNoiseSchedule<T>& schedule) {
  if (t == 0) throw InvalidArgument("snr is infinite at t = 0");
  const T a = schedule.alpha_bar(t);
  return a / (T(1) - a);
}

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
///
/// Works on single points or on whole matrices of points.
template <typename T, typename DerivedX, typename DerivedE>
auto forward_diffuse(const Eigen::MatrixBase<DerivedX>& x0, Timestep t,
                     const Eigen::MatrixBase<DerivedE>& eps,
                     const BasicNoiseSchedule<T>& schedule)
    -> Eigen::Matrix<typename DerivedX::Scalar, DerivedX::RowsAtCompileTime,
                     DerivedX::ColsAtCompileTime> {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw InvalidArgument("forward_diffuse: x0 and eps have different shapes");
  const T a = schedule.alpha_bar(t);
  return std::sqrt(a) * x0 + std::sqrt(T(1) - a) * eps;
}

}  // namespace difftune
