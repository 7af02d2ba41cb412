// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "difftune/common.hpp"
#include "difftune/data.hpp"
#include "difftune/schedules.hpp"

namespace difftune {

/// d x B, one example per column.
using ColumnBatch = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Anything that predicts the injected noise from a corrupted sample.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Eigen::Index dim() const = 0;
  /// Noise prediction for every column of `xt`, all at timestep t.
  virtual ColumnBatch predict_eps(const ColumnBatch& xt, Timestep t, Condition cond) const = 0;
  /// Per-column timesteps and conditions. The default evaluates one column
  /// at a time.
  virtual ColumnBatch predict_eps_each(const ColumnBatch& xt, std::span<const Timestep> t,
                                       std::span<const Condition> cond) const;
};

// -- parameterization conversions -------------------------------------------

namespace detail {
inline void require_interior_timestep(Timestep t, const NoiseSchedule& schedule,
                                      const char* what) {
  if (t < 1 || t > schedule.num_steps())
    throw InvalidArgument(std::string(what) + ": timestep " + std::to_string(t) +
                          " outside [1, " + std::to_string(schedule.num_steps()) + "]");
}
}  // namespace detail

/// Noise implied by a clean-sample estimate: (xt - sqrt(a) x0) / sqrt(1 - a).
template <typename DerivedA, typename DerivedB>
auto x0_to_eps(const Eigen::MatrixBase<DerivedA>& x0hat, const Eigen::MatrixBase<DerivedB>& xt,
               Timestep t, const NoiseSchedule& schedule) {
  detail::require_interior_timestep(t, schedule, "x0_to_eps");
  const Scalar a = schedule.alpha_bar(t);
  using Out = Eigen::Matrix<Scalar, DerivedA::RowsAtCompileTime, DerivedA::ColsAtCompileTime>;
  return Out((xt - std::sqrt(a) * x0hat) / std::sqrt(Scalar(1) - a));
}

/// Clean-sample estimate implied by a noise prediction:
/// (xt - sqrt(1 - a) eps) / sqrt(a).
template <typename DerivedA, typename DerivedB>
auto eps_to_x0(const Eigen::MatrixBase<DerivedA>& epshat, const Eigen::MatrixBase<DerivedB>& xt,
               Timestep t, const NoiseSchedule& schedule) {
  detail::require_interior_timestep(t, schedule, "eps_to_x0");
  const Scalar a = schedule.alpha_bar(t);
  if (!(a > 0)) throw InvalidArgument("eps_to_x0: alpha_bar underflowed to zero");
  using Out = Eigen::Matrix<Scalar, DerivedA::RowsAtCompileTime, DerivedA::ColsAtCompileTime>;
  return Out((xt - std::sqrt(Scalar(1) - a) * epshat) / std::sqrt(a));
}

// -- closed-form ideal denoiser ---------------------------------------------

/// Exact posterior-mean denoiser E[x0 | xt] over a finite support set.
///
/// The posterior over support atoms is a softmax of
/// -|xt - sqrt(a) x_i|^2 / (2 (1 - a)), evaluated with the max log-weight
/// subtracted so that it neither overflows nor collapses to all zeros when
/// 1 - a is tiny. Conditional queries restrict the support to one class.
class ClosedFormDenoiser : public Denoiser {
 public:
  ClosedFormDenoiser(PointDataset support, NoiseSchedule schedule);

  Eigen::Index dim() const override { return support_.dim(); }
  const PointDataset& support() const { return support_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// Posterior weights over the (class-restricted) support atoms.
  Eigen::VectorXd posterior_weights(const Point& xt, Timestep t,
                                    Condition cond = Condition::unconditional()) const;

  /// E[x0 | xt]. Rejects t = 0 and non-finite xt.
  Point denoise(const Point& xt, Timestep t, Condition cond = Condition::unconditional()) const;

  ColumnBatch predict_eps(const ColumnBatch& xt, Timestep t, Condition cond) const override;

 private:
  const PointMatrix& atoms(Condition cond) const;

  PointDataset support_;
  NoiseSchedule schedule_;
  std::vector<PointMatrix> class_atoms_;
};

inline Point ideal_denoise(const ClosedFormDenoiser& denoiser, const Point& xt, Timestep t,
                           Condition cond = Condition::unconditional()) {
  return denoiser.denoise(xt, t, cond);
}

// -- trainable MLP noise predictor ------------------------------------------

struct MlpArchitecture {
  int data_dim = 2;
  int num_classes = 0;
  std::vector<int> hidden = {128, 128, 128};
  int time_frequencies = 16;
  int cond_embed_dim = 16;

  int time_embed_dim() const { return 2 * time_frequencies; }
  int input_dim() const { return data_dim + time_embed_dim() + cond_embed_dim; }
  /// Weights, biases and the (num_classes + 1)-row condition table.
  Eigen::Index param_count() const;
  bool operator==(const MlpArchitecture&) const = default;
};

/// A batch of regression examples for the epsilon-prediction loss.
struct EpsBatch {
  ColumnBatch xt;      // d x B
  ColumnBatch target;  // d x B
  std::vector<Timestep> t;
  std::vector<Condition> cond;
  Eigen::VectorXd weights;  // B, nonnegative

  Eigen::Index size() const { return xt.cols(); }
};

struct LossGradient {
  double loss = 0.0;
  ParamVector grad;
};

/// SiLU multilayer perceptron predicting epsilon from
/// [xt, sinusoidal(t), embedding(cond)]. The last row of the condition table
/// is the unconditional embedding.
class MlpDenoiser : public Denoiser {
 public:
  MlpDenoiser(MlpArchitecture arch, ParamVector params);

  /// Fan-in scaled Gaussian hidden weights, zero biases, unit-variance
  /// condition table and an all-zero output layer.
  static MlpDenoiser initialize(const MlpArchitecture& arch, Seed seed);

  const MlpArchitecture& arch() const { return arch_; }
  const ParamVector& params() const { return params_; }
  ParamVector& mutable_params() { return params_; }

  Eigen::Index dim() const override { return arch_.data_dim; }

  /// Per-column timesteps and conditions.
  ColumnBatch forward(const ColumnBatch& xt, std::span<const Timestep> t,
                      std::span<const Condition> cond) const;
  Point forward(const Point& xt, Timestep t, Condition cond) const;

  ColumnBatch predict_eps(const ColumnBatch& xt, Timestep t, Condition cond) const override;
  ColumnBatch predict_eps_each(const ColumnBatch& xt, std::span<const Timestep> t,
                               std::span<const Condition> cond) const override {
    return forward(xt, t, cond);
  }

  /// Value and gradient of (1/B) sum_i w_i |target_i - f(xt_i)|^2.
  LossGradient loss_and_gradient(const EpsBatch& batch) const;

  /// Row `row` of the condition table (row num_classes is unconditional).
  Eigen::Map<const Eigen::VectorXd> condition_embedding(int row) const;
  Eigen::Map<Eigen::VectorXd> mutable_condition_embedding(int row);

 private:
  struct Forward;
  Forward run_forward(const ColumnBatch& xt, std::span<const Timestep> t,
                      std::span<const Condition> cond) const;
  int table_row(Condition cond) const;

  MlpArchitecture arch_;
  ParamVector params_;
};

/// Sinusoidal embedding [sin(t w_k), cos(t w_k)], w_k = 10000^(-k/F).
Eigen::VectorXd time_embedding(Timestep t, int frequencies);

inline Point mlp_forward(const MlpDenoiser& model, const Point& xt, Timestep t, Condition cond) {
  return model.forward(xt, t, cond);
}

inline LossGradient mlp_backward(const MlpDenoiser& model, const EpsBatch& batch) {
  return model.loss_and_gradient(batch);
}

void save_checkpoint(const MlpDenoiser& model, const std::filesystem::path& path);
MlpDenoiser load_checkpoint(const std::filesystem::path& path);

/// Frozen copy of the parameters at fine-tuning start.
class PretrainedSnapshot {
 public:
  explicit PretrainedSnapshot(ParamVector params0) : params0_(std::move(params0)) {}
  const ParamVector& params() const { return params0_; }

 private:
  ParamVector params0_;
};

// -- optimizer --------------------------------------------------------------

struct AdamHyperparams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  ParamVector m;
  ParamVector v;
  long step = 0;

  static AdamState zeros(Eigen::Index n) {
    return AdamState{ParamVector::Zero(n), ParamVector::Zero(n), 0};
  }
};

/// Bias-corrected Adam update. Non-finite gradients are rejected before any
/// state is touched.
void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const AdamHyperparams& hp);

}  // namespace difftune
