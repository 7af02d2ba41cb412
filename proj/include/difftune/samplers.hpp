// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "difftune/data.hpp"
#include "difftune/denoisers.hpp"
#include "difftune/schedules.hpp"

namespace difftune {

enum class SamplerMethod { kDdpm, kDdim };

SamplerMethod parse_sampler_method(const std::string& name);
std::string to_string(SamplerMethod method);

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::kDdim;
  int num_sample_steps = 50;
  double cfg_weight = 0.0;
  Seed seed = 0;
  /// When set, predicted x0 is clamped to [-clip, clip] per coordinate.
  std::optional<double> clip;
};

/// (1 + w) eps_cond - w eps_uncond.
template <typename DerivedC, typename DerivedU>
auto cfg_combine(const Eigen::MatrixBase<DerivedC>& eps_cond,
                 const Eigen::MatrixBase<DerivedU>& eps_uncond, double w) {
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols())
    throw InvalidArgument("cfg_combine: dimension mismatch");
  using Out = Eigen::Matrix<Scalar, DerivedC::RowsAtCompileTime, DerivedC::ColsAtCompileTime>;
  return Out((1.0 + w) * eps_cond - w * eps_uncond);
}

/// Increasing timesteps tau_1 = 1 < ... < tau_S = T at uniform stride
/// (rounded to nearest). A single step is just {T}.
std::vector<Timestep> sampling_timesteps(int num_steps, int num_sample_steps);

/// One reverse transition from t to t_prev for a batch of chains.
struct ReverseStep {
  ColumnBatch x0_pred;
  ColumnBatch next;
};

/// Guided noise prediction: plain conditional/unconditional output, or the
/// CFG combination when the condition is a class and w != 0.
ColumnBatch guided_eps(const Denoiser& denoiser, const ColumnBatch& xt, Timestep t, Condition cond,
                       double cfg_weight);

/// Ancestral DDPM transition between arbitrary t > t_prev >= 0 on the
/// strided grid. `noise` supplies one standard normal column per chain;
/// it is ignored when t_prev == 0.
ReverseStep ddpm_step(const ColumnBatch& xt, const ColumnBatch& eps_pred, Timestep t,
                      Timestep t_prev, const NoiseSchedule& schedule, const ColumnBatch& noise,
                      std::optional<double> clip);

/// Deterministic DDIM (eta = 0) transition.
ReverseStep ddim_step(const ColumnBatch& xt, const ColumnBatch& eps_pred, Timestep t,
                      Timestep t_prev, const NoiseSchedule& schedule, std::optional<double> clip);

/// Called after every transition with (step index, t, state before the step,
/// step result).
using StepObserver = std::function<void(int, Timestep, const ColumnBatch&, const ReverseStep&)>;

/// Generates `n` samples. Chain j draws x_T and all DDPM noise from its own
/// stream derive_seed(seed, {j}), so its randomness does not depend on n.
PointDataset sample(const Denoiser& denoiser, const NoiseSchedule& schedule,
                    const SamplerConfig& config, Eigen::Index n,
                    Condition cond = Condition::unconditional(),
                    const StepObserver& observer = {});

/// Index of the first sampler step handed to the pre-trained model:
/// ceil((1 - p) S), so any p > 0 replaces at least one final step.
int switch_step_index(double switch_fraction, int num_sample_steps);

/// Runs the first switch_step_index(p, S) high-noise steps with `finetuned`
/// and the remaining low-noise steps with `pretrained`.
PointDataset hybrid_sample(const Denoiser& finetuned, const Denoiser& pretrained,
                           double switch_fraction, const NoiseSchedule& schedule,
                           const SamplerConfig& config, Eigen::Index n,
                           Condition cond = Condition::unconditional(),
                           const StepObserver& observer = {});

}  // namespace difftune
