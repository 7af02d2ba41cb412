// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/samplers.hpp"

#include <cmath>

#include "difftune/rng.hpp"

namespace difftune {

SamplerMethod parse_sampler_method(const std::string& name) {
  if (name == "ddpm") return SamplerMethod::kDdpm;
  if (name == "ddim") return SamplerMethod::kDdim;
  throw InvalidArgument("unknown sampler method '" + name + "'");
}

std::string to_string(SamplerMethod method) {
  return method == SamplerMethod::kDdpm ? "ddpm" : "ddim";
}

std::vector<Timestep> sampling_timesteps(int num_steps, int num_sample_steps) {
  if (num_sample_steps < 1 || num_sample_steps > num_steps)
    throw InvalidArgument("num_sample_steps must lie in [1, T]");
  if (num_sample_steps == 1) return {num_steps};
  std::vector<Timestep> ts(num_sample_steps);
  const double stride = static_cast<double>(num_steps - 1) / (num_sample_steps - 1);
  for (int i = 0; i < num_sample_steps; ++i)
    ts[i] = 1 + static_cast<Timestep>(std::lround(stride * i));
  ts.back() = num_steps;
  return ts;
}

ColumnBatch guided_eps(const Denoiser& denoiser, const ColumnBatch& xt, Timestep t, Condition cond,
                       double cfg_weight) {
  if (cond.is_unconditional() || cfg_weight == 0.0) return denoiser.predict_eps(xt, t, cond);
  const ColumnBatch eps_c = denoiser.predict_eps(xt, t, cond);
  const ColumnBatch eps_u = denoiser.predict_eps(xt, t, Condition::unconditional());
  return cfg_combine(eps_c, eps_u, cfg_weight);
}

namespace {

void clamp(ColumnBatch& x0, std::optional<double> clip) {
  if (clip) x0 = x0.cwiseMax(-*clip).cwiseMin(*clip);
}

void check_transition(Timestep t, Timestep t_prev, const NoiseSchedule& schedule) {
  if (!(t >= 1 && t <= schedule.num_steps() && t_prev >= 0 && t_prev < t))
    throw InvalidArgument("reverse step needs T >= t > t_prev >= 0");
}

}  // namespace

ReverseStep ddpm_step(const ColumnBatch& xt, const ColumnBatch& eps_pred, Timestep t,
                      Timestep t_prev, const NoiseSchedule& schedule, const ColumnBatch& noise,
                      std::optional<double> clip) {
  check_transition(t, t_prev, schedule);
  const double a_t = schedule.alpha_bar(t);
  const double a_prev = schedule.alpha_bar(t_prev);
  const double alpha = a_t / a_prev;
  const double beta = 1.0 - alpha;

  ReverseStep out;
  out.x0_pred = eps_to_x0(eps_pred, xt, t, schedule);
  clamp(out.x0_pred, clip);
  const double c0 = std::sqrt(a_prev) * beta / (1.0 - a_t);
  const double ct = std::sqrt(alpha) * (1.0 - a_prev) / (1.0 - a_t);
  out.next = c0 * out.x0_pred + ct * xt;
  if (t_prev > 0) {
    if (noise.rows() != xt.rows() || noise.cols() != xt.cols())
      throw InvalidArgument("ddpm_step: noise shape differs from state");
    const double var = beta * (1.0 - a_prev) / (1.0 - a_t);
    out.next += std::sqrt(var) * noise;
  }
  return out;
}

ReverseStep ddim_step(const ColumnBatch& xt, const ColumnBatch& eps_pred, Timestep t,
                      Timestep t_prev, const NoiseSchedule& schedule, std::optional<double> clip) {
  check_transition(t, t_prev, schedule);
  const double a_prev = schedule.alpha_bar(t_prev);
  ReverseStep out;
  out.x0_pred = eps_to_x0(eps_pred, xt, t, schedule);
  if (clip) {
    clamp(out.x0_pred, clip);
    const ColumnBatch eps = x0_to_eps(out.x0_pred, xt, t, schedule);
    out.next = std::sqrt(a_prev) * out.x0_pred + std::sqrt(1.0 - a_prev) * eps;
  } else {
    out.next = std::sqrt(a_prev) * out.x0_pred + std::sqrt(1.0 - a_prev) * eps_pred;
  }
  return out;
}

namespace {

/// Shared reverse loop. `pick(i)` returns the denoiser for sampler step i.
template <typename Pick>
PointDataset run_sampler(Eigen::Index dim, Pick pick, const NoiseSchedule& schedule,
                         const SamplerConfig& config, Eigen::Index n, Condition cond,
                         const StepObserver& observer) {
  if (n < 1) throw InvalidArgument("sample count must be >= 1");
  if (!(config.cfg_weight >= 0.0)) throw InvalidArgument("cfg weight must be nonnegative");
  if (config.clip && !(*config.clip > 0.0)) throw InvalidArgument("clip must be positive");
  const std::vector<Timestep> ts = sampling_timesteps(schedule.num_steps(),
                                                      config.num_sample_steps);
  const int steps = static_cast<int>(ts.size());

  std::vector<Rng> chains;
  chains.reserve(n);
  ColumnBatch x(dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    chains.emplace_back(derive_seed(config.seed, {static_cast<std::uint64_t>(j)}));
    x.col(j) = chains.back().normal_vector(dim);
  }

  for (int i = 0; i < steps; ++i) {
    const Timestep t = ts[steps - 1 - i];
    const Timestep t_prev = i + 1 < steps ? ts[steps - 2 - i] : 0;
    const Denoiser& model = pick(i);
    if (model.dim() != dim) throw InvalidArgument("denoiser dimension mismatch");
    const ColumnBatch eps = guided_eps(model, x, t, cond, config.cfg_weight);

    ReverseStep step;
    if (config.method == SamplerMethod::kDdpm) {
      ColumnBatch noise(dim, n);
      if (t_prev > 0)
        for (Eigen::Index j = 0; j < n; ++j) noise.col(j) = chains[j].normal_vector(dim);
      step = ddpm_step(x, eps, t, t_prev, schedule, noise, config.clip);
    } else {
      step = ddim_step(x, eps, t, t_prev, schedule, config.clip);
    }
    if (!step.next.allFinite())
      throw NumericalError("non-finite sampler state at step " + std::to_string(i) +
                               " (t = " + std::to_string(t) + ")",
                           i);
    if (observer) observer(i, t, x, step);
    x = std::move(step.next);
  }
  return PointDataset::create(x.transpose());
}

}  // namespace

PointDataset sample(const Denoiser& denoiser, const NoiseSchedule& schedule,
                    const SamplerConfig& config, Eigen::Index n, Condition cond,
                    const StepObserver& observer) {
  return run_sampler(
      denoiser.dim(), [&](int) -> const Denoiser& { return denoiser; }, schedule, config, n, cond,
      observer);
}

int switch_step_index(double switch_fraction, int num_sample_steps) {
  if (!(switch_fraction >= 0.0 && switch_fraction <= 1.0))
    throw InvalidArgument("switch fraction must lie in [0, 1]");
  // Absorb representation error in (1 - p) * S before taking the ceiling.
  const double kept = (1.0 - switch_fraction) * num_sample_steps;
  const double rounded = std::round(kept);
  const double value = std::abs(kept - rounded) < 1e-9 ? rounded : std::ceil(kept);
  return static_cast<int>(value);
}

PointDataset hybrid_sample(const Denoiser& finetuned, const Denoiser& pretrained,
                           double switch_fraction, const NoiseSchedule& schedule,
                           const SamplerConfig& config, Eigen::Index n, Condition cond,
                           const StepObserver& observer) {
  if (finetuned.dim() != pretrained.dim())
    throw InvalidArgument("hybrid_sample: denoisers have different dimensions");
  const std::vector<Timestep> ts = sampling_timesteps(schedule.num_steps(),
                                                      config.num_sample_steps);
  const int boundary = switch_step_index(switch_fraction, static_cast<int>(ts.size()));
  return run_sampler(
      finetuned.dim(),
      [&](int i) -> const Denoiser& { return i < boundary ? finetuned : pretrained; }, schedule,
      config, n, cond, observer);
}

}  // namespace difftune
