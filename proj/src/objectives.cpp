// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace difftune {

double psi(const CoefficientSchedule& coeffs, double t_normalized, const NoiseSchedule& schedule) {
  if (!(t_normalized >= 0.0 && t_normalized <= 1.0))
    throw InvalidArgument("psi: normalized time outside [0, 1]");
  switch (coeffs.family) {
    case CoefficientFamily::kPower:
      if (!(coeffs.tau >= 0.0)) throw InvalidArgument("psi: tau must be nonnegative");
      if (coeffs.tau == 0.0) return 1.0;
      if (t_normalized == 0.0) return 0.0;
      return std::pow(t_normalized, coeffs.tau);
    case CoefficientFamily::kSnr: {
      const auto t = static_cast<Timestep>(std::lround(t_normalized * schedule.num_steps()));
      if (t == 0) return 0.0;
      return 1.0 / (1.0 + snr(t, schedule));
    }
  }
  return 0.0;
}

TimestepCategorical::TimestepCategorical(Eigen::VectorXd mass, std::string name)
    : mass_(std::move(mass)), name_(std::move(name)) {
  if (mass_.size() < 1) throw InvalidArgument(name_ + ": categorical over no timesteps");
  double total = 0.0;
  for (Eigen::Index i = 0; i < mass_.size(); ++i) {
    if (!(mass_[i] >= 0.0) || !std::isfinite(mass_[i]))
      throw InvalidArgument(name_ + ": timestep masses must be finite and nonnegative");
    total += mass_[i];
    cumulative_.push_back(total);
  }
  if (!(total > 0.0))
    throw InvalidArgument("configuration error: the " + name_ +
                          " timestep distribution has zero total mass");
}

TimestepCategorical TimestepCategorical::uniform(int num_steps) {
  return TimestepCategorical(Eigen::VectorXd::Ones(num_steps), "uniform");
}

Timestep TimestepCategorical::sample(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto index = std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                              static_cast<std::ptrdiff_t>(cumulative_.size()) - 1);
  return static_cast<Timestep>(index) + 1;
}

Eigen::VectorXd coefficient_mass(const CoefficientSchedule& coeffs, const NoiseSchedule& schedule,
                                 bool retention) {
  const int steps = schedule.num_steps();
  Eigen::VectorXd mass(steps);
  for (int t = 1; t <= steps; ++t) {
    const double tn = static_cast<double>(t) / steps;
    mass[t - 1] = retention ? xi(coeffs, tn, schedule) : psi(coeffs, tn, schedule);
  }
  return mass;
}

Variant parse_variant(const std::string& name) {
  if (name == "standard_ft") return Variant::kStandardFt;
  if (name == "diff_tuning") return Variant::kDiffTuning;
  if (name == "retention_only") return Variant::kRetentionOnly;
  if (name == "reconsolidation_only") return Variant::kReconsolidationOnly;
  throw InvalidArgument("unknown variant '" + name + "'");
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::kStandardFt: return "standard_ft";
    case Variant::kDiffTuning: return "diff_tuning";
    case Variant::kRetentionOnly: return "retention_only";
    case Variant::kReconsolidationOnly: return "reconsolidation_only";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw InvalidArgument("batch_size must be even and >= 2");
  if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0))
    throw InvalidArgument("cfg_dropout must lie in [0, 1]");
  if (iterations < 0) throw InvalidArgument("iterations must be nonnegative");
  if (!(adam.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (coefficients.family == CoefficientFamily::kPower && !(coefficients.tau >= 0.0))
    throw InvalidArgument("tau must be nonnegative");
}

BranchPlan make_branch_plan(Variant variant, const CoefficientSchedule& coeffs,
                            const NoiseSchedule& schedule) {
  const int steps = schedule.num_steps();
  switch (variant) {
    case Variant::kStandardFt:
      return {std::nullopt, TimestepCategorical::uniform(steps)};
    case Variant::kDiffTuning: {
      Eigen::VectorXd ret = coefficient_mass(coeffs, schedule, true);
      TimestepCategorical adapt(coefficient_mass(coeffs, schedule, false), "adaptation (psi)");
      if (!(ret.sum() > 0.0)) return {std::nullopt, std::move(adapt)};
      return {TimestepCategorical(std::move(ret), "retention (xi)"), std::move(adapt)};
    }
    case Variant::kRetentionOnly:
      return {TimestepCategorical(coefficient_mass(coeffs, schedule, true), "retention (xi)"),
              TimestepCategorical(Eigen::VectorXd::Ones(steps), "adaptation (psi = 1)")};
    case Variant::kReconsolidationOnly:
      return {std::nullopt,
              TimestepCategorical(coefficient_mass(coeffs, schedule, false), "adaptation (psi)")};
  }
  throw InvalidArgument("unknown variant");
}

double eps_loss(const Denoiser& model, const EpsBatch& batch) {
  const ColumnBatch pred = model.predict_eps_each(batch.xt, batch.t, batch.cond);
  return ((batch.target - pred).colwise().squaredNorm().transpose().array() *
          batch.weights.array())
             .sum() /
         static_cast<double>(batch.size());
}

EpsBatch make_eps_batch(const PointMatrix& x0, const std::vector<Condition>& conds,
                        const TimestepCategorical& timesteps, const NoiseSchedule& schedule,
                        Seed stream, double cfg_dropout) {
  const Eigen::Index n = x0.rows();
  const Eigen::Index d = x0.cols();
  if (n < 1) throw InvalidArgument("loss batch must be nonempty");
  if (static_cast<Eigen::Index>(conds.size()) != n)
    throw InvalidArgument("one condition per example required");
  if (timesteps.num_steps() != schedule.num_steps())
    throw InvalidArgument("timestep distribution and noise schedule disagree on T");
  EpsBatch b;
  b.xt.resize(d, n);
  b.target.resize(d, n);
  b.t.resize(n);
  b.cond.resize(n);
  b.weights = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng(derive_seed(stream, {static_cast<std::uint64_t>(i)}));
    const double drop = rng.uniform();
    const Timestep t = timesteps.sample(rng);
    const Point eps = rng.normal_vector(d);
    b.t[i] = t;
    b.cond[i] = drop < cfg_dropout ? Condition::unconditional() : conds[i];
    b.target.col(i) = eps;
    b.xt.col(i) = forward_diffuse(x0.row(i).transpose(), t, eps, schedule);
  }
  return b;
}

SampledLoss ddpm_loss(const Denoiser& model, const PointMatrix& x0,
                      const std::vector<Condition>& conds, const NoiseSchedule& schedule,
                      Seed stream, double cfg_dropout) {
  SampledLoss out;
  out.batch = make_eps_batch(x0, conds, TimestepCategorical::uniform(schedule.num_steps()),
                             schedule, stream, cfg_dropout);
  out.loss = eps_loss(model, out.batch);
  return out;
}

StepBatches make_step_batches(const PointMatrix& downstream_x0,
                              const std::vector<Condition>& downstream_conds,
                              const PointMatrix& bank_x0, const BranchPlan& plan,
                              const NoiseSchedule& schedule, Seed stream, double cfg_dropout) {
  StepBatches out;
  if (plan.retention) {
    const std::vector<Condition> uncond(bank_x0.rows(), Condition::unconditional());
    out.retention = make_eps_batch(bank_x0, uncond, *plan.retention, schedule,
                                   derive_seed(stream, {0}), 0.0);
  }
  out.adaptation = make_eps_batch(downstream_x0, downstream_conds, plan.adaptation, schedule,
                                  derive_seed(stream, {1}), cfg_dropout);
  return out;
}

StepLosses diff_tuning_step_losses(const Denoiser& model, const PointMatrix& downstream_x0,
                                   const std::vector<Condition>& downstream_conds,
                                   const PointMatrix& bank_x0, const BranchPlan& plan,
                                   const NoiseSchedule& schedule, Seed stream,
                                   double cfg_dropout) {
  StepBatches batches = make_step_batches(downstream_x0, downstream_conds, bank_x0, plan,
                                          schedule, stream, cfg_dropout);
  StepLosses out;
  if (batches.retention) {
    const double loss = eps_loss(model, *batches.retention);
    out.retention = SampledLoss{std::move(*batches.retention), loss};
  }
  out.adaptation.loss = eps_loss(model, batches.adaptation);
  out.adaptation.batch = std::move(batches.adaptation);
  return out;
}

// -- Trainer -------------------------------------------------------------------

Trainer::Trainer(MlpDenoiser& model, TrainConfig config, NoiseSchedule schedule,
                 const PointDataset& downstream, const MemoryBank* bank, BranchPlan plan,
                 int adaptation_count, int retention_count)
    : model_(model),
      config_(std::move(config)),
      schedule_(std::move(schedule)),
      downstream_(downstream),
      bank_(bank),
      plan_(std::move(plan)),
      adaptation_count_(adaptation_count),
      retention_count_(retention_count),
      adam_(AdamState::zeros(model.params().size())) {
  config_.validate();
  if (downstream_.dim() != model_.dim())
    throw InvalidArgument("dataset dimension differs from model dimension");
  if (plan_.retention) {
    if (bank_ == nullptr) throw InvalidArgument("variant needs a memory bank");
    if (bank_->dim() != model_.dim())
      throw InvalidArgument("memory bank dimension differs from model dimension");
  }
}

Trainer::Trainer(MlpDenoiser& model, TrainConfig config, NoiseSchedule schedule,
                 const PointDataset& downstream, const MemoryBank* bank)
    : Trainer(model, config, schedule, downstream, bank,
              make_branch_plan(config.variant, config.coefficients, schedule),
              config.batch_size / 2, config.batch_size / 2) {}

Trainer Trainer::pretraining(MlpDenoiser& model, TrainConfig config, NoiseSchedule schedule,
                             const PointDataset& source) {
  const int steps = schedule.num_steps();
  const int batch = config.batch_size;
  return Trainer(model, std::move(config), std::move(schedule), source, nullptr,
                 BranchPlan{std::nullopt, TimestepCategorical::uniform(steps)}, batch, 0);
}

StepRecord Trainer::step(long iteration) {
  const auto it = static_cast<std::uint64_t>(iteration);
  const Seed stream = derive_seed(config_.seed, {it});

  // Minibatch indices, drawn with replacement from per-branch streams.
  PointMatrix down(adaptation_count_, downstream_.dim());
  std::vector<Condition> conds(adaptation_count_);
  {
    Rng pick(derive_seed(stream, {2}));
    for (int i = 0; i < adaptation_count_; ++i) {
      const auto row = static_cast<Eigen::Index>(pick.index(downstream_.size()));
      down.row(i) = downstream_.points().row(row);
      conds[i] = downstream_.condition(row);
    }
  }
  PointMatrix bank_rows;
  if (plan_.retention) {
    bank_rows.resize(retention_count_, bank_->dim());
    Rng pick(derive_seed(stream, {3}));
    for (int i = 0; i < retention_count_; ++i)
      bank_rows.row(i) = bank_->samples.row(static_cast<Eigen::Index>(pick.index(bank_->size())));
  }

  const StepBatches batches = make_step_batches(down, conds, bank_rows, plan_, schedule_, stream,
                                                config_.cfg_dropout);
  StepRecord rec;
  rec.iteration = iteration;
  LossGradient adapt = model_.loss_and_gradient(batches.adaptation);
  rec.adaptation_loss = adapt.loss;
  ParamVector grad = std::move(adapt.grad);
  if (batches.retention) {
    LossGradient ret = model_.loss_and_gradient(*batches.retention);
    rec.retention_loss = ret.loss;
    grad += ret.grad;
  }
  try {
    adam_step(model_.mutable_params(), grad, adam_, config_.adam);
  } catch (const NumericalError&) {
    throw NumericalError("non-finite gradient at iteration " + std::to_string(iteration),
                         iteration);
  }
  return rec;
}

EwcValue ewc_l2(const ParamVector& params, const PretrainedSnapshot& snapshot) {
  if (params.size() != snapshot.params().size())
    throw InvalidArgument("ewc_l2: parameter vectors differ in length");
  EwcValue v;
  v.count = params.size();
  v.total = (params - snapshot.params()).squaredNorm();
  v.mean = v.count > 0 ? v.total / static_cast<double>(v.count) : 0.0;
  return v;
}

}  // namespace difftune
