// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include "difftune/data.hpp"
#include "difftune/denoisers.hpp"
#include "difftune/rng.hpp"
#include "difftune/schedules.hpp"

namespace difftune {

// -- coefficient schedules ----------------------------------------------------

enum class CoefficientFamily { kPower, kSnr };

/// The reconsolidation coefficient psi over normalized time, with the
/// retention coefficient xi = 1 - psi.
struct CoefficientSchedule {
  CoefficientFamily family = CoefficientFamily::kPower;
  double tau = 1.0;

  static CoefficientSchedule power(double tau) { return {CoefficientFamily::kPower, tau}; }
  static CoefficientSchedule snr_based() { return {CoefficientFamily::kSnr, 0.0}; }
};

/// psi(t) for t in [0, 1]. Power family: t^tau, with psi == 1 when tau == 0
/// and psi(0) == 0 otherwise. SNR family: 1 / (1 + SNR(round(t T))), 0 at t = 0.
double psi(const CoefficientSchedule& coeffs, double t_normalized, const NoiseSchedule& schedule);

inline double xi(const CoefficientSchedule& coeffs, double t_normalized,
                 const NoiseSchedule& schedule) {
  return 1.0 - psi(coeffs, t_normalized, schedule);
}

// -- timestep sampling --------------------------------------------------------

/// Categorical distribution over t in {1..T}, probability proportional to
/// `mass[t - 1]`. Sampling is by inverse CDF over the cumulative masses.
class TimestepCategorical {
 public:
  /// Throws InvalidArgument naming `name` when the total mass is zero.
  TimestepCategorical(Eigen::VectorXd mass, std::string name);

  static TimestepCategorical uniform(int num_steps);

  Timestep sample(Rng& rng) const;
  double probability(Timestep t) const { return mass_[t - 1] / cumulative_.back(); }
  int num_steps() const { return static_cast<int>(mass_.size()); }
  const Eigen::VectorXd& mass() const { return mass_; }
  const std::string& name() const { return name_; }

 private:
  Eigen::VectorXd mass_;
  std::vector<double> cumulative_;
  std::string name_;
};

/// Mass psi(t / T) (or xi(t / T) when `retention`) for t = 1..T.
Eigen::VectorXd coefficient_mass(const CoefficientSchedule& coeffs, const NoiseSchedule& schedule,
                                 bool retention);

// -- training configuration ---------------------------------------------------

enum class Variant { kStandardFt, kDiffTuning, kRetentionOnly, kReconsolidationOnly };

Variant parse_variant(const std::string& name);
std::string to_string(Variant variant);

struct TrainConfig {
  int batch_size = 64;  // even; split B/2 retention, B/2 adaptation
  AdamHyperparams adam;
  long iterations = 2000;
  Seed seed = 0;
  double cfg_dropout = 0.1;
  CoefficientSchedule coefficients = CoefficientSchedule::power(1.0);
  Variant variant = Variant::kDiffTuning;

  void validate() const;
};

/// Timestep distributions of the two branches for a variant. `retention`
/// is empty when the variant draws no retention examples.
struct BranchPlan {
  std::optional<TimestepCategorical> retention;
  TimestepCategorical adaptation;
};

/// standard_ft: uniform adaptation only. diff_tuning: xi / psi, retention
/// skipped when xi has no mass. retention_only: xi and a uniform adaptation
/// branch. reconsolidation_only: psi adaptation, no retention.
BranchPlan make_branch_plan(Variant variant, const CoefficientSchedule& coeffs,
                            const NoiseSchedule& schedule);

// -- losses -------------------------------------------------------------------

/// Loss terms of one branch: the regression batch plus its mean loss.
struct SampledLoss {
  EpsBatch batch;
  double loss = 0.0;
};

/// Mean |eps - f(xt)|^2 over the batch for any denoiser.
double eps_loss(const Denoiser& model, const EpsBatch& batch);

/// Corrupts every row of `x0` at a timestep drawn from `timesteps`. Example
/// i draws from its own stream derive_seed(stream, {i}) in the fixed order
/// (dropout uniform, t, eps), so results do not depend on batch traversal.
/// With probability `cfg_dropout` the condition becomes unconditional.
EpsBatch make_eps_batch(const PointMatrix& x0, const std::vector<Condition>& conds,
                        const TimestepCategorical& timesteps, const NoiseSchedule& schedule,
                        Seed stream, double cfg_dropout);

/// Standard DDPM objective: t uniform on {1..T}, eps ~ N(0, I).
SampledLoss ddpm_loss(const Denoiser& model, const PointMatrix& x0,
                      const std::vector<Condition>& conds, const NoiseSchedule& schedule,
                      Seed stream, double cfg_dropout = 0.0);

struct StepBatches {
  std::optional<EpsBatch> retention;
  EpsBatch adaptation;
};

/// The regression batches of one Diff-Tuning step; see
/// diff_tuning_step_losses for the sampling rules.
StepBatches make_step_batches(const PointMatrix& downstream_x0,
                              const std::vector<Condition>& downstream_conds,
                              const PointMatrix& bank_x0, const BranchPlan& plan,
                              const NoiseSchedule& schedule, Seed stream, double cfg_dropout);

struct StepLosses {
  std::optional<SampledLoss> retention;
  SampledLoss adaptation;
};

/// Retention examples (bank rows, unconditional) draw t from the plan's
/// retention categorical; adaptation examples (downstream rows, own labels
/// modulo cfg dropout) from its adaptation categorical. Both use the simple
/// unweighted loss. The two streams are derive_seed(stream, {0}) and
/// derive_seed(stream, {1}).
StepLosses diff_tuning_step_losses(const Denoiser& model, const PointMatrix& downstream_x0,
                                   const std::vector<Condition>& downstream_conds,
                                   const PointMatrix& bank_x0, const BranchPlan& plan,
                                   const NoiseSchedule& schedule, Seed stream, double cfg_dropout);

// -- training -----------------------------------------------------------------

struct StepRecord {
  long iteration = 0;
  std::optional<double> retention_loss;
  double adaptation_loss = 0.0;
};

/// Owns the optimizer state and runs one fine-tuning (or pre-training)
/// update per call. With no bank every iteration draws B/2 downstream
/// examples; with a bank, B/2 bank rows join through the retention branch.
class Trainer {
 public:
  /// Fine-tuning per `config.variant`. `bank` may be null only for variants
  /// without a retention branch.
  Trainer(MlpDenoiser& model, TrainConfig config, NoiseSchedule schedule,
          const PointDataset& downstream, const MemoryBank* bank);

  /// Plain DDPM pre-training on `source` with full batches of B.
  static Trainer pretraining(MlpDenoiser& model, TrainConfig config, NoiseSchedule schedule,
                             const PointDataset& source);

  /// Draws minibatches for `iteration`, computes both losses and applies one
  /// Adam update of their summed gradient.
  StepRecord step(long iteration);

  const BranchPlan& plan() const { return plan_; }
  const AdamState& optimizer_state() const { return adam_; }

 private:
  Trainer(MlpDenoiser& model, TrainConfig config, NoiseSchedule schedule,
          const PointDataset& downstream, const MemoryBank* bank, BranchPlan plan,
          int adaptation_count, int retention_count);

  MlpDenoiser& model_;
  TrainConfig config_;
  NoiseSchedule schedule_;
  const PointDataset& downstream_;
  const MemoryBank* bank_;
  BranchPlan plan_;
  int adaptation_count_;
  int retention_count_;
  AdamState adam_;
};

// -- parameter-space forgetting -------------------------------------------------

struct EwcValue {
  double total = 0.0;  // |theta - theta0|^2
  double mean = 0.0;   // total / count
  Eigen::Index count = 0;
};

EwcValue ewc_l2(const ParamVector& params, const PretrainedSnapshot& snapshot);

}  // namespace difftune
