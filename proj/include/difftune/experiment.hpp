// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "difftune/data.hpp"
#include "difftune/denoisers.hpp"
#include "difftune/metrics.hpp"
#include "difftune/objectives.hpp"
#include "difftune/samplers.hpp"
#include "difftune/schedules.hpp"

namespace difftune {

// -- config file ----------------------------------------------------------------

/// Flat "key = value" text with "[section]" headers. Keys are stored as
/// "section.key". '#' starts a comment.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  /// "section.key=value"; replaces any existing value.
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

  /// Sorted "key=value" lines; the hashed identity of the config.
  std::string canonical() const;
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// -- experiment config ------------------------------------------------------------

enum class ExperimentKind {
  kPretrain,
  kMakeBank,
  kFinetune,
  kForgettingSweep,
  kTauSweep,
  kBankSizeSweep,
  kEval
};

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

struct ScheduleParams {
  int num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return make_linear_schedule(num_steps, beta_start, beta_end); }
};

struct DatasetParams {
  DistributionSpec spec;
  Eigen::Index n = 1000;
};

struct IoPaths {
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> pretrained;  // checkpoint of the source model
  std::optional<std::filesystem::path> finetuned;   // checkpoint of a fine-tuned model
  std::optional<std::filesystem::path> bank;        // memory bank CSV
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kFinetune;
  Seed seed = 0;
  std::string hash;  // hash of the canonical config text

  DatasetParams source;
  DatasetParams target;
  Eigen::Index reference_n = 2000;
  ScheduleParams schedule;
  MlpArchitecture arch;
  TrainConfig pretrain;
  TrainConfig finetune;
  SamplerConfig sampler;
  double clip_factor = 1.1;  // <= 0 disables clipping
  MetricOptions metrics;
  Eigen::Index eval_samples = 1000;
  long validation_interval = 100;  // 0 disables in-training evaluation
  Eigen::Index bank_size = 2000;
  std::vector<double> taus = {0.0, 0.3, 0.5, 0.7, 1.0, 1.5};
  std::vector<double> bank_sizes = {250, 500, 1000, 2000};
  std::vector<double> fractions = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  IoPaths io;

  /// Reads and validates every field. `seed` is mandatory.
  static ExperimentConfig from_config(const ConfigFile& file);

  /// Checks that input files required by `kind` exist.
  void validate_inputs() const;
};

// -- pipeline pieces ----------------------------------------------------------------

/// Downstream training set, held-out reference set and source set, each from
/// its own derived seed.
struct Datasets {
  PointDataset source;
  PointDataset target;
  PointDataset reference;
};

Datasets make_datasets(const ExperimentConfig& config);

/// Architecture with the data dimension and class count filled in.
MlpArchitecture resolve_architecture(const ExperimentConfig& config, const Datasets& data);

/// Sampler config with the clip bound derived from the datasets.
SamplerConfig resolve_sampler(const ExperimentConfig& config, const Datasets& data);

struct TrainLogRow {
  long iteration = 0;
  std::optional<double> retention_loss;
  double adaptation_loss = 0.0;
  std::optional<EwcValue> ewc;
  std::optional<double> validation_mmd;
};

using TrainLogSink = std::function<void(const TrainLogRow&)>;

/// DDPM pre-training of a freshly initialised model on `source`.
MlpDenoiser pretrain_model(const MlpArchitecture& arch, const TrainConfig& config,
                           const NoiseSchedule& schedule, const PointDataset& source,
                           const TrainLogSink& sink = {});

/// Unconditional samples of `model`, tagged with their provenance.
MemoryBank generate_bank(const MlpDenoiser& model, const NoiseSchedule& schedule,
                         const SamplerConfig& sampler, Eigen::Index size,
                         const std::string& model_id);

struct ValidationSpec {
  long interval = 0;  // 0 disables
  const PointDataset* reference = nullptr;
  SamplerConfig sampler;
  Eigen::Index num_samples = 500;
  MetricOptions metrics;
};

/// Algorithm-1 fine-tuning: theta <- theta0, then per iteration the
/// half-batch retention and adaptation losses and one summed update.
/// Every logged row carries the EWC distance from theta0.
MlpDenoiser finetune_model(const MlpDenoiser& pretrained, const TrainConfig& config,
                           const NoiseSchedule& schedule, const PointDataset& downstream,
                           const MemoryBank* bank, const ValidationSpec& validation = {},
                           const TrainLogSink& sink = {});

// -- runner ----------------------------------------------------------------------------

/// Runs one experiment and writes its artifacts under config.io.output_dir.
/// Returns the process exit status.
int run_experiment(const ExperimentConfig& config);

/// Provenance comment line placed at the top of every result CSV.
std::string artifact_header(const ExperimentConfig& config);

}  // namespace difftune
