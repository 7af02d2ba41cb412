// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "difftune/data.hpp"
#include "difftune/denoisers.hpp"
#include "difftune/samplers.hpp"

namespace difftune {

/// exp(-|x - y|^2 / (2 sigma^2)).
double rbf_kernel(const Point& x, const Point& y, double bandwidth);

/// Median pairwise distance over the pooled sets. Pools larger than
/// `max_points` are thinned to an evenly strided subset first.
double median_pairwise_distance(const PointMatrix& x, const PointMatrix& y,
                                Eigen::Index max_points = 1000);

/// Unbiased MMD^2 estimate (U-statistic), may be slightly negative.
double mmd_rbf_unbiased(const PointMatrix& x, const PointMatrix& y, double bandwidth);

/// Biased MMD^2 (V-statistic), zero when the two multisets coincide.
double mmd_rbf_biased(const PointMatrix& x, const PointMatrix& y, double bandwidth);

/// Reported MMD: the unbiased estimate floored at 0. The bandwidth defaults to
/// the median pairwise distance.
double mmd_rbf(const PointMatrix& x, const PointMatrix& y,
               std::optional<double> bandwidth = std::nullopt);

inline double mmd_rbf(const PointDataset& x, const PointDataset& y,
                      std::optional<double> bandwidth = std::nullopt) {
  return mmd_rbf(x.points(), y.points(), bandwidth);
}

/// 2-Wasserstein distance between two 1-D empirical distributions.
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// Mean over `num_projections` seeded random unit directions of the 1-D
/// 2-Wasserstein distance between the projected sets.
double sliced_wasserstein(const PointMatrix& x, const PointMatrix& y, int num_projections,
                          Seed seed);

inline double sliced_wasserstein(const PointDataset& x, const PointDataset& y,
                                 int num_projections, Seed seed) {
  return sliced_wasserstein(x.points(), y.points(), num_projections, seed);
}

/// Mean over rows of `x` of the distance to the nearest row of `reference`.
double nearest_sample_mean_distance(const PointMatrix& x, const PointMatrix& reference);

struct MetricOptions {
  std::optional<double> bandwidth;  // median heuristic when unset
  int num_projections = 128;
  Seed seed = 0;
};

struct MetricReport {
  double mmd = 0.0;
  double sliced_wasserstein = 0.0;
  double nearest_sample_mean_dist = 0.0;
  std::optional<double> ewc;
  Eigen::Index num_samples = 0;
  Eigen::Index num_reference = 0;
  double bandwidth = 0.0;
  int num_projections = 0;
  Seed seed = 0;
};

MetricReport evaluate_samples(const PointDataset& samples, const PointDataset& reference,
                              const MetricOptions& options);

/// Fixed column order of MetricReport rows.
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);

struct ForgettingRow {
  double switch_fraction = 0.0;
  MetricReport metrics;
};

/// For each fraction p: hybrid_sample(finetuned, pretrained, p) with the
/// shared sampler seed, then evaluate against `reference`.
std::vector<ForgettingRow> forgetting_curve(const Denoiser& finetuned, const Denoiser& pretrained,
                                            const NoiseSchedule& schedule,
                                            const SamplerConfig& sampler, Eigen::Index num_samples,
                                            const std::vector<double>& fractions,
                                            const PointDataset& reference,
                                            const MetricOptions& options,
                                            Condition cond = Condition::unconditional());

}  // namespace difftune
