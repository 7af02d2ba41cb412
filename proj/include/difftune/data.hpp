// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "difftune/common.hpp"

namespace difftune {

/// Finite set of bounded d-dimensional samples with optional class labels.
class PointDataset {
 public:
  /// Validates and takes ownership. `labels` is empty or one per row, each in
  /// [0, num_classes). The bound is the largest absolute coordinate.
  static PointDataset create(PointMatrix points, std::vector<int> labels = {},
                             int num_classes = 0);

  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }
  const PointMatrix& points() const { return points_; }
  Point point(Eigen::Index i) const { return points_.row(i).transpose(); }

  bool has_labels() const { return !labels_.empty(); }
  const std::vector<int>& labels() const { return labels_; }
  int num_classes() const { return num_classes_; }
  /// Label of row i, or unconditional when the set is unlabelled.
  Condition condition(Eigen::Index i) const;

  double bound() const { return bound_; }

  /// Rows carrying `label`; the whole set for the unconditional tag.
  PointDataset select(Condition condition) const;

 private:
  PointDataset(PointMatrix points, std::vector<int> labels, int num_classes, double bound)
      : points_(std::move(points)),
        labels_(std::move(labels)),
        num_classes_(num_classes),
        bound_(bound) {}

  PointMatrix points_;
  std::vector<int> labels_;
  int num_classes_ = 0;
  double bound_ = 0.0;
};

enum class DistributionKind { kGaussianMixture, kRing, kTwoSpirals, kCheckerboard };

DistributionKind parse_distribution_kind(const std::string& name);
std::string to_string(DistributionKind kind);

/// Parameters of a synthetic distribution. Unused fields are ignored by
/// kinds that do not need them. Gaussian noise is truncated at
/// `truncation` standard deviations so samples stay bounded.
struct DistributionSpec {
  DistributionKind kind = DistributionKind::kGaussianMixture;
  std::vector<Point> centers;   // gaussian_mixture
  std::vector<double> weights;  // gaussian_mixture, uniform when empty
  double sigma = 0.1;
  double radius = 1.0;  // ring
  double scale = 1.0;   // two_spirals, checkerboard half-width
  int cells = 4;        // checkerboard cells per side
  double rotation = 0.0;  // radians, 2-D only, applied before shift
  Point shift;            // empty means no shift
  double truncation = 4.0;
};

/// Evenly spaced mixture centres on a circle, the first at `phase` radians.
std::vector<Point> circle_centers(int count, double radius, double phase = 0.0);

/// Deterministic in (spec, n, seed).
PointDataset make_distribution(const DistributionSpec& spec, Eigen::Index n, Seed seed);

struct BankProvenance {
  std::string model_id = "unknown";
  std::string sampler = "unknown";
  int sampler_steps = 0;
  Seed seed = 0;
};

/// Samples drawn from the pre-trained model before fine-tuning, replayed by
/// the retention loss on the unconditional branch.
struct MemoryBank {
  PointMatrix samples;  // M x d
  Condition condition = Condition::unconditional();
  BankProvenance provenance;

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
};

/// Writes the "difftune-bank v1" CSV: two header lines then one row per
/// sample with shortest round-trip decimals.
void save_memory_bank(const MemoryBank& bank, const std::filesystem::path& path);

/// Inverse of save_memory_bank. Throws FormatError on an empty file, a
/// malformed header, a short or long row (naming its index), a row count that
/// disagrees with the header, or NaN coordinates. When `expected_dim` is set
/// the declared dimension must match it.
MemoryBank load_memory_bank(const std::filesystem::path& path,
                            std::optional<Eigen::Index> expected_dim = std::nullopt);

}  // namespace difftune
