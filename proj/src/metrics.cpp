// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "difftune/rng.hpp"
#include "difftune/text_io.hpp"

namespace difftune {

namespace {

void require_compatible(const PointMatrix& x, const PointMatrix& y, const char* what) {
  if (x.rows() < 1 || y.rows() < 1)
    throw InvalidArgument(std::string(what) + ": both sets must be nonempty");
  if (x.cols() != y.cols()) throw InvalidArgument(std::string(what) + ": dimension mismatch");
}

// Sum of k(a_i, b_j) over all pairs, optionally skipping i == j.
double kernel_sum(const PointMatrix& a, const PointMatrix& b, double bandwidth, bool skip_diag) {
  const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (skip_diag && i == j) continue;
      row += std::exp(scale * (a.row(i) - b.row(j)).squaredNorm());
    }
    total += row;
  }
  return total;
}

// Canonical order of two sets, so that cross sums do not depend on argument
// order.
bool precedes(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

double cross_sum(const PointMatrix& x, const PointMatrix& y, double bandwidth) {
  return precedes(y, x) ? kernel_sum(y, x, bandwidth, false) : kernel_sum(x, y, bandwidth, false);
}

void require_bandwidth(double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw InvalidArgument("kernel bandwidth must be positive");
}

}  // namespace

double rbf_kernel(const Point& x, const Point& y, double bandwidth) {
  require_bandwidth(bandwidth);
  return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

double median_pairwise_distance(const PointMatrix& x, const PointMatrix& y,
                                Eigen::Index max_points) {
  require_compatible(x, y, "median_pairwise_distance");
  PointMatrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  // Sorted rows make the thinned subset independent of input order.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(pooled.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < pooled.cols(); ++c)
      if (pooled(a, c) != pooled(b, c)) return pooled(a, c) < pooled(b, c);
    return false;
  });
  pooled = PointMatrix(pooled(order, Eigen::all));
  if (pooled.rows() > max_points) {
    PointMatrix thin(max_points, pooled.cols());
    for (Eigen::Index i = 0; i < max_points; ++i)
      thin.row(i) = pooled.row(i * pooled.rows() / max_points);
    pooled = std::move(thin);
  }
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j)
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dists.empty()) return 1.0;
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  const double median = *mid;
  return median > 0.0 ? median : 1.0;
}

double mmd_rbf_unbiased(const PointMatrix& x, const PointMatrix& y, double bandwidth) {
  require_compatible(x, y, "mmd_rbf");
  require_bandwidth(bandwidth);
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());
  if (m < 2 || n < 2) throw InvalidArgument("unbiased MMD needs at least two samples per set");
  const double kxx = kernel_sum(x, x, bandwidth, true) / (m * (m - 1));
  const double kyy = kernel_sum(y, y, bandwidth, true) / (n * (n - 1));
  const double kxy = cross_sum(x, y, bandwidth) / (m * n);
  return kxx + kyy - 2.0 * kxy;
}

double mmd_rbf_biased(const PointMatrix& x, const PointMatrix& y, double bandwidth) {
  require_compatible(x, y, "mmd_rbf");
  require_bandwidth(bandwidth);
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());
  const double kxx = kernel_sum(x, x, bandwidth, false) / (m * m);
  const double kyy = kernel_sum(y, y, bandwidth, false) / (n * n);
  const double kxy = cross_sum(x, y, bandwidth) / (m * n);
  return kxx + kyy - 2.0 * kxy;
}

double mmd_rbf(const PointMatrix& x, const PointMatrix& y, std::optional<double> bandwidth) {
  const double h = bandwidth ? *bandwidth : median_pairwise_distance(x, y);
  return std::max(0.0, mmd_rbf_unbiased(x, y, h));
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("wasserstein2_1d: empty input");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Walk the merged quantile breakpoints in integer units of 1 / (n m).
  const auto n = static_cast<long long>(a.size());
  const auto m = static_cast<long long>(b.size());
  long long i = 0, j = 0, pos = 0;
  double acc = 0.0;
  while (i < n && j < m) {
    const long long end_a = (i + 1) * m;
    const long long end_b = (j + 1) * n;
    const long long next = std::min(end_a, end_b);
    const double diff = a[i] - b[j];
    acc += static_cast<double>(next - pos) * diff * diff;
    pos = next;
    if (end_a == next) ++i;
    if (end_b == next) ++j;
  }
  return std::sqrt(acc / static_cast<double>(n * m));
}

double sliced_wasserstein(const PointMatrix& x, const PointMatrix& y, int num_projections,
                          Seed seed) {
  require_compatible(x, y, "sliced_wasserstein");
  if (num_projections < 1) throw InvalidArgument("sliced_wasserstein needs >= 1 projection");
  Rng rng(derive_seed(seed, {0x5357}));
  double total = 0.0;
  for (int k = 0; k < num_projections; ++k) {
    Point u = rng.normal_vector(x.cols());
    while (u.norm() == 0.0) u = rng.normal_vector(x.cols());
    u.normalize();
    const Eigen::VectorXd px = x * u;
    const Eigen::VectorXd py = y * u;
    total += wasserstein2_1d({px.data(), px.data() + px.size()},
                             {py.data(), py.data() + py.size()});
  }
  return total / num_projections;
}

double nearest_sample_mean_distance(const PointMatrix& x, const PointMatrix& reference) {
  require_compatible(x, reference, "nearest_sample_mean_distance");
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    total += std::sqrt((reference.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff());
  return total / static_cast<double>(x.rows());
}

MetricReport evaluate_samples(const PointDataset& samples, const PointDataset& reference,
                              const MetricOptions& options) {
  MetricReport r;
  r.bandwidth = options.bandwidth ? *options.bandwidth
                                  : median_pairwise_distance(samples.points(), reference.points());
  r.mmd = mmd_rbf(samples.points(), reference.points(), r.bandwidth);
  r.sliced_wasserstein =
      sliced_wasserstein(samples.points(), reference.points(), options.num_projections,
                         options.seed);
  r.nearest_sample_mean_dist = nearest_sample_mean_distance(samples.points(), reference.points());
  r.num_samples = samples.size();
  r.num_reference = reference.size();
  r.num_projections = options.num_projections;
  r.seed = options.seed;
  return r;
}

std::string metric_csv_header() {
  return "mmd,sliced_wasserstein,nearest_sample_mean_dist,ewc,num_samples,num_reference,"
         "bandwidth,num_projections,seed";
}

std::string metric_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os << text::format_exact(r.mmd) << ',' << text::format_exact(r.sliced_wasserstein) << ','
     << text::format_exact(r.nearest_sample_mean_dist) << ','
     << (r.ewc ? text::format_exact(*r.ewc) : std::string()) << ',' << r.num_samples << ','
     << r.num_reference << ',' << text::format_exact(r.bandwidth) << ',' << r.num_projections
     << ',' << r.seed;
  return os.str();
}

std::vector<ForgettingRow> forgetting_curve(const Denoiser& finetuned, const Denoiser& pretrained,
                                            const NoiseSchedule& schedule,
                                            const SamplerConfig& sampler, Eigen::Index num_samples,
                                            const std::vector<double>& fractions,
                                            const PointDataset& reference,
                                            const MetricOptions& options, Condition cond) {
  if (fractions.empty()) throw InvalidArgument("forgetting_curve: no fractions given");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0))
      throw InvalidArgument("forgetting_curve: fractions must lie in [0, 1]");
    if (i > 0 && fractions[i] < fractions[i - 1])
      throw InvalidArgument("forgetting_curve: fractions must be sorted");
  }
  std::vector<ForgettingRow> rows;
  rows.reserve(fractions.size());
  for (double p : fractions) {
    const PointDataset generated =
        hybrid_sample(finetuned, pretrained, p, schedule, sampler, num_samples, cond);
    rows.push_back({p, evaluate_samples(generated, reference, options)});
  }
  return rows;
}

}  // namespace difftune
