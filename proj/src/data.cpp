// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "difftune/rng.hpp"
#include "difftune/text_io.hpp"

namespace difftune {

namespace {

constexpr std::string_view kBankMagic = "difftune-bank v1";

double truncated_normal(Rng& rng, double truncation) {
  while (true) {
    const double z = rng.normal();
    if (std::abs(z) <= truncation) return z;
  }
}

std::size_t draw_component(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  for (std::size_t k = 0; k < cumulative.size(); ++k)
    if (u < cumulative[k]) return k;
  return cumulative.size() - 1;
}

void require_2d(const DistributionSpec& spec, const char* kind) {
  if (spec.shift.size() != 0 && spec.shift.size() != 2)
    throw InvalidArgument(std::string(kind) + " is two-dimensional; shift must have 2 entries");
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '=' || c == '\n' || c == '\r') c = '_';
  return s.empty() ? "unknown" : s;
}

}  // namespace

PointDataset PointDataset::create(PointMatrix points, std::vector<int> labels, int num_classes) {
  if (points.rows() < 1 || points.cols() < 1)
    throw InvalidArgument("dataset needs at least one point of dimension >= 1");
  if (!points.allFinite()) throw InvalidArgument("dataset contains non-finite coordinates");
  if (!labels.empty()) {
    if (static_cast<Eigen::Index>(labels.size()) != points.rows())
      throw InvalidArgument("dataset label count differs from point count");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes) {
        std::ostringstream os;
        os << "label " << labels[i] << " at row " << i << " outside [0, " << num_classes << ")";
        throw InvalidArgument(os.str());
      }
    }
  } else {
    num_classes = 0;
  }
  const double bound = std::max(points.cwiseAbs().maxCoeff(), 1e-12);
  return PointDataset(std::move(points), std::move(labels), num_classes, bound);
}

Condition PointDataset::condition(Eigen::Index i) const {
  return labels_.empty() ? Condition::unconditional() : Condition::label(labels_[i]);
}

PointDataset PointDataset::select(Condition condition) const {
  if (condition.is_unconditional()) return *this;
  if (labels_.empty() || condition.index() >= num_classes_)
    throw InvalidArgument("condition " + std::to_string(condition.index()) +
                          " is not a class of this dataset");
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == condition.index()) rows.push_back(static_cast<Eigen::Index>(i));
  if (rows.empty())
    throw InvalidArgument("class " + std::to_string(condition.index()) + " has no samples");
  PointMatrix subset(static_cast<Eigen::Index>(rows.size()), dim());
  for (std::size_t r = 0; r < rows.size(); ++r) subset.row(r) = points_.row(rows[r]);
  return create(std::move(subset), std::vector<int>(rows.size(), condition.index()), num_classes_);
}

DistributionKind parse_distribution_kind(const std::string& name) {
  if (name == "gaussian_mixture") return DistributionKind::kGaussianMixture;
  if (name == "ring") return DistributionKind::kRing;
  if (name == "two_spirals") return DistributionKind::kTwoSpirals;
  if (name == "checkerboard") return DistributionKind::kCheckerboard;
  throw InvalidArgument("unknown distribution kind '" + name + "'");
}

std::string to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::kGaussianMixture: return "gaussian_mixture";
    case DistributionKind::kRing: return "ring";
    case DistributionKind::kTwoSpirals: return "two_spirals";
    case DistributionKind::kCheckerboard: return "checkerboard";
  }
  return "unknown";
}

std::vector<Point> circle_centers(int count, double radius, double phase) {
  std::vector<Point> centers;
  centers.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double a = phase + 2.0 * std::numbers::pi * k / count;
    Point c(2);
    c << radius * std::cos(a), radius * std::sin(a);
    centers.push_back(std::move(c));
  }
  return centers;
}

PointDataset make_distribution(const DistributionSpec& spec, Eigen::Index n, Seed seed) {
  if (n < 1) throw InvalidArgument("sample count must be >= 1");
  if (!(spec.truncation > 0.0)) throw InvalidArgument("truncation must be positive");
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(spec.kind)}));

  PointMatrix points;
  std::vector<int> labels;
  int num_classes = 0;
  constexpr double pi = std::numbers::pi;

  switch (spec.kind) {
    case DistributionKind::kGaussianMixture: {
      if (spec.centers.empty()) throw InvalidArgument("gaussian_mixture needs centers");
      if (!(spec.sigma > 0.0))
        throw InvalidArgument("gaussian_mixture: degenerate component (sigma must be > 0)");
      const Eigen::Index d = spec.centers.front().size();
      for (const Point& c : spec.centers)
        if (c.size() != d || d < 1) throw InvalidArgument("gaussian_mixture: ragged centers");
      if (!spec.weights.empty() && spec.weights.size() != spec.centers.size())
        throw InvalidArgument("gaussian_mixture: one weight per center required");
      std::vector<double> cumulative;
      double total = 0.0;
      for (std::size_t k = 0; k < spec.centers.size(); ++k) {
        const double w = spec.weights.empty() ? 1.0 : spec.weights.at(k);
        if (!(w > 0.0)) throw InvalidArgument("gaussian_mixture: weights must be positive");
        total += w;
        cumulative.push_back(total);
      }
      num_classes = static_cast<int>(spec.centers.size());
      points.resize(n, d);
      labels.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t k = draw_component(rng, cumulative);
        labels[i] = static_cast<int>(k);
        for (Eigen::Index j = 0; j < d; ++j)
          points(i, j) = spec.centers[k][j] + spec.sigma * truncated_normal(rng, spec.truncation);
      }
      break;
    }
    case DistributionKind::kRing: {
      require_2d(spec, "ring");
      if (!(spec.sigma > 0.0) || !(spec.radius > 0.0))
        throw InvalidArgument("ring: radius and sigma must be positive");
      points.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double a = 2.0 * pi * rng.uniform();
        const double r = spec.radius + spec.sigma * truncated_normal(rng, spec.truncation);
        points(i, 0) = r * std::cos(a);
        points(i, 1) = r * std::sin(a);
      }
      break;
    }
    case DistributionKind::kTwoSpirals: {
      require_2d(spec, "two_spirals");
      if (!(spec.sigma > 0.0) || !(spec.scale > 0.0))
        throw InvalidArgument("two_spirals: scale and sigma must be positive");
      num_classes = 2;
      points.resize(n, 2);
      labels.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const int arm = static_cast<int>(rng.index(2));
        const double u = std::sqrt(rng.uniform());
        const double a = 3.0 * pi * u + arm * pi;
        const double r = spec.scale * u;
        labels[i] = arm;
        points(i, 0) = r * std::cos(a) + spec.sigma * truncated_normal(rng, spec.truncation);
        points(i, 1) = r * std::sin(a) + spec.sigma * truncated_normal(rng, spec.truncation);
      }
      break;
    }
    case DistributionKind::kCheckerboard: {
      require_2d(spec, "checkerboard");
      if (!(spec.scale > 0.0) || spec.cells < 2)
        throw InvalidArgument("checkerboard: scale must be positive and cells >= 2");
      std::vector<std::pair<int, int>> dark;
      for (int r = 0; r < spec.cells; ++r)
        for (int c = 0; c < spec.cells; ++c)
          if ((r + c) % 2 == 0) dark.emplace_back(r, c);
      const double width = 2.0 * spec.scale / spec.cells;
      points.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto [r, c] = dark[rng.index(dark.size())];
        points(i, 0) = -spec.scale + width * (c + rng.uniform());
        points(i, 1) = -spec.scale + width * (r + rng.uniform());
      }
      break;
    }
  }

  if (spec.rotation != 0.0) {
    if (points.cols() != 2) throw InvalidArgument("rotation is only defined in 2-D");
    Eigen::Matrix2d rot;
    rot << std::cos(spec.rotation), -std::sin(spec.rotation), std::sin(spec.rotation),
        std::cos(spec.rotation);
    points = (points * rot.transpose()).eval();
  }
  if (spec.shift.size() > 0) {
    if (spec.shift.size() != points.cols())
      throw InvalidArgument("shift dimension differs from sample dimension");
    points.rowwise() += spec.shift.transpose();
  }
  return PointDataset::create(std::move(points), std::move(labels), num_classes);
}

void save_memory_bank(const MemoryBank& bank, const std::filesystem::path& path) {
  if (bank.size() < 1) throw InvalidArgument("empty memory bank");
  if (!bank.samples.allFinite()) throw InvalidArgument("memory bank contains non-finite samples");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << kBankMagic << '\n';
  out << "d=" << bank.dim() << ",m=" << bank.size() << ",seed=" << bank.provenance.seed
      << ",model=" << sanitize(bank.provenance.model_id)
      << ",sampler=" << sanitize(bank.provenance.sampler)
      << ",steps=" << bank.provenance.sampler_steps << '\n';
  for (Eigen::Index i = 0; i < bank.size(); ++i) {
    for (Eigen::Index j = 0; j < bank.dim(); ++j) {
      if (j) out << ',';
      out << text::format_exact(bank.samples(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

MemoryBank load_memory_bank(const std::filesystem::path& path,
                            std::optional<Eigen::Index> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open memory bank '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || text::trim(line).empty())
    throw FormatError("empty memory bank");
  if (text::trim(line) != kBankMagic)
    throw FormatError("malformed header: expected '" + std::string(kBankMagic) + "'");
  if (!std::getline(in, line)) throw FormatError("malformed header: missing dimension line");
  const auto kv = text::parse_key_values(text::trim(line), "bank header");
  for (const char* key : {"d", "m", "seed"})
    if (!kv.count(key)) throw FormatError(std::string("malformed header: missing '") + key + "'");

  MemoryBank bank;
  const long long d = text::parse_integer(kv.at("d"), "bank header d");
  const long long m = text::parse_integer(kv.at("m"), "bank header m");
  if (d < 1) throw FormatError("malformed header: d must be >= 1");
  if (m < 1) throw FormatError("empty memory bank");
  if (expected_dim && *expected_dim != d)
    throw FormatError("dimension mismatch: bank declares d=" + std::to_string(d) +
                      " but " + std::to_string(*expected_dim) + " was expected");
  bank.provenance.seed = static_cast<Seed>(std::stoull(kv.at("seed")));
  if (kv.count("model")) bank.provenance.model_id = kv.at("model");
  if (kv.count("sampler")) bank.provenance.sampler = kv.at("sampler");
  if (kv.count("steps"))
    bank.provenance.sampler_steps = static_cast<int>(text::parse_integer(kv.at("steps"), "steps"));

  bank.samples.resize(m, d);
  long long row = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    if (row >= m)
      throw FormatError("row " + std::to_string(row) + ": more rows than declared m=" +
                        std::to_string(m));
    const auto fields = text::split(text::trim(line), ',');
    if (static_cast<long long>(fields.size()) != d)
      throw FormatError("row " + std::to_string(row) + ": expected " + std::to_string(d) +
                        " coordinates, found " + std::to_string(fields.size()));
    const std::string ctx = "row " + std::to_string(row);
    for (long long j = 0; j < d; ++j) bank.samples(row, j) = text::parse_exact(fields[j], ctx);
    ++row;
  }
  if (row != m)
    throw FormatError("row " + std::to_string(row) + ": file truncated, header declares m=" +
                      std::to_string(m));
  return bank;
}

}  // namespace difftune
