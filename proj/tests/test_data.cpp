// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "difftune/data.hpp"

using namespace difftune;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "difftune_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

std::string error_of(const std::filesystem::path& p) {
  try {
    load_memory_bank(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

DistributionSpec two_symmetric(double mu, double sigma) {
  DistributionSpec s;
  s.centers = {Point::Constant(2, mu), Point::Constant(2, -mu)};
  s.sigma = sigma;
  return s;
}

}  // namespace

TEST_CASE("degenerate mixture is rejected") {
  DistributionSpec s;
  s.centers = {Point::Zero(2)};
  s.sigma = 0.0;
  CHECK_THROWS_AS(make_distribution(s, 3, 1), InvalidArgument);
}

TEST_CASE("symmetric mixture mean is within the central-limit bound") {
  // Per-coordinate variance is mu^2 + sigma^2; 3 standard errors.
  const double mu = 1.5, sigma = 0.2;
  const Eigen::Index n = 20000;
  const auto d = make_distribution(two_symmetric(mu, sigma), n, 42);
  const double bound = 3.0 * std::sqrt(mu * mu + sigma * sigma) / std::sqrt(double(n));
  const Eigen::VectorXd mean = d.points().colwise().mean();
  CHECK(std::abs(mean[0]) <= bound);
  CHECK(std::abs(mean[1]) <= bound);
  CHECK(d.has_labels());
  CHECK(d.num_classes() == 2);
}

TEST_CASE("ring radii stay within four standard deviations") {
  DistributionSpec s;
  s.kind = DistributionKind::kRing;
  s.radius = 2.0;
  s.sigma = 0.1;
  const auto d = make_distribution(s, 5000, 7);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double r = d.points().row(i).norm();
    REQUIRE(r >= 2.0 - 4 * 0.1);
    REQUIRE(r <= 2.0 + 4 * 0.1);
  }
  CHECK_FALSE(d.has_labels());
}

TEST_CASE("generated data is bounded by the truncated noise") {
  DistributionSpec s = two_symmetric(1.0, 0.3);
  s.truncation = 2.0;
  const auto d = make_distribution(s, 4000, 3);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const Point c = d.condition(i).index() == 0 ? s.centers[0] : s.centers[1];
    REQUIRE((d.point(i) - c).cwiseAbs().maxCoeff() <= 2.0 * 0.3 + 1e-12);
  }
  CHECK(d.bound() == doctest::Approx(d.points().cwiseAbs().maxCoeff()));
}

TEST_CASE("generation is deterministic in the seed") {
  for (auto kind : {DistributionKind::kGaussianMixture, DistributionKind::kRing,
                    DistributionKind::kTwoSpirals, DistributionKind::kCheckerboard}) {
    DistributionSpec s;
    s.kind = kind;
    s.centers = circle_centers(4, 2.0);
    const auto a = make_distribution(s, 300, 11);
    const auto b = make_distribution(s, 300, 11);
    const auto c = make_distribution(s, 300, 12);
    CHECK(a.points() == b.points());
    CHECK(a.labels() == b.labels());
    CHECK(a.points() != c.points());
    CHECK(parse_distribution_kind(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_distribution_kind("moons"), InvalidArgument);
}

TEST_CASE("rotation then shift") {
  DistributionSpec base = two_symmetric(1.0, 0.1);
  DistributionSpec moved = base;
  moved.rotation = std::numbers::pi / 2;
  moved.shift = Eigen::Vector2d(3.0, -1.0);
  const auto a = make_distribution(base, 50, 5);
  const auto b = make_distribution(moved, 50, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const Eigen::Vector2d p = a.point(i);
    const Eigen::Vector2d expected(-p.y() + 3.0, p.x() - 1.0);
    REQUIRE((b.point(i) - expected).norm() < 1e-12);
  }
}

TEST_CASE("two spirals and checkerboard shapes") {
  DistributionSpec sp;
  sp.kind = DistributionKind::kTwoSpirals;
  const auto spirals = make_distribution(sp, 1000, 2);
  CHECK(spirals.num_classes() == 2);
  CHECK(spirals.dim() == 2);

  DistributionSpec cb;
  cb.kind = DistributionKind::kCheckerboard;
  cb.scale = 2.0;
  cb.cells = 4;
  const auto board = make_distribution(cb, 2000, 2);
  for (Eigen::Index i = 0; i < board.size(); ++i) {
    const Eigen::Vector2d p = board.point(i);
    REQUIRE(p.cwiseAbs().maxCoeff() <= 2.0);
    const int cx = static_cast<int>(std::floor((p.x() + 2.0) / 1.0));
    const int cy = static_cast<int>(std::floor((p.y() + 2.0) / 1.0));
    REQUIRE((cx + cy) % 2 == 0);
  }
}

TEST_CASE("dataset validation and class selection") {
  PointMatrix pts(3, 2);
  pts << 0, 0, 1, 1, 2, 2;
  const auto d = PointDataset::create(pts, {0, 1, 1}, 2);
  CHECK(d.select(Condition::label(1)).size() == 2);
  CHECK(d.select(Condition::unconditional()).size() == 3);
  CHECK(d.condition(0) == Condition::label(0));
  CHECK_THROWS_AS(PointDataset::create(pts, {0, 2, 1}, 2), InvalidArgument);
  CHECK_THROWS_AS(PointDataset::create(pts, {0, 1}, 2), InvalidArgument);
  PointMatrix nan = pts;
  nan(1, 1) = std::nan("");
  CHECK_THROWS_AS(PointDataset::create(nan), InvalidArgument);
  CHECK_THROWS_AS(PointDataset::create(PointMatrix(0, 2)), InvalidArgument);
}

TEST_CASE("memory bank round trip is exact") {
  MemoryBank bank;
  bank.samples = PointMatrix::Random(17, 3) * 1e3;
  bank.samples(0, 0) = 1.0 / 3.0;
  bank.samples(1, 2) = -5e-300;
  bank.provenance = {"source.ckpt", "ddim", 50, 987654321};
  const auto p = scratch("bank.csv");
  save_memory_bank(bank, p);
  const MemoryBank back = load_memory_bank(p, 3);
  CHECK(back.samples == bank.samples);
  CHECK(back.condition.is_unconditional());
  CHECK(back.provenance.model_id == "source.ckpt");
  CHECK(back.provenance.sampler == "ddim");
  CHECK(back.provenance.sampler_steps == 50);
  CHECK(back.provenance.seed == 987654321u);
  CHECK_THROWS_AS(load_memory_bank(p, 2), FormatError);
}

TEST_CASE("memory bank load errors") {
  const auto p = scratch("bad_bank.csv");
  write_file(p, "");
  CHECK(error_of(p) == "empty memory bank");

  write_file(p, "not-a-bank\n");
  CHECK(error_of(p).find("malformed header") != std::string::npos);

  write_file(p, "difftune-bank v1\nd=2,m=3,seed=1,model=a,sampler=ddim,steps=5\n1,2\n3,4\n");
  CHECK(error_of(p).find("row 2") != std::string::npos);

  write_file(p, "difftune-bank v1\nd=2,m=3,seed=1,model=a,sampler=ddim,steps=5\n1,2\n3\n5,6\n");
  CHECK(error_of(p).find("row 1") != std::string::npos);

  write_file(p, "difftune-bank v1\nd=2,m=2,seed=1,model=a,sampler=ddim,steps=5\n1,2\nnan,4\n");
  CHECK_THROWS_AS(load_memory_bank(p), FormatError);

  CHECK_THROWS_AS(load_memory_bank(scratch("missing.csv")), FormatError);
  MemoryBank empty;
  CHECK_THROWS_AS(save_memory_bank(empty, p), InvalidArgument);
}
