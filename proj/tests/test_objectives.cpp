// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "difftune/objectives.hpp"
#include "oracles.hpp"

using namespace difftune;

namespace {

const NoiseSchedule& default_schedule() {
  static const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
  return s;
}

NoiseSchedule four_steps() { return make_linear_schedule(4, 0.1, 0.4, TerminalCheck::kSkip); }

// Predicts the exact injected noise for data concentrated on one point.
class ExactNoise : public Denoiser {
 public:
  ExactNoise(Point x0, NoiseSchedule s) : x0_(std::move(x0)), s_(std::move(s)) {}
  Eigen::Index dim() const override { return x0_.size(); }
  ColumnBatch predict_eps(const ColumnBatch& xt, Timestep t, Condition) const override {
    const double a = s_.alpha_bar(t);
    return (xt.colwise() - std::sqrt(a) * x0_) / std::sqrt(1.0 - a);
  }

 private:
  Point x0_;
  NoiseSchedule s_;
};

class Zero : public Denoiser {
 public:
  explicit Zero(Eigen::Index d) : d_(d) {}
  Eigen::Index dim() const override { return d_; }
  ColumnBatch predict_eps(const ColumnBatch& xt, Timestep, Condition) const override {
    return ColumnBatch::Zero(xt.rows(), xt.cols());
  }

 private:
  Eigen::Index d_;
};

std::vector<Condition> unconditional(Eigen::Index n) {
  return std::vector<Condition>(static_cast<std::size_t>(n), Condition::unconditional());
}

PointDataset small_dataset(Eigen::Index n, int classes, Seed seed) {
  std::mt19937_64 gen(seed);
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % classes));
  return PointDataset::create(oracle::random_matrix(gen, n, 2), labels, classes);
}

}  // namespace

TEST_CASE("power coefficients") {
  const auto& s = default_schedule();
  CHECK(psi(CoefficientSchedule::power(1.0), 0.5, s) == 0.5);
  for (double tau : {0.3, 0.5, 0.7, 1.0, 1.5}) {
    CHECK(psi(CoefficientSchedule::power(tau), 0.0, s) == 0.0);
    CHECK(psi(CoefficientSchedule::power(tau), 1.0, s) == 1.0);
  }
  for (double t : {0.0, 0.2, 0.9, 1.0}) {
    CHECK(psi(CoefficientSchedule::power(0.0), t, s) == 1.0);
    CHECK(xi(CoefficientSchedule::power(0.0), t, s) == 0.0);
  }
  CHECK_THROWS_AS(psi(CoefficientSchedule::power(1.0), 1.5, s), InvalidArgument);
  CHECK_THROWS_AS(psi(CoefficientSchedule::power(-1.0), 0.5, s), InvalidArgument);
}

TEST_CASE("coefficient invariants for both families") {
  const auto& s = default_schedule();
  const std::array families = {CoefficientSchedule::power(0.0), CoefficientSchedule::power(0.3),
                               CoefficientSchedule::power(1.0), CoefficientSchedule::power(1.5),
                               CoefficientSchedule::snr_based()};
  for (const auto& c : families) {
    double prev = -1.0;
    for (int k = 0; k <= 1000; ++k) {
      const double t = k / 1000.0;
      const double p = psi(c, t, s);
      REQUIRE(p >= 0.0);
      REQUIRE(p <= 1.0);
      REQUIRE(p >= prev);
      REQUIRE(std::abs(p + xi(c, t, s) - 1.0) <= 1e-15);
      prev = p;
    }
  }
  // 1 / (1 + SNR) is the noise fraction 1 - alpha_bar.
  for (int t : {1, 10, 500, 1000})
    CHECK(psi(CoefficientSchedule::snr_based(), t / 1000.0, s) ==
          doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(1e-14));
}

TEST_CASE("categorical frequencies pass a chi-square test") {
  const auto s = four_steps();
  const TimestepCategorical cat(coefficient_mass(CoefficientSchedule::power(1.0), s, false), "psi");
  const std::array<double, 4> expected = {0.1, 0.2, 0.3, 0.4};  // {0.25, 0.5, 0.75, 1} / 2.5
  for (int t = 1; t <= 4; ++t) CHECK(cat.probability(t) == doctest::Approx(expected[t - 1]));
  Rng rng(77);
  const int draws = 100000;
  std::array<int, 4> counts{};
  for (int i = 0; i < draws; ++i) ++counts[cat.sample(rng) - 1];
  double chi2 = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double e = draws * expected[k];
    chi2 += (counts[k] - e) * (counts[k] - e) / e;
  }
  CHECK(chi2 < 16.266);  // chi-square, 3 degrees of freedom, upper 0.001 quantile
}

TEST_CASE("zero-mass categorical names the distribution") {
  try {
    TimestepCategorical(Eigen::VectorXd::Zero(4), "retention (xi)");
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("retention (xi)") != std::string::npos);
    CHECK(std::string(e.what()).find("configuration error") != std::string::npos);
  }
  const auto s = four_steps();
  CHECK_THROWS_AS(make_branch_plan(Variant::kRetentionOnly, CoefficientSchedule::power(0.0), s),
                  InvalidArgument);
}

TEST_CASE("branch plans per variant") {
  const auto s = four_steps();
  const auto tau0 = make_branch_plan(Variant::kDiffTuning, CoefficientSchedule::power(0.0), s);
  CHECK_FALSE(tau0.retention.has_value());
  for (int t = 1; t <= 4; ++t) CHECK(tau0.adaptation.probability(t) == 0.25);

  const auto ret = make_branch_plan(Variant::kRetentionOnly, CoefficientSchedule::power(1.0), s);
  REQUIRE(ret.retention.has_value());
  CHECK(ret.retention->probability(4) == 0.0);
  CHECK(ret.retention->probability(1) == doctest::Approx(0.75 / 1.5));
  for (int t = 1; t <= 4; ++t) CHECK(ret.adaptation.probability(t) == 0.25);

  const auto rec =
      make_branch_plan(Variant::kReconsolidationOnly, CoefficientSchedule::power(1.0), s);
  CHECK_FALSE(rec.retention.has_value());
  CHECK(rec.adaptation.probability(4) == doctest::Approx(0.4));

  for (auto v : {Variant::kStandardFt, Variant::kDiffTuning, Variant::kRetentionOnly,
                 Variant::kReconsolidationOnly})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("full"), InvalidArgument);
}

TEST_CASE("ddpm loss examples") {
  const auto& s = default_schedule();
  const Point x0 = Eigen::Vector2d(0.4, -0.9);
  const Eigen::Index n = 4000;
  const PointMatrix rows = x0.transpose().replicate(n, 1);

  const auto exact = ddpm_loss(ExactNoise(x0, s), rows, unconditional(n), s, 5);
  CHECK(exact.loss < 1e-20);

  // Chi-square with d = 2 degrees of freedom per example, 5 trials of n.
  double total = 0.0;
  const int trials = 5;
  for (int k = 0; k < trials; ++k)
    total += ddpm_loss(Zero(2), rows, unconditional(n), s, 100 + k).loss;
  const double mean = total / trials;
  CHECK(std::abs(mean - 2.0) <= 4.0 * std::sqrt(2.0 * 2.0 / (n * trials)));

  const auto again = ddpm_loss(Zero(2), rows, unconditional(n), s, 100);
  CHECK(again.loss == ddpm_loss(Zero(2), rows, unconditional(n), s, 100).loss);
}

TEST_CASE("per-example streams do not depend on batch size") {
  const auto& s = default_schedule();
  const auto d = small_dataset(5, 2, 3);
  std::vector<Condition> conds;
  for (Eigen::Index i = 0; i < 5; ++i) conds.push_back(d.condition(i));
  const auto cat = TimestepCategorical::uniform(1000);
  const EpsBatch full = make_eps_batch(d.points(), conds, cat, s, 9, 0.5);
  const EpsBatch head = make_eps_batch(d.points().topRows(3),
                                       std::vector<Condition>(conds.begin(), conds.begin() + 3),
                                       cat, s, 9, 0.5);
  CHECK(full.xt.leftCols(3) == head.xt);
  CHECK(full.target.leftCols(3) == head.target);
  CHECK(std::equal(head.t.begin(), head.t.end(), full.t.begin()));
  CHECK(std::equal(head.cond.begin(), head.cond.end(), full.cond.begin()));

  const EpsBatch none = make_eps_batch(d.points(), conds, cat, s, 9, 0.0);
  const EpsBatch all = make_eps_batch(d.points(), conds, cat, s, 9, 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(none.cond[i] == conds[i]);
    CHECK(all.cond[i].is_unconditional());
  }
}

TEST_CASE("step batches follow the branch rules") {
  const auto& s = default_schedule();
  const auto d = small_dataset(8, 2, 4);
  std::vector<Condition> conds;
  for (Eigen::Index i = 0; i < 8; ++i) conds.push_back(d.condition(i));
  const PointMatrix bank = small_dataset(8, 1, 5).points();
  const auto plan = make_branch_plan(Variant::kDiffTuning, CoefficientSchedule::power(1.0), s);
  const StepBatches b = make_step_batches(d.points(), conds, bank, plan, s, 11, 0.0);
  REQUIRE(b.retention.has_value());
  for (const Condition& c : b.retention->cond) CHECK(c.is_unconditional());
  for (std::size_t i = 0; i < 8; ++i) CHECK(b.adaptation.cond[i] == conds[i]);

  MlpArchitecture arch;
  arch.num_classes = 2;
  arch.hidden = {8};
  const MlpDenoiser m = MlpDenoiser::initialize(arch, 1);
  const StepLosses l = diff_tuning_step_losses(m, d.points(), conds, bank, plan, s, 11, 0.0);
  CHECK(l.retention->loss == doctest::Approx(eps_loss(m, *b.retention)));
  CHECK(l.adaptation.loss == doctest::Approx(eps_loss(m, b.adaptation)));
}

TEST_CASE("trainer configuration checks") {
  const auto& s = default_schedule();
  const auto d = small_dataset(16, 1, 6);
  MlpArchitecture arch;
  arch.num_classes = 1;
  arch.hidden = {8};
  MlpDenoiser m = MlpDenoiser::initialize(arch, 2);
  TrainConfig cfg;
  cfg.batch_size = 7;
  CHECK_THROWS_AS(Trainer(m, cfg, s, d, nullptr), InvalidArgument);
  cfg.batch_size = 8;
  cfg.variant = Variant::kDiffTuning;
  CHECK_THROWS_AS(Trainer(m, cfg, s, d, nullptr), InvalidArgument);
  cfg.variant = Variant::kStandardFt;
  Trainer trainer(m, cfg, s, d, nullptr);
  const StepRecord r = trainer.step(0);
  CHECK_FALSE(r.retention_loss.has_value());
  CHECK(std::isfinite(r.adaptation_loss));
  CHECK(trainer.optimizer_state().step == 1);
}

TEST_CASE("retention-only runs with both branches") {
  const auto& s = default_schedule();
  const auto d = small_dataset(16, 1, 6);
  MemoryBank bank;
  bank.samples = small_dataset(32, 1, 7).points();
  MlpArchitecture arch;
  arch.num_classes = 1;
  arch.hidden = {8};
  MlpDenoiser m = MlpDenoiser::initialize(arch, 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.variant = Variant::kRetentionOnly;
  Trainer trainer(m, cfg, s, d, &bank);
  for (long it = 0; it < 5; ++it) {
    const StepRecord r = trainer.step(it);
    CHECK(r.retention_loss.has_value());
  }
}

TEST_CASE("ewc distance") {
  std::mt19937_64 gen(4);
  const ParamVector theta0 = oracle::random_matrix(gen, 50, 1);
  const PretrainedSnapshot snap(theta0);
  CHECK(ewc_l2(theta0, snap).total == 0.0);
  ParamVector bumped = theta0;
  bumped[17] += 1.0;
  CHECK(ewc_l2(bumped, snap).total == doctest::Approx(1.0).epsilon(1e-15));
  const EwcValue v = ewc_l2(bumped, snap);
  CHECK(v.count == 50);
  CHECK(v.mean == v.total / 50.0);
  CHECK_THROWS_AS(ewc_l2(ParamVector::Zero(3), snap), InvalidArgument);
}
