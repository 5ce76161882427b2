#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "gmflab/entropy.hpp"
#include "gmflab/errors.hpp"
#include "gmflab/rng.hpp"

using namespace gmflab;
using namespace gmflab::entropy;

namespace {

double closed_form_entropy(std::initializer_list<double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

// Sum over cells of p(x,y) ln(p(x,y) / (p(x) p(y))).
double closed_form_mi(const std::vector<std::vector<double>>& t) {
  std::vector<double> px(t.size(), 0.0), py(t[0].size(), 0.0);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t[i].size(); ++j) {
      px[i] += t[i][j];
      py[j] += t[i][j];
    }
  double mi = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t[i].size(); ++j)
      if (t[i][j] > 0) mi += t[i][j] * std::log(t[i][j] / (px[i] * py[j]));
  return mi;
}

std::size_t eigen_rank(const Matrix& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(i, j);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  lu.setThreshold(1e-9);
  return static_cast<std::size_t>(lu.rank());
}

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

}  // namespace

TEST(Entropy, IdenticalSamplesHaveZeroEntropy) {
  const std::vector<double> s(1000, 3.25);
  EXPECT_EQ(histogram_entropy(s, 8), 0.0);
}

TEST(Entropy, UniformOverEightBins) {
  Rng rng(5);
  std::vector<double> s(100000);
  for (double& v : s) v = static_cast<double>(rng.below(8));
  EXPECT_NEAR(histogram_entropy(s, 8), std::log(8.0), 0.01);
}

TEST(Entropy, BernoulliQuarter) {
  Rng rng(6);
  std::vector<double> s(100000);
  for (double& v : s) v = rng.uniform() < 0.25 ? 1.0 : 0.0;
  const double expected = closed_form_entropy({0.25, 0.75});
  EXPECT_NEAR(expected, 0.5623, 1e-4);
  EXPECT_NEAR(histogram_entropy(s, 2), expected, 0.01);
}

TEST(Entropy, BoundedByLogBins) {
  Rng rng(7);
  for (std::size_t bins : {2u, 5u, 16u, 64u}) {
    std::vector<double> s(500);
    for (double& v : s) v = rng.normal();
    const double h = histogram_entropy(s, bins);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(bins)) + 1e-12);
  }
}

TEST(Entropy, RejectsBadInput) {
  EXPECT_THROW(histogram_entropy(std::vector<double>{}, 4), ContractError);
  EXPECT_THROW(histogram_entropy(std::vector<double>{1.0, 2.0}, 1), ContractError);
}

TEST(Histogram, ProbabilitiesNormalizeAndEdgesClamp) {
  HistogramEstimator h({4, 2}, {{0.0, 1.0}, {-1.0, 1.0}});
  const double pts[][2] = {{-5.0, 0.5}, {0.3, -0.2}, {1.0, 1.0}, {9.0, -9.0}, {0.6, 0.0}};
  for (const auto& p : pts) h.add(p);
  EXPECT_EQ(h.total(), 5u);
  EXPECT_EQ(h.bin_of(0, -5.0), 0u);
  EXPECT_EQ(h.bin_of(0, 1.0), 3u);
  EXPECT_EQ(h.bin_of(0, 9.0), 3u);
  EXPECT_EQ(h.bin_of(0, 0.3), 1u);
  double total = 0.0;
  for (double p : h.probabilities()) total += p;
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_THROW(h.add(std::vector<double>{1.0}), ShapeError);
  HistogramEstimator empty({3}, {{0.0, 1.0}});
  EXPECT_THROW(empty.entropy(), ContractError);
}

TEST(MutualInformation, IndependentCoins) {
  Rng rng(8);
  std::vector<double> x(100000), y(100000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<double>(rng.below(2));
    y[i] = static_cast<double>(rng.below(2));
  }
  EXPECT_LT(mutual_information(x, y, 2), 0.01);
}

TEST(MutualInformation, IdentityGivesEntropy) {
  Rng rng(9);
  std::vector<double> x(5000);
  for (double& v : x) v = rng.normal();
  EXPECT_NEAR(mutual_information(x, x, 10), histogram_entropy(x, 10), 1e-12);
}

TEST(MutualInformation, CorrelatedTable) {
  const std::vector<std::vector<double>> table{{0.4, 0.1}, {0.1, 0.4}};
  const double expected = closed_form_mi(table);
  EXPECT_NEAR(expected, 0.1927, 1e-4);
  Rng rng(10);
  std::vector<double> x(100000), y(100000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = rng.uniform();
    // Cells in order (0,0), (0,1), (1,0), (1,1).
    const int cell = u < 0.4 ? 0 : u < 0.5 ? 1 : u < 0.6 ? 2 : 3;
    x[i] = cell / 2;
    y[i] = cell % 2;
  }
  EXPECT_NEAR(mutual_information(x, y, 2), expected, 0.02);
}

TEST(MutualInformation, ExactlySymmetricAndNonnegative) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(700), y(700);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      y[i] = 0.3 * x[i] + rng.uniform(-1.0, 1.0);
    }
    const std::size_t bins = 2 + static_cast<std::size_t>(rng.below(12));
    const double a = mutual_information(x, y, bins);
    EXPECT_EQ(a, mutual_information(y, x, bins));
    EXPECT_GE(a, 0.0);
  }
}

TEST(MutualInformation, RejectsUnpaired) {
  EXPECT_THROW(mutual_information(std::vector<double>{1, 2}, std::vector<double>{1}, 2), ContractError);
}

TEST(Rank, MatchesPivotedLuOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t r = 1 + rng.below(9), c = 1 + rng.below(9);
    const std::size_t k = 1 + rng.below(std::min(r, c));
    const Matrix a = matmul(gaussian(r, k, rng), gaussian(k, c, rng));
    const std::size_t rank = numerical_rank(a);
    EXPECT_EQ(rank, k);
    EXPECT_EQ(rank, eigen_rank(a));
    EXPECT_LE(rank, std::min(r, c));
  }
  EXPECT_EQ(numerical_rank(Matrix(3, 4)), 0u);
  EXPECT_EQ(numerical_rank(Matrix::identity(5)), 5u);
}

TEST(Rank, TrialFractions) {
  const RankTrialResult up = rank_trial({8, 2.0, 1000, 1});
  EXPECT_EQ(up.rows, 16u);
  EXPECT_EQ(up.full_rank_fraction, 1.0);
  EXPECT_EQ(up.rank_d_fraction, 1.0);

  const RankTrialResult down = rank_trial({8, 0.5, 1000, 1});
  EXPECT_EQ(down.rows, 4u);
  EXPECT_EQ(down.rank_d_fraction, 0.0);
  EXPECT_EQ(down.full_rank_fraction, 1.0);
  EXPECT_LE(down.max_rank, 4u);

  EXPECT_EQ(rank_trial({1, 1.0, 100, 3}).full_rank_fraction, 1.0);
}

TEST(Rank, RejectsTooFewTrials) {
  try {
    rank_trial({8, 2.0, 50, 1});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "trials");
  }
  EXPECT_THROW(rank_trial({8, 0.0, 100, 1}), ConfigError);
}

TEST(UpDown, IdentityInitMatchesDirectProbe) {
  MappingExperimentConfig cfg;
  cfg.steps = 0;
  cfg.init_noise = 0.0;
  cfg.samples = 400;
  const ProbeOutcome direct = direct_probe(cfg, 4);
  for (double n : {1.0, 2.0, 4.0}) {
    const ProbeOutcome ud = updown_probe(cfg, n, 4);
    EXPECT_EQ(ud.test_logits, direct.test_logits) << "n " << n;
    EXPECT_EQ(ud.test_accuracy, direct.test_accuracy);
  }
}

TEST(UpDown, ReportLayoutAndDeterminism) {
  MappingExperimentConfig cfg;
  cfg.steps = 30;
  cfg.samples = 300;
  cfg.magnifications = {0.5, 2.0};
  const ExperimentReport a = up_down_experiment(cfg);
  const ExperimentReport b = up_down_experiment(cfg);
  EXPECT_EQ(to_csv(a.rows), to_csv(b.rows));
  EXPECT_EQ(a.rows.rows.size(), 9u);
  EXPECT_EQ(a.summary.rows.size(), 3u);
  EXPECT_TRUE(a.metrics.contains("direct.mean"));
  EXPECT_TRUE(a.metrics.contains("updown.0.5.mean"));
  EXPECT_TRUE(a.metrics.contains("updown.2.mean"));
  EXPECT_EQ(a.config.at("steps"), "30");
}

TEST(UpDown, RejectsInvalidConfig) {
  MappingExperimentConfig cfg;
  cfg.seeds = {1, 2};
  EXPECT_THROW(up_down_experiment(cfg), ConfigError);
  cfg = {};
  cfg.magnifications = {0.5, -1.0};
  EXPECT_THROW(up_down_experiment(cfg), ConfigError);
}

TEST(WidthSweep, PlateauAndUnderParameterizedGap) {
  const ExperimentReport r = width_sweep({});
  const Table& s = r.summary;
  ASSERT_EQ(s.rows.size(), 7u);
  double best = 0.0;
  for (std::size_t i = 0; i < s.rows.size(); ++i) best = std::max(best, s.number(i, "mean_test_accuracy"));
  // Widths at or above the intrinsic dimension: plateau within half a point.
  double lo = 1.0, hi = 0.0;
  for (std::size_t i = 2; i < s.rows.size(); ++i) {
    lo = std::min(lo, s.number(i, "mean_test_accuracy"));
    hi = std::max(hi, s.number(i, "mean_test_accuracy"));
  }
  EXPECT_LT(hi - lo, 0.005);
  EXPECT_GT(best - s.number(0, "mean_test_accuracy"), 0.05);
  // Both ends of the grid fall strictly below the grid maximum.
  EXPECT_LT(s.number(0, "mean_test_accuracy"), best);
  EXPECT_LT(s.number(s.rows.size() - 1, "mean_test_accuracy"), best);
  EXPECT_EQ(r.metric("best_test_accuracy"), best);
}

TEST(WidthSweep, RatioFallsPastPlateauWithNoisyLabels) {
  WidthSweepConfig cfg;
  cfg.label_noise = 0.3;
  cfg.train_samples = 200;
  cfg.steps = 3000;
  const ExperimentReport r = width_sweep(cfg);
  const Table& s = r.summary;
  for (std::size_t i = 3; i < s.rows.size(); ++i)
    EXPECT_LT(s.number(i, "mean_ratio"), s.number(i - 1, "mean_ratio")) << "width " << s.number(i, "width");
}
