#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gmflab/matrix.hpp"
#include "gmflab/report.hpp"

namespace gmflab::entropy {

/// Multi-dimensional histogram over a fixed box. Values outside a dimension's
/// range are clamped into the edge bins.
class HistogramEstimator {
 public:
  HistogramEstimator(std::vector<std::size_t> bins, std::vector<std::pair<double, double>> ranges);

  void add(std::span<const double> point);
  std::size_t bin_of(std::size_t dim, double value) const;

  std::size_t dimensions() const noexcept { return bins_.size(); }
  std::uint64_t total() const noexcept { return total_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
  /// Normalized counts; throws ContractError when empty.
  std::vector<double> probabilities() const;
  /// Plug-in entropy in nats.
  double entropy() const;

 private:
  std::vector<std::size_t> bins_;
  std::vector<std::pair<double, double>> ranges_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// -sum p ln p over occupied cells of a count vector, in nats. Terms are summed
/// in sorted order so the result does not depend on cell ordering.
double plugin_entropy(std::span<const std::uint64_t> counts);

/// Plug-in entropy of 1D samples on `bins` equal-width bins spanning
/// [min, max] of the data. Throws ContractError for empty input or bins < 2.
double histogram_entropy(std::span<const double> samples, std::size_t bins);

/// H(X) + H(Y) - H(X, Y) with marginals taken from the joint table, clamped
/// at 0. Each variable is binned over its own sample range.
double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins);

/// Rank by Gaussian elimination with complete pivoting; pivots at or below
/// rel_tol * ||A||_F count as zero.
std::size_t numerical_rank(const Matrix& a, double rel_tol = 1e-10);

struct RankTrialConfig {
  std::size_t d = 8;
  double n = 2.0;  // rows = max(1, round(n * d))
  std::size_t trials = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t rows() const;
};

struct RankTrialResult {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double full_rank_fraction = 0.0;  // rank == min(rows, cols)
  double rank_d_fraction = 0.0;     // rank == cols (= d)
  std::size_t max_rank = 0;
  double mean_rank = 0.0;
};

/// Draws `trials` matrices with i.i.d. standard normal entries of shape
/// (n*d) x d and tallies their numerical ranks.
RankTrialResult rank_trial(const RankTrialConfig& config);

struct MappingExperimentConfig {
  std::size_t l = 8;
  std::vector<double> magnifications{0.5, 1.0, 2.0, 4.0};
  std::size_t classes = 8;
  std::size_t samples = 3000;
  double train_fraction = 0.7;
  std::size_t steps = 3000;
  double lr = 0.2;
  double momentum = 0.9;
  double init_noise = 0.01;
  double label_noise = 0.3;  // std of Gaussian noise added to the label scores
  std::uint64_t task_seed = 7;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
  std::size_t mapped_dim(double magnification) const;
};

struct ProbeOutcome {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
  Matrix test_logits;
};

/// Linear probe on the frozen features. Same weight initialization stream as
/// the up-down probe for the same seed.
ProbeOutcome direct_probe(const MappingExperimentConfig& config, std::uint64_t seed);

/// Linear probe on U1 * U2 * f with U2: l -> n*l and U1: n*l -> l trained
/// jointly with the probe. U1 and U2 start at partial identities plus
/// init_noise * N(0, 1).
ProbeOutcome updown_probe(const MappingExperimentConfig& config, double magnification, std::uint64_t seed);

/// Rows: probe, magnification, seed, train/test accuracy, final loss,
/// diverged. Summary: mean/min/max test accuracy per probe and magnification.
/// Metrics: "direct.mean" and "updown.<n>.mean" with <n> printed by {:g}.
ExperimentReport up_down_experiment(const MappingExperimentConfig& config);

struct WidthSweepConfig {
  std::size_t input_dim = 16;
  std::size_t intrinsic_dim = 2;
  std::size_t classes = 3;
  double label_noise = 0.0;
  std::vector<std::size_t> widths{1, 2, 4, 8, 16, 32, 64};
  std::size_t train_samples = 600;
  std::size_t test_samples = 2000;
  std::size_t steps = 1500;
  double lr = 0.2;
  double momentum = 0.9;
  std::uint64_t task_seed = 11;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

/// One-hidden-layer tanh classifiers over a grid of widths on a task whose
/// labels depend on an intrinsic_dim-dimensional latent embedded linearly in
/// input_dim coordinates. A label_noise fraction of training labels is
/// resampled uniformly. Rows: width, seed, train/test accuracy, ratio
/// (test / train). Summary: means per width. Metrics: "best_width",
/// "best_test_accuracy".
ExperimentReport width_sweep(const WidthSweepConfig& config);

}  // namespace gmflab::entropy
