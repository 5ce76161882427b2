#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmflab/checkpoint.hpp"
#include "gmflab/gmf.hpp"
#include "gmflab/matrix.hpp"
#include "gmflab/optim.hpp"
#include "gmflab/report.hpp"

namespace gmflab::synth {

/// Generative description of a multimodal classification task. Modality j
/// observes x_j = M_j [s; u_j] + noise * eps with a shared latent s (k_s) and a
/// private latent u_j (k_j). Labels are argmax over classes of R [s; u_1; ...].
struct SyntheticSpec {
  std::size_t shared_dim = 8;
  std::vector<std::size_t> specific_dims{8, 8};
  std::vector<std::size_t> observed_dims{32, 32};
  double noise = 0.1;
  std::size_t classes = 4;
  std::size_t samples = 4000;
  /// Binary tasks only: target fraction of class 1 (0 keeps the argmax rule).
  double positive_fraction = 0.0;

  /// Throws ConfigError naming the field; also when `classes` exceeds the
  /// number of labels a linear argmax over the latent can produce.
  void validate() const;
  std::size_t modalities() const noexcept { return observed_dims.size(); }
  std::size_t latent_dim() const;
};

struct Dataset {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  std::vector<Matrix> features;  // per modality, samples x m_j
  std::vector<int> labels;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
  Matrix shared;  // samples x k_s, the ground-truth shared latent

  std::vector<Matrix> train_features() const;
  std::vector<Matrix> test_features() const;
  std::vector<int> train_labels() const;
  std::vector<int> test_labels() const;
};

/// Deterministic in (spec, seed). Split: the first 70% (floor) of each class in
/// sample order go to training, the rest to test.
Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed);

/// Dataset round trip through the checkpoint container (spec is not stored).
std::vector<NamedMatrix> dataset_to_named(const Dataset& data);
Dataset dataset_from_named(const SyntheticSpec& spec, std::uint64_t seed, std::span<const NamedMatrix> entries);

enum class FusionMethod { concat, gmf, gmf_no_barrier };
enum class ExtractorMode { frozen_identity, trainable };

FusionMethod parse_method(const std::string& text);
ExtractorMode parse_extractor(const std::string& text);
std::string to_string(FusionMethod m);
std::string to_string(ExtractorMode m);

struct TrainConfig {
  FusionMethod method = FusionMethod::gmf;
  ExtractorMode extractor = ExtractorMode::frozen_identity;
  SgdConfig sgd{};
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lambda_dis = 1.0;
  /// The reconstruction loss joins after this many epochs (0: always on).
  std::size_t dis_warmup_epochs = 0;
  /// Skip the reconstruction backward pass entirely; L_dis is still reported.
  bool detach_reconstruction = false;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Extractors (identity or tanh(E x + b) per modality), optional GMF front-end
/// and a linear classifier on the fused representation.
struct FusionModel {
  FusionMethod method = FusionMethod::concat;
  ExtractorMode extractor = ExtractorMode::frozen_identity;
  std::vector<Linear> extractors;
  std::optional<gmf::GmfConfig> gmf_config;
  gmf::GmfParams gmf_params;
  Linear head;

  std::vector<Matrix> extract(std::span<const Matrix> inputs) const;
  Matrix logits(std::span<const Matrix> inputs) const;
  /// GMF models only.
  gmf::FusionValues fusion_values(std::span<const Matrix> inputs) const;

  std::vector<Parameter*> parameters();
  std::uint64_t extractor_parameter_count() const;
  std::uint64_t fusion_parameter_count() const;
  std::uint64_t head_parameter_count() const;

  std::vector<NamedMatrix> to_named() const;
  /// Rebuilds a model whose shape matches `data` and the given method.
  static FusionModel from_named(const SyntheticSpec& spec, FusionMethod method, ExtractorMode extractor,
                                const std::optional<gmf::GmfConfig>& gmf_config,
                                std::span<const NamedMatrix> entries);
};

struct TrainOutcome {
  FusionModel model;
  ExperimentReport report;
  bool failed = false;
};

/// Minibatch SGD on L_task + lambda * L_dis. The task loss is propagated in
/// the task scope and the reconstruction loss in the fusion scope, so with the
/// barrier enabled L_dis never reaches the extractors. Report rows are per
/// epoch: epoch, task_loss, l_dis, train_accuracy, test_accuracy. A NaN loss
/// stops training and marks the run failed. gmf_config is required exactly
/// when the method uses GMF; its dims must equal the observed dims and its
/// lambda/barrier fields are overridden by the train config and method.
TrainOutcome train_fusion(const Dataset& data, const TrainConfig& config,
                          const std::optional<gmf::GmfConfig>& gmf_config = std::nullopt);

struct MissingModalityMetrics {
  std::optional<std::size_t> dropped;
  double accuracy = 0.0;
  std::optional<double> auc;
  /// GMF only: Z_spec of every surviving modality was bitwise unchanged.
  bool locality_holds = true;
};

/// Test-split metrics with modality `dropped` zeroed at the input. Throws
/// ContractError when the index is out of range or locality is violated.
MissingModalityMetrics missing_modality_eval(const FusionModel& model, const Dataset& data,
                                             std::optional<std::size_t> dropped);

/// Mann-Whitney AUC with ties counted half. Labels must be 0/1 with both
/// present, otherwise ContractError.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Cross-modal retrieval analog: each row of `queries` ranks all rows of
/// `keys` by cosine similarity; returns the fraction whose own row index is in
/// the top k. Ties are broken by lower index.
double recall_at_k(const Matrix& queries, const Matrix& keys, std::size_t k);

/// Coefficient of determination of the least-squares fit (with intercept)
/// of `target` from `predictors`, pooled over target columns.
double linear_r2(const Matrix& predictors, const Matrix& target);

}  // namespace gmflab::synth
