#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "gmflab/autodiff.hpp"
#include "gmflab/entropy.hpp"
#include "gmflab/errors.hpp"
#include "gmflab/rng.hpp"
#include "gmflab/synth.hpp"

using namespace gmflab;
using namespace gmflab::synth;

namespace {

gmf::GmfConfig fusion_for(const SyntheticSpec& spec) {
  gmf::GmfConfig g;
  g.dims = spec.observed_dims;
  return g;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.samples = 800;
  return s;
}

std::vector<double> column(const Table& t, const std::string& name) {
  std::vector<double> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) out.push_back(t.number(i, name));
  return out;
}

std::vector<double> col_of(const Matrix& m, std::size_t c) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, c);
  return out;
}

}  // namespace

TEST(Generate, DeterministicInSpecAndSeed) {
  const SyntheticSpec spec = small_spec();
  const Dataset a = generate_dataset(spec, 3), b = generate_dataset(spec, 3), c = generate_dataset(spec, 4);
  ASSERT_EQ(a.features.size(), 2u);
  EXPECT_EQ(a.features[0], b.features[0]);
  EXPECT_EQ(a.features[1], b.features[1]);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.train_index, b.train_index);
  EXPECT_FALSE(a.features[0] == c.features[0]);
  EXPECT_EQ(a.features[0].rows(), 800u);
  EXPECT_EQ(a.features[0].cols(), 32u);
}

TEST(Generate, SharedOnlyModalitiesPredictEachOther) {
  SyntheticSpec spec;
  spec.specific_dims = {0, 0};
  spec.noise = 0.0;
  spec.samples = 1000;
  const Dataset d = generate_dataset(spec, 1);
  EXPECT_GT(linear_r2(d.features[0], d.features[1]), 1.0 - 1e-9);
  EXPECT_GT(linear_r2(d.features[1], d.features[0]), 1.0 - 1e-9);
  EXPECT_GT(linear_r2(d.features[0], d.shared), 1.0 - 1e-9);
}

TEST(Generate, IndependentModalitiesShareNoInformation) {
  SyntheticSpec spec;
  spec.samples = 20000;
  spec.shared_dim = 0;
  const Dataset ind = generate_dataset(spec, 2);
  spec.shared_dim = 8;
  spec.specific_dims = {1, 1};
  const Dataset dep = generate_dataset(spec, 2);
  double worst = 0.0, best_dep = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      worst = std::max(worst, entropy::mutual_information(col_of(ind.features[0], i), col_of(ind.features[1], j), 8));
      best_dep =
          std::max(best_dep, entropy::mutual_information(col_of(dep.features[0], i), col_of(dep.features[1], j), 8));
    }
  EXPECT_LT(worst, 0.01);
  EXPECT_GT(best_dep, 0.05);
}

TEST(Generate, RejectsUnreachableClassCount) {
  SyntheticSpec spec;
  spec.shared_dim = 1;
  spec.specific_dims = {0, 0};
  spec.classes = 3;
  try {
    generate_dataset(spec, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "classes");
  }
  spec.classes = 2;
  EXPECT_NO_THROW(generate_dataset(spec, 1));
  spec.specific_dims = {1};
  EXPECT_THROW(generate_dataset(spec, 1), ConfigError);
}

TEST(Generate, SplitIsDisjointAndPerClass) {
  const Dataset d = generate_dataset(small_spec(), 5);
  std::set<std::size_t> train(d.train_index.begin(), d.train_index.end());
  std::set<std::size_t> test(d.test_index.begin(), d.test_index.end());
  EXPECT_EQ(train.size(), d.train_index.size());
  EXPECT_EQ(train.size() + test.size(), d.labels.size());
  for (std::size_t i : test) EXPECT_FALSE(train.contains(i));
  for (int c = 0; c < 4; ++c) {
    std::size_t total = 0, in_train = 0;
    std::size_t last_train = 0, first_test = d.labels.size();
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
      if (d.labels[i] != c) continue;
      ++total;
      if (train.contains(i)) {
        ++in_train;
        last_train = i;
      } else {
        first_test = std::min(first_test, i);
      }
    }
    ASSERT_GT(total, 0u);
    EXPECT_EQ(in_train, static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(total))));
    EXPECT_LT(last_train, first_test);
  }
}

TEST(Generate, BinaryPositiveFraction) {
  SyntheticSpec spec = small_spec();
  spec.classes = 2;
  spec.positive_fraction = 0.2;
  const Dataset d = generate_dataset(spec, 1);
  EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), 1), 160);
}

TEST(Generate, NamedRoundTrip) {
  const Dataset d = generate_dataset(small_spec(), 8);
  const auto entries = dataset_to_named(d);
  const Dataset back = dataset_from_named(d.spec, 8, entries);
  EXPECT_EQ(back.features[1], d.features[1]);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.test_index, d.test_index);
  EXPECT_EQ(back.shared, d.shared);
}

TEST(Auc, EnumeratedPairs) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auc(s, y), 0.75);
}

TEST(Auc, PerfectSeparationAndTies) {
  EXPECT_EQ(auc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{4, 3, 2, 1}, std::vector<int>{0, 0, 1, 1}), 0.0);
  EXPECT_EQ(auc(std::vector<double>{1, 1, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.5);
}

TEST(Auc, NullScoresNearHalf) {
  Rng rng(21);
  std::vector<double> s(20000);
  std::vector<int> y(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    y[i] = static_cast<int>(rng.below(2));
  }
  EXPECT_NEAR(auc(s, y), 0.5, 0.02);
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(22);
  std::vector<double> s(500), t(500);
  std::vector<int> y(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = static_cast<int>(rng.below(2));
    s[i] = rng.normal() + 0.7 * y[i];
    t[i] = std::exp(3.0 * s[i]) - 5.0;
  }
  EXPECT_EQ(auc(s, y), auc(t, y));
}

TEST(Auc, RejectsSingleClass) {
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ContractError);
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ContractError);
}

TEST(Recall, IdenticalAndShuffledKeys) {
  Rng rng(23);
  Matrix q(50, 6);
  for (double& v : q.data()) v = rng.normal();
  EXPECT_EQ(recall_at_k(q, q, 1), 1.0);
  Matrix other(50, 6);
  for (double& v : other.data()) v = rng.normal();
  EXPECT_LT(recall_at_k(q, other, 1), 0.2);
  EXPECT_EQ(recall_at_k(q, other, 50), 1.0);
  EXPECT_THROW(recall_at_k(q, Matrix(49, 6), 1), ShapeError);
}

TEST(Train, RequiresFusionConfigExactlyForGmf) {
  const Dataset d = generate_dataset(small_spec(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_fusion(d, cfg), ContractError);
  cfg.method = FusionMethod::concat;
  EXPECT_THROW(train_fusion(d, cfg, fusion_for(d.spec)), ContractError);
  cfg.sgd.lr = 0.0;
  try {
    train_fusion(d, cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "lr");
  }
}

TEST(Train, ParsersNameTheKey) {
  EXPECT_EQ(parse_method("gmf-no-barrier"), FusionMethod::gmf_no_barrier);
  EXPECT_EQ(parse_extractor("trainable"), ExtractorMode::trainable);
  try {
    parse_method("sum");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "method");
  }
}

TEST(Train, ReportIsDeterministic) {
  const Dataset d = generate_dataset(small_spec(), 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  const TrainOutcome a = train_fusion(d, cfg, fusion_for(d.spec));
  const TrainOutcome b = train_fusion(d, cfg, fusion_for(d.spec));
  EXPECT_EQ(to_csv(a.report.rows), to_csv(b.report.rows));
  EXPECT_EQ(a.report.rows.rows.size(), 3u);
  EXPECT_EQ(a.report.config.at("method"), "gmf");
  EXPECT_EQ(a.report.metric("params.fusion"), static_cast<double>(a.model.fusion_parameter_count()));
}

TEST(Train, ZeroLambdaMatchesDetachedReconstruction) {
  const Dataset d = generate_dataset(small_spec(), 3);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lambda_dis = 0.0;
  const TrainOutcome a = train_fusion(d, cfg, fusion_for(d.spec));
  cfg.lambda_dis = 1.0;
  cfg.detach_reconstruction = true;
  const TrainOutcome b = train_fusion(d, cfg, fusion_for(d.spec));
  EXPECT_EQ(column(a.report.rows, "task_loss"), column(b.report.rows, "task_loss"));
  EXPECT_EQ(column(a.report.rows, "test_accuracy"), column(b.report.rows, "test_accuracy"));
  cfg.detach_reconstruction = false;
  const TrainOutcome c = train_fusion(d, cfg, fusion_for(d.spec));
  EXPECT_NE(column(a.report.rows, "task_loss"), column(c.report.rows, "task_loss"));
}

TEST(Train, BarrierKeepsReconstructionOutOfExtractors) {
  const Dataset d = generate_dataset(small_spec(), 4);
  const std::vector<Matrix> x = d.train_features();
  for (FusionMethod method : {FusionMethod::gmf, FusionMethod::gmf_no_barrier}) {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.method = method;
    cfg.extractor = ExtractorMode::trainable;
    TrainOutcome out = train_fusion(d, cfg, fusion_for(d.spec));
    FusionModel& m = out.model;
    for (Parameter* p : m.parameters()) p->zero_grad();
    Tape tape;
    std::vector<Var> feats;
    for (std::size_t j = 0; j < x.size(); ++j) feats.push_back(tanh(m.extractors[j].apply(tape, tape.constant(x[j]))));
    const gmf::FusionOutput fo = gmf::gmf_forward(tape, feats, *m.gmf_config, m.gmf_params);
    tape.backward(gmf::reconstruction_loss(fo, feats), LossScope::fusion);
    double extractor_grad = 0.0;
    for (const Linear& e : m.extractors)
      for (double g : e.weight.grad.data()) extractor_grad += std::abs(g);
    if (method == FusionMethod::gmf)
      EXPECT_EQ(extractor_grad, 0.0);
    else
      EXPECT_GT(extractor_grad, 0.0);
  }
}

TEST(Train, DivergenceMarksRunFailed) {
  const Dataset d = generate_dataset(small_spec(), 1);
  TrainConfig cfg;
  cfg.method = FusionMethod::concat;
  cfg.sgd.lr = 1e200;
  cfg.epochs = 3;
  const TrainOutcome out = train_fusion(d, cfg);
  EXPECT_TRUE(out.failed);
  EXPECT_EQ(out.report.metric("failed"), 1.0);
  EXPECT_TRUE(out.report.meta.contains("failure"));
}

TEST(Train, ConcatSeparableSpecExceeds95) {
  SyntheticSpec spec;
  spec.noise = 0.0;
  const Dataset d = generate_dataset(spec, 1);
  TrainConfig cfg;
  cfg.method = FusionMethod::concat;
  const TrainOutcome out = train_fusion(d, cfg);
  EXPECT_FALSE(out.failed);
  EXPECT_GT(out.report.metric("final_test_accuracy"), 0.95);
}

TEST(Train, GmfFrozenFeaturesReconstructionFalls) {
  const Dataset d = generate_dataset(SyntheticSpec{}, 1);
  const TrainOutcome out = train_fusion(d, TrainConfig{}, fusion_for(d.spec));
  EXPECT_LT(out.report.metric("final_l_dis"), 0.05 * out.report.metric("initial_l_dis"));
}

TEST(Model, NamedRoundTripPreservesLogits) {
  const Dataset d = generate_dataset(small_spec(), 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.extractor = ExtractorMode::trainable;
  const TrainOutcome out = train_fusion(d, cfg, fusion_for(d.spec));
  const FusionModel back =
      FusionModel::from_named(d.spec, cfg.method, cfg.extractor, out.model.gmf_config, out.model.to_named());
  EXPECT_EQ(back.logits(d.test_features()), out.model.logits(d.test_features()));
  auto entries = out.model.to_named();
  entries.back().value = Matrix(1, 3);
  EXPECT_THROW(FusionModel::from_named(d.spec, cfg.method, cfg.extractor, out.model.gmf_config, entries), ShapeError);
}

TEST(Missing, DropNothingMatchesStandardMetrics) {
  SyntheticSpec spec = small_spec();
  spec.classes = 2;
  const Dataset d = generate_dataset(spec, 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  const TrainOutcome out = train_fusion(d, cfg, fusion_for(spec));
  const MissingModalityMetrics m = missing_modality_eval(out.model, d, std::nullopt);
  EXPECT_EQ(m.accuracy, out.report.metric("final_test_accuracy"));
  ASSERT_TRUE(m.auc.has_value());
  EXPECT_GT(*m.auc, 0.5);
}

TEST(Missing, LocalityHoldsAndIndexChecked) {
  const Dataset d = generate_dataset(small_spec(), 8);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.extractor = ExtractorMode::trainable;
  const TrainOutcome out = train_fusion(d, cfg, fusion_for(d.spec));
  for (std::size_t j = 0; j < 2; ++j) {
    const MissingModalityMetrics m = missing_modality_eval(out.model, d, j);
    EXPECT_TRUE(m.locality_holds);
    EXPECT_EQ(*m.dropped, j);
  }
  std::vector<Matrix> x = d.test_features();
  const gmf::FusionValues full = out.model.fusion_values(x);
  x[1].fill(0.0);
  EXPECT_EQ(out.model.fusion_values(x).z_spec[0], full.z_spec[0]);
  EXPECT_THROW(missing_modality_eval(out.model, d, 2), ContractError);
}
