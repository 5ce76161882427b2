#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "gmflab/errors.hpp"
#include "gmflab/gmf.hpp"
#include "gmflab/loss.hpp"
#include "gradcheck.hpp"

using namespace gmflab;
using namespace gmflab::gmf;
using gmflab::testing::random_matrix;

namespace {

GmfConfig config_of(std::vector<std::size_t> dims, std::size_t n = 4, double fraction = 0.5) {
  GmfConfig c;
  c.dims = std::move(dims);
  c.magnification = n;
  c.boundary_fraction = fraction;
  return c;
}

std::vector<Matrix> random_features(const GmfConfig& c, std::size_t batch, Rng& rng) {
  std::vector<Matrix> out;
  for (std::size_t l : c.dims) out.push_back(random_matrix(batch, l, rng));
  return out;
}

/// Writes x into the specific band and reads it back unchanged:
/// P_dis = [0; I; 0], P_cspec = [I 0], P_recon = [0 | I], all biases zero.
GmfParams identity_path(const GmfConfig& c) {
  GmfParams p = GmfParams::zeros(c);
  const std::size_t ls = c.min_dim();
  for (std::size_t j = 0; j < c.modalities(); ++j) {
    const std::size_t l = c.dims[j];
    const std::size_t b = c.boundary(j);
    auto& m = p.maps[j];
    for (std::size_t i = 0; i < l; ++i) {
      m.dis.weight.value(b + i, i) = 1.0;
      m.cspec.weight.value(i, i) = 1.0;
      m.recon.weight.value(i, ls + i) = 1.0;
    }
  }
  return p;
}

}  // namespace

TEST(GmfConfig, ReferenceGeometry) {
  const GmfConfig c = config_of({512, 512});
  c.validate();
  EXPECT_EQ(c.dissolved_dim(0), 2048U);
  EXPECT_EQ(c.boundary(0), 1024U);
  EXPECT_EQ(c.min_dim(), 512U);
  EXPECT_EQ(c.output_dim(1), 1024U);
}

TEST(GmfConfig, RejectsInvalidShapes) {
  EXPECT_THROW(config_of({8}).validate(), ConfigError);
  EXPECT_THROW(config_of({1}).validate(), ConfigError);
  EXPECT_THROW(config_of({8, 0}).validate(), ConfigError);
  EXPECT_THROW(config_of({8, 8}, 1).validate(), ConfigError);
  EXPECT_THROW(config_of({8, 8}, 4, 0.0).validate(), ConfigError);
  EXPECT_THROW(config_of({8, 8}, 4, 1.0).validate(), ConfigError);
  // n*l = 2, fraction 0.2 -> b = 0: empty invariant band.
  EXPECT_THROW(config_of({1, 4}, 2, 0.2).validate(), ConfigError);
  try {
    config_of({8}).validate();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "dims");
  }
}

TEST(ElementSplit, ReferenceShapes) {
  const GmfConfig c = config_of({512, 256});
  Rng rng(1);
  GmfParams p = GmfParams::init(c, rng);
  Tape tape;
  Var x = tape.constant(random_matrix(2, 512, rng));
  auto [inv, spec] = element_split(tape, x, c, 0, p);
  EXPECT_EQ(inv.cols(), 256U);
  EXPECT_EQ(spec.cols(), 512U);
  EXPECT_EQ(inv.rows(), 2U);
  EXPECT_EQ(p.maps[0].dis.out_features(), 2048U);
  EXPECT_EQ(p.maps[0].cinv.in_features(), 1024U);
  EXPECT_EQ(p.maps[0].cspec.in_features(), 1024U);
}

TEST(ElementSplit, ZeroInputZeroBiasGivesZero) {
  const GmfConfig c = config_of({6, 4});
  Rng rng(2);
  GmfParams p = GmfParams::init(c, rng);
  for (Parameter* prm : p.parameters())
    if (prm->name.ends_with(".bias")) prm->value.fill(0.0);
  Tape tape;
  auto [inv, spec] = element_split(tape, tape.constant(Matrix(3, 6)), c, 0, p);
  EXPECT_EQ(inv.value().max_abs(), 0.0);
  EXPECT_EQ(spec.value().max_abs(), 0.0);
}

TEST(ElementSplit, HandTwoByTwo) {
  // l = 2, n = 2, fraction 1/2: dissolved length 4, boundary 2, l* = 2.
  const GmfConfig c = config_of({2, 2}, 2, 0.5);
  GmfParams p = GmfParams::zeros(c);
  p.maps[0].dis.weight.value = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}, {1, -1}});
  p.maps[0].cinv.weight.value = Matrix::identity(2);
  p.maps[0].cspec.weight.value = Matrix::from_rows({{1, 0}, {0, 2}});
  p.maps[0].cspec.bias.value = Matrix::from_rows({{0.5, 0}});
  Tape tape;
  // x = (3, 5): dissolved (3, 5, 8, -2) -> inv (3, 5), spec (8 + 0.5, -4).
  auto [inv, spec] = element_split(tape, tape.constant(Matrix::from_rows({{3, 5}})), c, 0, p);
  EXPECT_EQ(inv.value(), Matrix::from_rows({{3, 5}}));
  EXPECT_EQ(spec.value(), Matrix::from_rows({{8.5, -4}}));
}

TEST(ElementSplit, LengthMismatchIsShapeError) {
  const GmfConfig c = config_of({4, 4});
  GmfParams p = GmfParams::zeros(c);
  Tape tape;
  EXPECT_THROW(element_split(tape, tape.constant(Matrix(1, 5)), c, 0, p), ShapeError);
}

TEST(GmfForward, ReferenceOutputLengths) {
  const GmfConfig c = config_of({512, 512});
  Rng rng(3);
  GmfParams p = GmfParams::init(c, rng);
  Tape tape;
  auto feats = random_features(c, 1, rng);
  std::vector<Var> vars{tape.constant(feats[0]), tape.constant(feats[1])};
  const FusionOutput out = gmf_forward(tape, vars, c, p);
  for (const auto& m : out.modalities) {
    EXPECT_EQ(m.z.cols(), 1024U);
    EXPECT_EQ(m.recon.cols(), 512U);
  }
}

TEST(GmfForward, ShapeLawAcrossModalityCounts) {
  for (auto dims : std::vector<std::vector<std::size_t>>{{3, 5}, {4, 6, 8}, {2, 7, 3, 5}}) {
    const GmfConfig c = config_of(dims, 3, 0.4);
    Rng rng(4);
    GmfParams p = GmfParams::init(c, rng);
    Tape tape;
    std::vector<Var> vars;
    for (const auto& f : random_features(c, 2, rng)) vars.push_back(tape.constant(f));
    const FusionOutput out = gmf_forward(tape, vars, c, p);
    for (std::size_t j = 0; j < dims.size(); ++j) {
      EXPECT_EQ(out.modalities[j].z_inv.cols(), c.min_dim());
      EXPECT_EQ(out.modalities[j].z_spec.cols(), dims[j]);
      EXPECT_EQ(out.modalities[j].z.cols(), dims[j] + c.min_dim());
      EXPECT_EQ(out.modalities[j].recon.cols(), dims[j]);
    }
  }
}

TEST(GmfForward, ZeroEverythingGivesZero) {
  const GmfConfig c = config_of({3, 4});
  GmfParams p = GmfParams::zeros(c);
  const std::vector<Matrix> feats{Matrix(2, 3), Matrix(2, 4)};
  const FusionValues v = gmf_evaluate(feats, c, p);
  for (const auto* group : {&v.z, &v.z_inv, &v.z_spec, &v.recon})
    for (const Matrix& m : *group) EXPECT_EQ(m.max_abs(), 0.0);
}

TEST(GmfForward, RejectsSingleModalityAndBadWidths) {
  const GmfConfig two = config_of({3, 4});
  GmfParams p = GmfParams::zeros(two);
  const std::vector<Matrix> one{Matrix(1, 3)};
  EXPECT_THROW(gmf_evaluate(one, config_of({3}), p), ConfigError);
  const std::vector<Matrix> wrong{Matrix(1, 3), Matrix(1, 5)};
  EXPECT_THROW(gmf_evaluate(wrong, two, p), ShapeError);
  EXPECT_THROW(gmf_evaluate(one, two, p), ShapeError);
}

TEST(GmfForward, CyclicRoutingByPerturbation) {
  // Perturbing modality k must change exactly the spec slot of Z^(k) and the
  // invariant slot of Z^(k-1 mod d): the invariant part of k+1 feeds Z^(k).
  const GmfConfig c = config_of({4, 6, 8}, 4, 0.5);
  Rng rng(5);
  const GmfParams p = GmfParams::init(c, rng);
  const auto base = random_features(c, 1, rng);
  const FusionValues ref = gmf_evaluate(base, c, p);
  const std::size_t d = 3;
  const std::size_t ls = c.min_dim();
  for (std::size_t k = 0; k < d; ++k) {
    auto pert = base;
    pert[k][0] += 0.25;
    const FusionValues v = gmf_evaluate(pert, c, p);
    for (std::size_t j = 0; j < d; ++j) {
      const bool inv_changed = v.z[j].cols_range(0, ls) != ref.z[j].cols_range(0, ls);
      const bool spec_changed =
          v.z[j].cols_range(ls, v.z[j].cols()) != ref.z[j].cols_range(ls, ref.z[j].cols());
      EXPECT_EQ(inv_changed, j == (k + d - 1) % d) << "k=" << k << " j=" << j;
      EXPECT_EQ(spec_changed, j == k) << "k=" << k << " j=" << j;
    }
  }
}

TEST(GmfForward, TapeAndEvaluatePathsAgreeBitwise) {
  const GmfConfig c = config_of({5, 3});
  Rng rng(6);
  GmfParams p = GmfParams::init(c, rng);
  const auto feats = random_features(c, 4, rng);
  Tape tape;
  std::vector<Var> vars{tape.constant(feats[0]), tape.constant(feats[1])};
  const FusionOutput out = gmf_forward(tape, vars, c, p);
  const FusionValues v = gmf_evaluate(feats, c, p);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(out.modalities[j].z.value(), v.z[j]);
    EXPECT_EQ(out.modalities[j].recon.value(), v.recon[j]);
  }
}

TEST(GmfForward, LocalityUnderZeroedModality) {
  const GmfConfig c = config_of({6, 4, 5});
  Rng rng(7);
  const GmfParams p = GmfParams::init(c, rng);
  const auto feats = random_features(c, 3, rng);
  const FusionValues full = gmf_evaluate(feats, c, p);
  for (std::size_t drop = 0; drop < 3; ++drop) {
    auto partial = feats;
    partial[drop].fill(0.0);
    const FusionValues v = gmf_evaluate(partial, c, p);
    for (std::size_t j = 0; j < 3; ++j) {
      if (j == drop) continue;
      EXPECT_EQ(v.z_spec[j], full.z_spec[j]);
      EXPECT_EQ(v.z_inv[j], full.z_inv[j]);
    }
  }
}

TEST(ReconstructionLoss, IdentityPathIsExactlyZero) {
  for (std::size_t n : {2U, 4U}) {
    const GmfConfig c = config_of({5, 3}, n, 0.5);
    GmfParams p = identity_path(c);
    Rng rng(8);
    const auto feats = random_features(c, 6, rng);
    Tape tape;
    std::vector<Var> vars{tape.constant(feats[0]), tape.constant(feats[1])};
    const FusionOutput out = gmf_forward(tape, vars, c, p);
    EXPECT_EQ(reconstruction_loss(out, vars).value()[0], 0.0);
  }
}

TEST(ReconstructionLoss, MatchesStandaloneMseSum) {
  const GmfConfig c = config_of({4, 7, 3});
  Rng rng(9);
  GmfParams p = GmfParams::init(c, rng);
  const auto feats = random_features(c, 5, rng);
  Tape tape;
  std::vector<Var> vars;
  for (const auto& f : feats) vars.push_back(tape.constant(f));
  const FusionOutput out = gmf_forward(tape, vars, c, p);
  // Oracle: squared error summed by hand per modality.
  double expected = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    const Matrix& r = out.modalities[j].recon.value();
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += (r[i] - feats[j][i]) * (r[i] - feats[j][i]);
    expected += s / static_cast<double>(r.size());
  }
  EXPECT_NEAR(reconstruction_loss(out, vars).value()[0], expected, 1e-13);
}

TEST(ReconstructionLoss, CountMismatchIsShapeError) {
  const GmfConfig c = config_of({4, 3});
  GmfParams p = GmfParams::zeros(c);
  Tape tape;
  std::vector<Var> vars{tape.constant(Matrix(1, 4)), tape.constant(Matrix(1, 3))};
  const FusionOutput out = gmf_forward(tape, vars, c, p);
  EXPECT_THROW(reconstruction_loss(out, std::span(vars).first(1)), ShapeError);
  std::vector<Var> swapped{vars[1], vars[0]};
  EXPECT_THROW(reconstruction_loss(out, swapped), ShapeError);
}

TEST(BarrierLaw, FusionInputsGetNoReconstructionGradient) {
  for (bool barrier : {true, false}) {
    GmfConfig c = config_of({5, 4});
    c.barrier_enabled = barrier;
    Rng rng(10);
    GmfParams p = GmfParams::init(c, rng);
    Parameter head("head", random_matrix(3, 17, rng));
    const auto feats = random_features(c, 4, rng);
    Tape tape;
    std::vector<Var> vars{tape.input(feats[0]), tape.input(feats[1])};
    const FusionOutput out = gmf_forward(tape, vars, c, p);
    Var l_dis = scale(reconstruction_loss(out, vars), 0.7);
    const std::vector<int> labels{0, 1, 2, 1};
    Var logits = linear(concat_cols(out.modalities[0].z, out.modalities[1].z), tape.param(head));
    Var l_task = cross_entropy_loss(logits, labels);

    tape.backward(l_dis, LossScope::fusion);
    const double fusion_grad = tape.adjoint(vars[0]).max_abs() + tape.adjoint(vars[1]).max_abs();
    const double recon_grad = p.maps[0].recon.weight.grad.max_abs();
    tape.backward(l_task, LossScope::task);
    const double task_grad = tape.adjoint(vars[0]).max_abs() + tape.adjoint(vars[1]).max_abs();

    if (barrier) {
      EXPECT_EQ(fusion_grad, 0.0);
    } else {
      EXPECT_GT(fusion_grad, 0.0);
    }
    EXPECT_GT(task_grad, 0.0);
    EXPECT_GT(recon_grad, 0.0);
  }
}

TEST(GradientLaw, AllMapsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const GmfConfig c = seed % 2 == 0 ? config_of({3, 2}, 2, 0.5) : config_of({4, 2, 3}, 2, 0.25);
    Rng rng(100 + seed);
    GmfParams p = GmfParams::init(c, rng);
    const auto feats = random_features(c, 3, rng);
    auto graph = [&](Tape& t) {
      std::vector<Var> vars;
      for (const auto& f : feats) vars.push_back(t.constant(f));
      return reconstruction_loss(gmf_forward(t, vars, c, p), vars);
    };
    auto prms = p.parameters();
    const auto r = gmflab::testing::check_gradients(graph, {prms.begin(), prms.end()});
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
  }
}

TEST(CountLaw, EnumeratedElementsMatchFormula) {
  for (auto dims : std::vector<std::vector<std::size_t>>{{3, 5}, {4, 6, 8}, {16, 16}, {512, 512}}) {
    const GmfConfig c = config_of(dims);
    EXPECT_EQ(GmfParams::zeros(c).element_count(), param_count(c));
  }
}

TEST(ParamCount, ReferenceConfigs) {
  EXPECT_EQ(param_count(config_of({512, 512})), 5250048U);
  EXPECT_EQ(param_count(config_of({128, 128})), 329472U);
  EXPECT_EQ(param_count(config_of({128, 4096})), 119202816U);
  EXPECT_THROW(param_count(config_of({1})), ConfigError);
}

TEST(Flops, ReferenceConfigs) {
  EXPECT_NEAR(flops_estimate(config_of({512, 512})) / 1e9, 0.0105, 0.0005);
  EXPECT_NEAR(flops_estimate(config_of({128, 128})) / 1e9, 0.00066, 0.00002);
  EXPECT_NEAR(flops_estimate(config_of({128, 4096})) / 1e9, 0.238, 0.001);
  EXPECT_THROW(flops_estimate(config_of({1})), ConfigError);
}

TEST(Params, NamedRoundTrip) {
  const GmfConfig c = config_of({3, 2});
  Rng rng(12);
  const GmfParams p = GmfParams::init(c, rng);
  const auto named = p.to_named();
  ASSERT_EQ(named.size(), 16U);
  EXPECT_EQ(named[0].name, "P_dis.0");
  EXPECT_EQ(named[1].name, "P_dis.0.bias");
  EXPECT_EQ(named[15].name, "P_recon.1.bias");
  const GmfParams q = GmfParams::from_named(c, decode_checkpoint(encode_checkpoint(named)));
  EXPECT_EQ(q.maps[1].cspec.weight.value, p.maps[1].cspec.weight.value);
  EXPECT_THROW(GmfParams::from_named(config_of({3, 3}), named), ShapeError);
}

TEST(Trainability, ReconstructionLossDropsBelowFivePercent) {
  const GmfConfig c = config_of({16, 16});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng = Rng::stream(seed, "gmf");
    GmfParams p = GmfParams::init(c, rng);
    Rng data = Rng::stream(seed, "data");
    std::vector<Matrix> feats{Matrix(1, 16), Matrix(1, 16)};
    for (auto& f : feats)
      for (double& v : f.data()) v = data.normal();
    auto params = p.parameters();
    double first = 0.0;
    double last = 0.0;
    for (int step = 0; step < 500; ++step) {
      Tape tape;
      std::vector<Var> vars{tape.constant(feats[0]), tape.constant(feats[1])};
      Var loss = reconstruction_loss(gmf_forward(tape, vars, c, p), vars);
      if (step == 0) first = loss.value()[0];
      last = loss.value()[0];
      tape.backward(loss, LossScope::fusion);
      sgd_step(params, {});
    }
    EXPECT_LT(last, 0.05 * first) << "seed " << seed << " first=" << first << " last=" << last;
  }
}
