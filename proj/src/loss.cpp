#include "gmflab/loss.hpp"

#include <array>
#include <cmath>

#include <fmt/format.h>

#include "gmflab/errors.hpp"

namespace gmflab {

double mse_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "mse_loss");
  if (pred.size() == 0) throw ShapeError("mse_loss: empty operands");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

Var mse_loss(Var pred, Var target) {
  if (!pred.valid() || pred.tape() != target.tape())
    throw ContractError("mse_loss: operands must live on the same tape");
  const double value = mse_loss(pred.value(), target.value());
  const std::array<Var, 2> in{pred, target};
  return pred.tape()->record(Matrix(1, 1, value), in, [](const BackpropContext& ctx) {
    const Matrix& p = *ctx.inputs[0];
    const Matrix& t = *ctx.inputs[1];
    const double k = 2.0 * ctx.output_adjoint[0] / static_cast<double>(p.size());
    if (Matrix* gp = ctx.input_adjoints[0]; gp != nullptr)
      for (std::size_t i = 0; i < p.size(); ++i) (*gp)[i] += k * (p[i] - t[i]);
    if (Matrix* gt = ctx.input_adjoints[1]; gt != nullptr)
      for (std::size_t i = 0; i < p.size(); ++i) (*gt)[i] -= k * (p[i] - t[i]);
  });
}

namespace {

void check_labels(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError(fmt::format("cross_entropy_loss: {} labels for logits {}", labels.size(),
                                 logits.shape_str()));
  }
  if (logits.rows() == 0) throw ShapeError("cross_entropy_loss: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw ContractError(
          fmt::format("cross_entropy_loss: label {} outside [0, {})", y, logits.cols()));
    }
  }
}

/// Row-wise softmax probabilities and the mean negative log-likelihood.
double softmax_nll(const Matrix& logits, std::span<const int> labels, Matrix* probs) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[static_cast<std::size_t>(labels[r])];
    if (probs != nullptr)
      for (std::size_t c = 0; c < row.size(); ++c) (*probs)(r, c) = std::exp(row[c] - log_z);
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

double cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  return softmax_nll(logits, labels, nullptr);
}

Var cross_entropy_loss(Var logits, std::span<const int> labels) {
  const Matrix& lv = logits.value();
  check_labels(lv, labels);
  Matrix probs(lv.rows(), lv.cols());
  const double value = softmax_nll(lv, labels, &probs);
  std::vector<int> y(labels.begin(), labels.end());
  const std::array<Var, 1> in{logits};
  return logits.tape()->record(
      Matrix(1, 1, value), in,
      [probs = std::move(probs), y = std::move(y)](const BackpropContext& ctx) {
        Matrix* g = ctx.input_adjoints[0];
        if (g == nullptr) return;
        const double k = ctx.output_adjoint[0] / static_cast<double>(probs.rows());
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double onehot = static_cast<int>(c) == y[r] ? 1.0 : 0.0;
            (*g)(r, c) += k * (probs(r, c) - onehot);
          }
        }
      });
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("accuracy: label count mismatch");
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace gmflab
