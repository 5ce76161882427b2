#pragma once

#include <span>

#include "gmflab/autodiff.hpp"

namespace gmflab {

/// Mean over all elements of (pred - target)^2. Recorded on the tape.
Var mse_loss(Var pred, Var target);
double mse_loss(const Matrix& pred, const Matrix& target);

/// Mean over the batch of -log softmax(logits)[label]. Labels must lie in
/// [0, logits.cols()), otherwise ContractError.
Var cross_entropy_loss(Var logits, std::span<const int> labels);
double cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

/// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Matrix& m);
double accuracy(const Matrix& logits, std::span<const int> labels);

}  // namespace gmflab
