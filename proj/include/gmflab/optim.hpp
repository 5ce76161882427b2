#pragma once

#include <span>
#include <string>

#include "gmflab/autodiff.hpp"
#include "gmflab/rng.hpp"

namespace gmflab {

/// SGD with heavy-ball momentum and L2 weight decay. Defaults follow the
/// reference training table: lr 0.01, momentum 0.9, weight decay 1e-4.
struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// v <- momentum*v + (grad + weight_decay*value); value <- value - lr*v;
/// then zeroes every gradient. Throws ConfigError when lr <= 0.
void sgd_step(std::span<Parameter* const> params, const SgdConfig& config);

/// Uniform in +-1/sqrt(fan_in).
Matrix fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

/// Affine map y = x·Wᵀ + b with W stored out×in.
struct Linear {
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  /// Zero-initialized weights and bias.
  static Linear zeros(const std::string& name, std::size_t in, std::size_t out);

  Parameter weight;
  Parameter bias;

  std::size_t in_features() const { return weight.value.cols(); }
  std::size_t out_features() const { return weight.value.rows(); }
  std::size_t parameter_count() const { return weight.value.size() + bias.value.size(); }

  Var apply(Tape& tape, Var x) { return linear(x, tape.param(weight), tape.param(bias)); }
  Matrix apply(const Matrix& x) const;
};

}  // namespace gmflab
