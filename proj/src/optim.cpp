#include "gmflab/optim.hpp"

#include <cmath>

#include "gmflab/errors.hpp"

namespace gmflab {

void sgd_step(std::span<Parameter* const> params, const SgdConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("sgd_step: learning rate must be > 0", "lr");
  for (Parameter* p : params) {
    Matrix& v = p->momentum;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      v[i] = config.momentum * v[i] + (p->grad[i] + config.weight_decay * p->value[i]);
      p->value[i] -= config.lr * v[i];
    }
    p->zero_grad();
  }
}

Matrix fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name, fan_in_uniform(out, in, in, rng)),
      bias(name + ".bias", fan_in_uniform(1, out, in, rng)) {}

Linear Linear::zeros(const std::string& name, std::size_t in, std::size_t out) {
  Linear l;
  l.weight = Parameter(name, Matrix(out, in));
  l.bias = Parameter(name + ".bias", Matrix(1, out));
  return l;
}

Matrix Linear::apply(const Matrix& x) const {
  Matrix out = matmul_nt(x, weight.value);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.value[c];
  return out;
}

}  // namespace gmflab
