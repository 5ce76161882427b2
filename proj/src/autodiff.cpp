#include "gmflab/autodiff.hpp"

#include <array>
#include <cmath>

#include <fmt/format.h>

#include "gmflab/errors.hpp"

namespace gmflab {

Parameter::Parameter(std::string name_, Matrix value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.rows(), value.cols()),
      momentum(value.rows(), value.cols()) {}

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw ContractError("Var: use of an unbound variable");
  return tape_->value(id_);
}

bool Var::tracked() const { return tape_ != nullptr && tape_->tracked(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v, const char* op) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError(fmt::format("{}: variable does not belong to this tape", op));
  }
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.tracked = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.tracked = true;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackpropFn backprop) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    check_owner(v, "Tape::record");
    n.inputs.push_back(v.id_);
    n.tracked = n.tracked || nodes_[v.id_].tracked;
  }
  if (n.tracked) n.backprop = std::move(backprop);
  return push(std::move(n));
}

Var Tape::barrier(Var x, ScopeMask blocked) {
  check_owner(x, "barrier");
  const std::array<Var, 1> in{x};
  Var out = record(x.value(), in, [](const BackpropContext& ctx) {
    if (ctx.input_adjoints[0] != nullptr) *ctx.input_adjoints[0] += ctx.output_adjoint;
  });
  nodes_[out.id_].blocked = blocked;
  return out;
}

void Tape::backward(Var loss, LossScope scope) {
  check_owner(loss, "backward");
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError(fmt::format("backward: loss must be 1x1, got {}", lv.shape_str()));
  }
  adjoints_.assign(nodes_.size(), Matrix{});
  if (!nodes_[loss.id_].tracked) return;
  adjoints_[loss.id_] = Matrix(1, 1, 1.0);

  const ScopeMask scope_bit = mask_of(scope);
  std::vector<const Matrix*> in_values;
  std::vector<Matrix*> in_adjoints;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (adjoints_[i].empty()) continue;
    if (!node.tracked) continue;
    if (node.param != nullptr) node.param->grad += adjoints_[i];
    if ((node.blocked & scope_bit) != 0 || !node.backprop) continue;

    in_values.clear();
    in_adjoints.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].tracked) {
        if (adjoints_[in].empty()) {
          adjoints_[in] = Matrix(nodes_[in].value.rows(), nodes_[in].value.cols());
        }
        in_adjoints.push_back(&adjoints_[in]);
      } else {
        in_adjoints.push_back(nullptr);
      }
    }
    node.backprop(BackpropContext{node.value, adjoints_[i], in_values, in_adjoints});
  }
}

Matrix Tape::adjoint(Var v) const {
  check_owner(v, "adjoint");
  if (v.id_ < adjoints_.size() && !adjoints_[v.id_].empty()) return adjoints_[v.id_];
  const Matrix& val = nodes_[v.id_].value;
  return Matrix(val.rows(), val.cols());
}

namespace {

Tape& tape_of(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ContractError(fmt::format("{}: operands must live on the same tape", op));
  }
  return *a.tape();
}

Tape& tape_of(Var a, const char* op) {
  if (!a.valid()) throw ContractError(fmt::format("{}: unbound variable", op));
  return *a.tape();
}

template <typename Fn, typename Grad>
Var elementwise(Var a, Fn fn, Grad dfn) {
  Tape& t = tape_of(a, "elementwise");
  Matrix out = a.value();
  for (double& v : out.data()) v = fn(v);
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [dfn](const BackpropContext& ctx) {
    Matrix* ga = ctx.input_adjoints[0];
    if (ga == nullptr) return;
    const Matrix& x = *ctx.inputs[0];
    for (std::size_t i = 0; i < x.size(); ++i)
      (*ga)[i] += ctx.output_adjoint[i] * dfn(x[i], ctx.output[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b, "matmul");
  Matrix out = gmflab::matmul(a.value(), b.value());
  const std::array<Var, 2> in{a, b};
  return t.record(std::move(out), in, [](const BackpropContext& ctx) {
    if (ctx.input_adjoints[0] != nullptr)
      *ctx.input_adjoints[0] += matmul_nt(ctx.output_adjoint, *ctx.inputs[1]);
    if (ctx.input_adjoints[1] != nullptr)
      *ctx.input_adjoints[1] += matmul_tn(*ctx.inputs[0], ctx.output_adjoint);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a, "transpose");
  const std::array<Var, 1> in{a};
  return t.record(a.value().transposed(), in, [](const BackpropContext& ctx) {
    if (ctx.input_adjoints[0] != nullptr)
      *ctx.input_adjoints[0] += ctx.output_adjoint.transposed();
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  const std::array<Var, 2> in{a, b};
  return t.record(a.value() + b.value(), in, [](const BackpropContext& ctx) {
    for (Matrix* g : ctx.input_adjoints)
      if (g != nullptr) *g += ctx.output_adjoint;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  const std::array<Var, 2> in{a, b};
  return t.record(a.value() - b.value(), in, [](const BackpropContext& ctx) {
    if (ctx.input_adjoints[0] != nullptr) *ctx.input_adjoints[0] += ctx.output_adjoint;
    if (ctx.input_adjoints[1] != nullptr) *ctx.input_adjoints[1] -= ctx.output_adjoint;
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b, "hadamard");
  require_same_shape(a.value(), b.value(), "hadamard");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::array<Var, 2> in{a, b};
  return t.record(std::move(out), in, [](const BackpropContext& ctx) {
    const Matrix& g = ctx.output_adjoint;
    if (Matrix* ga = ctx.input_adjoints[0]; ga != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*ctx.inputs[1])[i];
    if (Matrix* gb = ctx.input_adjoints[1]; gb != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * (*ctx.inputs[0])[i];
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a, "scale");
  const std::array<Var, 1> in{a};
  return t.record(a.value() * s, in, [s](const BackpropContext& ctx) {
    if (Matrix* ga = ctx.input_adjoints[0]; ga != nullptr)
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += s * ctx.output_adjoint[i];
  });
}

Var add_row(Var x, Var row) {
  Tape& t = tape_of(x, row, "add_row");
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw ShapeError(fmt::format("add_row: cannot broadcast {} over {}", rv.shape_str(),
                                 xv.shape_str()));
  }
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  const std::array<Var, 2> in{x, row};
  return t.record(std::move(out), in, [](const BackpropContext& ctx) {
    const Matrix& g = ctx.output_adjoint;
    if (ctx.input_adjoints[0] != nullptr) *ctx.input_adjoints[0] += g;
    if (Matrix* gr = ctx.input_adjoints[1]; gr != nullptr)
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gr)[c] += g(r, c);
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = tape_of(x, weight, "linear");
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  if (xv.cols() != wv.cols()) {
    throw ShapeError(fmt::format("linear: input {} does not match weight {} (out x in)",
                                 xv.shape_str(), wv.shape_str()));
  }
  Matrix out = matmul_nt(xv, wv);
  const bool has_bias = bias.valid();
  if (has_bias) {
    tape_of(x, bias, "linear");
    const Matrix& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != wv.rows()) {
      throw ShapeError(fmt::format("linear: bias {} does not match weight {}", bv.shape_str(),
                                   wv.shape_str()));
    }
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  }
  std::vector<Var> in{x, weight};
  if (has_bias) in.push_back(bias);
  return t.record(std::move(out), in, [](const BackpropContext& ctx) {
    const Matrix& g = ctx.output_adjoint;
    if (ctx.input_adjoints[0] != nullptr) *ctx.input_adjoints[0] += gmflab::matmul(g, *ctx.inputs[1]);
    if (ctx.input_adjoints[1] != nullptr) *ctx.input_adjoints[1] += matmul_tn(g, *ctx.inputs[0]);
    if (ctx.input_adjoints.size() > 2 && ctx.input_adjoints[2] != nullptr) {
      Matrix& gb = *ctx.input_adjoints[2];
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& t = tape_of(parts.front(), "concat_cols");
  std::vector<Matrix> values;
  values.reserve(parts.size());
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    tape_of(parts.front(), p, "concat_cols");
    values.push_back(p.value());
    widths.push_back(p.cols());
  }
  Matrix out = gmflab::concat_cols(values);
  return t.record(std::move(out), parts, [widths](const BackpropContext& ctx) {
    const Matrix& g = ctx.output_adjoint;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Matrix* gk = ctx.input_adjoints[k]; gk != nullptr) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*gk)(r, c) += g(r, offset + c);
      }
      offset += widths[k];
    }
  });
}

Var concat_cols(Var a, Var b) {
  const std::array<Var, 2> parts{a, b};
  return concat_cols(parts);
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a, "slice_cols");
  Matrix out = a.value().cols_range(begin, end);
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [begin](const BackpropContext& ctx) {
    Matrix* ga = ctx.input_adjoints[0];
    if (ga == nullptr) return;
    const Matrix& g = ctx.output_adjoint;
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(r, begin + c) += g(r, c);
  });
}

Var tanh(Var a) {
  return elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var sum(Var a) {
  Tape& t = tape_of(a, "sum");
  const std::array<Var, 1> in{a};
  return t.record(Matrix(1, 1, a.value().sum()), in, [](const BackpropContext& ctx) {
    Matrix* ga = ctx.input_adjoints[0];
    if (ga == nullptr) return;
    const double g = ctx.output_adjoint[0];
    for (double& v : ga->data()) v += g;
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0.0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / n);
}

}  // namespace gmflab
