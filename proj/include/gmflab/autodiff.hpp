#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gmflab/matrix.hpp"

namespace gmflab {

/// Loss branches that a backward pass can be scoped to. A GradientBarrier
/// blocks adjoints for the scopes in its mask and is transparent otherwise.
enum class LossScope : std::uint8_t { task = 1U << 0U, fusion = 1U << 1U };

using ScopeMask = std::uint8_t;
inline constexpr ScopeMask kAllScopes = 0xFF;

constexpr ScopeMask mask_of(LossScope s) noexcept { return static_cast<ScopeMask>(s); }

/// Learnable value with its gradient accumulator and SGD momentum buffer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value);

  std::string name;
  Matrix value;
  Matrix grad;
  Matrix momentum;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool tracked() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What an op's adjoint rule sees during a backward sweep. `input_adjoints[i]`
/// is null when input i does not need a gradient.
struct BackpropContext {
  const Matrix& output;
  const Matrix& output_adjoint;
  std::span<const Matrix* const> inputs;
  std::span<Matrix* const> input_adjoints;
};

using BackpropFn = std::function<void(const BackpropContext&)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so operands
/// always precede their consumers and a reverse sweep is a valid
/// topological traversal.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked leaf; never receives an adjoint.
  Var constant(Matrix value);
  /// Tracked leaf whose adjoint can be read back with adjoint().
  Var input(Matrix value);
  /// Tracked leaf bound to a Parameter; backward() accumulates into p.grad.
  /// The parameter must outlive the backward calls on this tape.
  Var param(Parameter& p);

  /// Appends an op node. The node is tracked iff any input is tracked;
  /// untracked nodes drop `backprop`.
  Var record(Matrix value, std::span<const Var> inputs, BackpropFn backprop);

  /// Forward-identity node that stops adjoints of the scopes in `blocked`.
  Var barrier(Var x, ScopeMask blocked);

  /// Propagates d(loss)/d(node) for the given scope and adds parameter
  /// gradients into Parameter::grad. Adjoints from the previous call are
  /// discarded first. Throws ContractError unless loss is a 1x1 node of this tape.
  void backward(Var loss, LossScope scope = LossScope::task);

  /// Adjoint from the most recent backward(); zeros if the node got none.
  Matrix adjoint(Var v) const;

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool tracked(std::size_t id) const { return nodes_.at(id).tracked; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    std::vector<std::size_t> inputs;
    BackpropFn backprop;
    Parameter* param = nullptr;
    ScopeMask blocked = 0;
    bool tracked = false;
  };

  Var push(Node node);
  void check_owner(Var v, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
};

// Recorded primitives. Every op throws ShapeError on incompatible operands.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// x (n×k) plus a 1×k row broadcast over every row.
Var add_row(Var x, Var row);
/// x·Wᵀ + b with W stored out×in and b a 1×out row (b may be invalid for no bias).
Var linear(Var x, Var weight, Var bias = {});
Var concat_cols(std::span<const Var> parts);
Var concat_cols(Var a, Var b);
/// Columns [begin, end).
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);

/// Blocks adjoints of `scope` only; other scopes pass through.
inline Var gradient_barrier(Var x, LossScope scope) { return x.tape()->barrier(x, mask_of(scope)); }
/// Blocks every scope.
inline Var detach(Var x) { return x.tape()->barrier(x, kAllScopes); }

}  // namespace gmflab
