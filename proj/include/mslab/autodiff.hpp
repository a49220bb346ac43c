#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mslab/tensor.hpp"

namespace mslab {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Raised when a non-finite value crosses an op boundary with checking enabled.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents always
/// precede children and backward() is a single reverse sweep.
///
/// A tape is rebuilt for each forward pass and belongs to one thread.
class Tape {
 public:
  /// Local gradient rule: given the node's output gradient, accumulate into
  /// each parent gradient slot (nullptr for parents that need no gradient).
  using Backward =
      std::function<void(const Tape&, const Tensor& out_grad, std::span<Tensor* const> parent_grads)>;

  explicit Tape(bool record = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked input: receives a gradient on backward().
  Var leaf(Tensor value);
  /// Untracked input.
  Var constant(Tensor value);

  /// Records an op result. Used by the op library; `backward` may be empty
  /// when no parent requires a gradient.
  Var push(Tensor value, std::vector<std::size_t> parents, Backward backward);

  const Tensor& value(Var v) const;
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Accumulated gradient of a node after backward(); zeros if it received none.
  Tensor grad(Var v) const;

  /// Propagates d(loss)/d(node) to every tracked node. The tape is consumed.
  void backward(Var loss);

  bool recording() const { return record_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    Backward backward;
  };

  const Node& node(Var v) const;
  Var add_node(Node n);

  std::vector<Node> nodes_;
  bool record_;
  bool consumed_ = false;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

/// Differentiable op library over tape variables. Binary ops require equal
/// shapes and both operands on the same tape.
namespace ad {

enum class OpKind { Add, Sub, Mul, Div, Neg, Exp, Log, Square, Sqrt };

/// Generic entry point for the elementwise family; `b` is required for the
/// binary kinds and must be absent for the unary ones.
Var elementwise(OpKind kind, Var a, std::optional<Var> b = std::nullopt);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var abs(Var a);

Var sigmoid(Var a);
/// x * sigmoid(x)
Var swish(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
/// Elementwise clamp to [lo, hi]; zero gradient outside the interval.
Var clamp(Var a, double lo, double hi);

Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// c - a
Var rsub_scalar(double c, Var a);

/// [m x k] * [k x n]
Var matmul(Var a, Var b);
/// Affine layer x * W^T + b with W stored [out x in] and b of shape [out].
Var linear(Var x, Var weight, std::optional<Var> bias = std::nullopt);

/// Sum of all entries (scalar).
Var sum(Var a);
/// Mean of all entries (scalar).
Var mean(Var a);
/// Per-row sums: [rows x cols] -> [rows].
Var row_sum(Var a);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator/(Var a, Var b) { return ad::div(a, b); }
inline Var operator-(Var a) { return ad::neg(a); }

}  // namespace mslab
