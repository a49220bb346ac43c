#include "mslab/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace mslab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_matrix(const Tensor& t) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}
Map as_matrix(Tensor& t) {
  return Map(t.data().data(), static_cast<Eigen::Index>(t.rows()),
             static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an empty Var");
  return tape_->value(*this);
}

Tape::Tape(bool record) : record_(record) {}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this) throw std::logic_error("Var belongs to a different tape");
  return nodes_.at(v.id_);
}

Var Tape::add_node(Node n) {
  if (check_finite_ && !n.value.all_finite()) {
    throw NonFiniteError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  return add_node(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return add_node(std::move(n));
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, Backward backward) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (std::size_t p : parents) {
      if (p >= nodes_.size()) throw std::logic_error("parent handle out of range");
      n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
    if (n.requires_grad) {
      n.parents = std::move(parents);
      n.backward = std::move(backward);
    }
  }
  return add_node(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  if (!record_) throw std::logic_error("backward() on a non-recording tape");
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  consumed_ = true;

  Node& r = nodes_[loss.id_];
  r.grad = Tensor(r.value.shape(), 1.0);
  r.has_grad = true;

  std::vector<Tensor*> slots;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    slots.assign(n.parents.size(), nullptr);
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      Node& p = nodes_[n.parents[k]];
      if (!p.requires_grad) continue;
      if (!p.has_grad) {
        p.grad = Tensor(p.value.shape());
        p.has_grad = true;
      }
      slots[k] = &p.grad;
    }
    n.backward(*this, n.grad, slots);
    if (check_finite_ && !n.grad.all_finite()) {
      throw NonFiniteError("non-finite gradient at tape node " + std::to_string(i));
    }
  }
}

namespace ad {

namespace {

Tape& same_tape(Var a, Var b, const char* what) {
  if (!a.valid() || !b.valid()) throw std::logic_error(std::string(what) + ": empty Var");
  if (a.tape() != b.tape()) throw std::logic_error(std::string(what) + ": operands on different tapes");
  return *a.tape();
}

Tape& tape_of(Var a, const char* what) {
  if (!a.valid()) throw std::logic_error(std::string(what) + ": empty Var");
  return *a.tape();
}

/// Unary map y = f(x) with local derivative df(x, y).
template <class F, class DF>
Var unary(Var a, const char* what, F f, DF df) {
  Tape& tape = tape_of(a, what);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  const std::size_t iy = tape.size();
  return tape.push(std::move(y), {ia},
                   [ia, iy, df](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                     const Tensor& xv = t.value(ia);
                     const Tensor& yv = t.value(iy);
                     Tensor& ga = *pg[0];
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
                   });
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.push(std::move(y), {a.id(), b.id()},
                   [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                     for (Tensor* p : pg) {
                       if (!p) continue;
                       for (std::size_t i = 0; i < g.size(); ++i) (*p)[i] += g[i];
                     }
                   });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return tape.push(std::move(y), {a.id(), b.id()},
                   [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                     if (pg[0]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     }
                     if (pg[1]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                     }
                   });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(y), {ia, ib},
                   [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                     const Tensor& av = t.value(ia);
                     const Tensor& bv = t.value(ib);
                     if (pg[0]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bv[i];
                     }
                     if (pg[1]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * av[i];
                     }
                   });
}

Var div(Var a, Var b) {
  Tape& tape = same_tape(a, b, "div");
  require_same_shape(a.value(), b.value(), "div");
  const Tensor& bv = b.value();
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (bv[i] == 0.0) throw std::domain_error("div: division by zero");
    y[i] /= bv[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(y), {ia, ib},
                   [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                     const Tensor& av = t.value(ia);
                     const Tensor& bv = t.value(ib);
                     if (pg[0]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] / bv[i];
                     }
                     if (pg[1]) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[1])[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                       }
                     }
                   });
}

Var neg(Var a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  }
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  for (double v : a.value().data()) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
  }
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var abs(Var a) {
  return unary(a, "abs", [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var swish(Var a) {
  return unary(a, "swish", [](double x) { return x * sigmoid_scalar(x); },
               [](double x, double) {
                 const double s = sigmoid_scalar(x);
                 return s + x * s * (1.0 - s);
               });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

Var scale(Var a, double c) {
  return unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, "add_scalar", [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var rsub_scalar(double c, Var a) {
  return unary(a, "rsub_scalar", [c](double x) { return c - x; },
               [](double, double) { return -1.0; });
}

Var elementwise(OpKind kind, Var a, std::optional<Var> b) {
  const bool binary = kind == OpKind::Add || kind == OpKind::Sub || kind == OpKind::Mul ||
                      kind == OpKind::Div;
  if (binary != b.has_value()) {
    throw std::invalid_argument("elementwise: operand count does not match op kind");
  }
  switch (kind) {
    case OpKind::Add: return add(a, *b);
    case OpKind::Sub: return sub(a, *b);
    case OpKind::Mul: return mul(a, *b);
    case OpKind::Div: return div(a, *b);
    case OpKind::Neg: return neg(a);
    case OpKind::Exp: return exp(a);
    case OpKind::Log: return log(a);
    case OpKind::Square: return square(a);
    case OpKind::Sqrt: return sqrt(a);
  }
  throw std::invalid_argument("elementwise: unknown op kind");
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  Tensor y({av.rows(), bv.cols()});
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(y), {ia, ib},
                   [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                     if (pg[0]) as_matrix(*pg[0]).noalias() += as_matrix(g) * as_matrix(t.value(ib)).transpose();
                     if (pg[1]) as_matrix(*pg[1]).noalias() += as_matrix(t.value(ia)).transpose() * as_matrix(g);
                   });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  Tape& tape = same_tape(x, weight, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.cols()) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " vs weight " +
                     shape_str(wv.shape()));
  }
  Tensor y({xv.rows(), wv.rows()});
  as_matrix(y).noalias() = as_matrix(xv) * as_matrix(wv).transpose();
  std::vector<std::size_t> parents{x.id(), weight.id()};
  if (bias) {
    if (bias->tape() != &tape) throw std::logic_error("linear: bias on a different tape");
    const Tensor& bv = bias->value();
    if (bv.size() != wv.rows()) {
      throw ShapeError("linear: bias " + shape_str(bv.shape()) + " vs weight " +
                       shape_str(wv.shape()));
    }
    const std::size_t out = wv.rows();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      for (std::size_t c = 0; c < out; ++c) y(r, c) += bv[c];
    }
    parents.push_back(bias->id());
  }
  const std::size_t ix = x.id(), iw = weight.id();
  return tape.push(std::move(y), std::move(parents),
                   [ix, iw](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                     const auto gm = as_matrix(g);
                     if (pg[0]) as_matrix(*pg[0]).noalias() += gm * as_matrix(t.value(iw));
                     if (pg[1]) as_matrix(*pg[1]).noalias() += gm.transpose() * as_matrix(t.value(ix));
                     if (pg.size() > 2 && pg[2]) {
                       Tensor& gb = *pg[2];
                       const std::size_t out = g.cols();
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         for (std::size_t c = 0; c < out; ++c) gb[c] += g(r, c);
                       }
                     }
                   });
}

Var sum(Var a) {
  Tape& tape = tape_of(a, "sum");
  return tape.push(Tensor::scalar(a.value().sum()), {a.id()},
                   [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                     const double s = g[0];
                     for (double& v : pg[0]->data()) v += s;
                   });
}

Var mean(Var a) {
  Tape& tape = tape_of(a, "mean");
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return tape.push(Tensor::scalar(a.value().sum() / static_cast<double>(n)), {a.id()},
                   [n](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                     const double s = g[0] / static_cast<double>(n);
                     for (double& v : pg[0]->data()) v += s;
                   });
}

Var row_sum(Var a) {
  Tape& tape = tape_of(a, "row_sum");
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("row_sum needs a matrix, got " + shape_str(av.shape()));
  const std::size_t r = av.rows(), c = av.cols();
  Tensor y({r});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av(i, j);
    y[i] = s;
  }
  return tape.push(std::move(y), {a.id()},
                   [r, c](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                     Tensor& ga = *pg[0];
                     for (std::size_t i = 0; i < r; ++i) {
                       for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
                     }
                   });
}

}  // namespace ad

}  // namespace mslab
