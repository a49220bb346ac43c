#include <gtest/gtest.h>

#include <cmath>

#include "mslab/autodiff.hpp"
#include "mslab/rng.hpp"
#include "support.hpp"

using namespace mslab;
using mslab::testing::max_grad_rel_error;

namespace {

constexpr int kSeeds = 100;
constexpr double kTol = 1e-5;

// Values with |v| >= 0.2 so kinked ops are differentiable at every sample.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = uniform_tensor(std::move(shape), 0.2, 2.0, rng);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.storage()) v = sign(rng) ? v : -v;
  return t;
}

// Loss sum(w * op(a)) with random weights w, so every output entry matters.
double unary_check(Var (*op)(Var), Tensor a, Rng& rng) {
  Tape probe(false);
  Tensor w = normal_tensor(op(probe.constant(a)).value().shape(), rng);
  return max_grad_rel_error(
      [op](Tape&, const std::vector<Var>& v) { return ad::sum(ad::mul(v[1], op(v[0]))); }, {a, w});
}

double binary_check(Var (*op)(Var, Var), Tensor a, Tensor b, Rng& rng) {
  Tensor w = normal_tensor(a.shape(), rng);
  return max_grad_rel_error(
      [op](Tape&, const std::vector<Var>& v) { return ad::sum(ad::mul(v[2], op(v[0], v[1]))); },
      {a, b, w});
}

Var leaky(Var a) { return ad::leaky_relu(a, 0.2); }
Var scaled(Var a) { return ad::scale(a, -1.7); }
Var shifted(Var a) { return ad::add_scalar(a, 0.3); }
Var flipped(Var a) { return ad::rsub_scalar(2.0, a); }
Var rowsum_sq(Var a) { return ad::square(ad::row_sum(a)); }

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.sum(), 21.0);
  EXPECT_EQ(m.squared_norm(), 91.0);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(m.item(), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, SliceAndGather) {
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(m.slice_rows(1, 2), Tensor::matrix({{3, 4}, {5, 6}}));
  const std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(m.gather_rows(idx), Tensor::matrix({{5, 6}, {1, 2}}));
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(m.gather_rows(bad), ShapeError);
  EXPECT_THROW(m.slice_rows(2, 2), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t = Tensor::vector({1.0, 2.0});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Autodiff, PowerRuleExample) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  tape.backward(ad::square(x));
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 6.0);
}

TEST(Autodiff, ClampPassesGradientOnlyInside) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-3.0, 0.5, 4.0}));
  Var y = ad::clamp(x, -1.0, 2.0);
  EXPECT_EQ(y.value(), Tensor::vector({-1.0, 0.5, 2.0}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(tape.grad(x), Tensor::vector({0.0, 1.0, 0.0}));
}

TEST(Autodiff, SwishSlopeAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.0));
  Var y = ad::swish(x);
  EXPECT_EQ(y.value().item(), 0.0);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 0.5);
}

TEST(Autodiff, SwishMonotoneForPositiveInputs) {
  Tape tape(false);
  double prev = 0.0;
  for (int i = 1; i <= 200; ++i) {
    const double v = ad::swish(tape.constant(Tensor::scalar(0.05 * i))).value().item();
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Autodiff, BackwardNeedsScalarAndConsumesTape) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(x), ShapeError);
  Var s = ad::sum(x);
  tape.backward(s);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(s), std::logic_error);
}

TEST(Autodiff, MixingTapesIsRejected) {
  Tape a, b;
  Var x = a.leaf(Tensor::scalar(1.0));
  Var y = b.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(ad::add(x, y), std::logic_error);
}

TEST(Autodiff, ShapeMismatchIsRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  Var y = tape.leaf(Tensor::vector({1.0, 2.0, 3.0}));
  EXPECT_THROW(ad::add(x, y), ShapeError);
  EXPECT_THROW(ad::matmul(x, y), ShapeError);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(2.0));
  Var c = tape.constant(Tensor::scalar(5.0));
  tape.backward(ad::mul(x, c));
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 5.0);
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_EQ(tape.grad(c).item(), 0.0);
}

TEST(Autodiff, ElementwiseDispatchValidatesArity) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(2.0));
  EXPECT_THROW(ad::elementwise(ad::OpKind::Add, x), std::invalid_argument);
  EXPECT_THROW(ad::elementwise(ad::OpKind::Exp, x, x), std::invalid_argument);
  EXPECT_DOUBLE_EQ(ad::elementwise(ad::OpKind::Mul, x, x).value().item(), 4.0);
}

TEST(AutodiffProperty, UnaryOpsMatchFiniteDifferences) {
  struct Case {
    const char* name;
    Var (*op)(Var);
    bool positive;
  };
  const Case cases[] = {
      {"neg", ad::neg, false},         {"exp", ad::exp, false},       {"log", ad::log, true},
      {"square", ad::square, false},   {"sqrt", ad::sqrt, true},      {"abs", ad::abs, false},
      {"sigmoid", ad::sigmoid, false}, {"swish", ad::swish, false},   {"relu", ad::relu, false},
      {"leaky", leaky, false},         {"scale", scaled, false},      {"shift", shifted, false},
      {"rsub", flipped, false},        {"row_sum", rowsum_sq, false},
  };
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(derive_seed(seed, 1));
      Tensor a = c.positive ? uniform_tensor({3, 4}, 0.2, 2.0, rng) : away_from_zero({3, 4}, rng);
      worst = std::max(worst, unary_check(c.op, a, rng));
    }
    EXPECT_LT(worst, kTol) << c.name;
  }
}

TEST(AutodiffProperty, BinaryOpsMatchFiniteDifferences) {
  struct Case {
    const char* name;
    Var (*op)(Var, Var);
  };
  const Case cases[] = {{"add", ad::add}, {"sub", ad::sub}, {"mul", ad::mul}, {"div", ad::div}};
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(derive_seed(seed, 2));
      Tensor a = normal_tensor({3, 4}, rng);
      Tensor b = away_from_zero({3, 4}, rng);
      worst = std::max(worst, binary_check(c.op, a, b, rng));
    }
    EXPECT_LT(worst, kTol) << c.name;
  }
}

TEST(AutodiffProperty, MatmulLinearAndReductions) {
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(derive_seed(seed, 3));
    Tensor a = normal_tensor({3, 4}, rng);
    Tensor b = normal_tensor({4, 2}, rng);
    Tensor w = normal_tensor({5, 4}, rng);
    Tensor bias = normal_tensor({5}, rng);
    Tensor r = normal_tensor({3, 2}, rng);
    worst = std::max(worst, max_grad_rel_error(
                                [](Tape&, const std::vector<Var>& v) {
                                  return ad::sum(ad::mul(v[2], ad::matmul(v[0], v[1])));
                                },
                                {a, b, r}));
    worst = std::max(worst, max_grad_rel_error(
                                [](Tape&, const std::vector<Var>& v) {
                                  return ad::mean(ad::square(ad::linear(v[0], v[1], v[2])));
                                },
                                {a, w, bias}));
  }
  EXPECT_LT(worst, kTol);
}

TEST(AutodiffProperty, TwoLayerMlpMatchesFiniteDifferences) {
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(derive_seed(seed, 4));
    Tensor x = normal_tensor({4, 3}, rng);
    Tensor w1 = normal_tensor({5, 3}, rng);
    Tensor b1 = normal_tensor({5}, rng);
    Tensor w2 = normal_tensor({2, 5}, rng);
    Tensor y = normal_tensor({4, 2}, rng);
    worst = std::max(worst, max_grad_rel_error(
                                [](Tape&, const std::vector<Var>& v) {
                                  Var h = ad::swish(ad::linear(v[0], v[1], v[2]));
                                  Var out = ad::linear(h, v[3]);
                                  return ad::mean(ad::square(ad::sub(out, v[4])));
                                },
                                {x, w1, b1, w2, y}));
  }
  EXPECT_LT(worst, kTol);
}

TEST(AutodiffProperty, GradientIsLinearInTheLoss) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, 5));
    const Tensor x0 = normal_tensor({6}, rng);
    auto f1 = [](Var x) { return ad::sum(ad::sigmoid(x)); };
    auto f2 = [](Var x) { return ad::sum(ad::mul(x, ad::exp(ad::scale(x, 0.3)))); };

    Tape t1;
    Var a = t1.leaf(x0);
    t1.backward(f1(a));
    Tape t2;
    Var b = t2.leaf(x0);
    t2.backward(f2(b));
    Tape t3;
    Var c = t3.leaf(x0);
    t3.backward(ad::add(f1(c), f2(c)));

    const Tensor g1 = t1.grad(a), g2 = t2.grad(b), g3 = t3.grad(c);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(g3[i], g1[i] + g2[i], 1e-14);
  }
}

TEST(AutodiffProperty, TapeFreeReplayIsBitwiseIdentical) {
  Rng rng(7);
  const Tensor x = normal_tensor({8, 5}, rng);
  const Tensor w = normal_tensor({3, 5}, rng);
  auto run = [&] {
    Tape tape(false);
    return ad::swish(ad::linear(tape.constant(x), tape.constant(w))).value();
  };
  EXPECT_EQ(run(), run());
}

#ifndef NDEBUG
TEST(Autodiff, NonFiniteValuesAreCaughtInDebugBuilds) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(-1.0));
  EXPECT_THROW(ad::log(x), NonFiniteError);
}
#endif
