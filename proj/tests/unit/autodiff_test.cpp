#include "proin/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fd_oracle.hpp"

namespace proin::ad {
namespace {

using testing::central_difference;
using testing::max_relative_error;
using testing::random_matrix;

using UnaryOp = std::function<Var(const Var&)>;

// Projects op(x) onto a fixed random matrix so the scalar loss exercises
// every output entry with a distinct weight.
void expect_vjp_matches(const UnaryOp& op, const Matrix& x, unsigned seed, double tol = 1e-6) {
  Tape probe_tape;
  const Matrix out_shape = op(probe_tape.constant(x)).value();
  const Matrix weights = random_matrix(out_shape.rows(), out_shape.cols(), seed);

  Tape tape;
  Var xv = tape.variable(x);
  Var loss = sum(mul(op(xv), tape.constant(weights)));
  tape.backward(loss);
  const Matrix analytic = tape.grad(xv);

  auto f = [&](const Matrix& m) {
    Tape t;
    return sum(mul(op(t.constant(m)), t.constant(weights))).value()(0, 0);
  };
  const Matrix numeric = central_difference(f, x);
  EXPECT_LT(max_relative_error(analytic, numeric), tol) << "analytic\n" << analytic << "\nnumeric\n" << numeric;
}

TEST(Affine, IdentityWeightsPassThrough) {
  Tape t;
  Matrix x(1, 2);
  x << 1, 2;
  Var y = add_row(matmul(t.constant(x), t.constant(Matrix::Identity(2, 2))), t.constant(Matrix::Zero(1, 2)));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y.value()(0, 1), 2.0);
}

TEST(Affine, DiagonalWeightsAndBias) {
  Tape t;
  Matrix x(1, 2), w(2, 2), b(1, 2);
  x << 1, 0;
  w << 2, 0, 0, 3;
  b << 1, 1;
  Var y = add_row(matmul(t.constant(x), t.constant(w)), t.constant(b));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(y.value()(0, 1), 1.0);
}

TEST(Affine, GradientOfSumMatchesFiniteDifferences) {
  const Matrix x = random_matrix(3, 4, 1);
  const Matrix w = random_matrix(4, 5, 2);
  const Matrix b = random_matrix(1, 5, 3);
  Tape t;
  Var wv = t.variable(w);
  Var loss = sum(add_row(matmul(t.constant(x), wv), t.constant(b)));
  t.backward(loss);
  auto f = [&](const Matrix& wm) { return ((x * wm).rowwise() + b.row(0)).sum(); };
  EXPECT_LT(max_relative_error(t.grad(wv), central_difference(f, w)), 1e-6);
}

TEST(Affine, ShapeMismatchIsRejectedWithShapes) {
  Tape t;
  try {
    matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[2 x 3]"), std::string::npos);
  }
}

TEST(SmoothL1, PiecewiseValues) {
  Tape t;
  Matrix x(1, 4);
  x << 0.0, 0.5, 2.0, -2.0;
  const Matrix y = smooth_l1(t.constant(x)).value();
  EXPECT_DOUBLE_EQ(y(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.125);
  EXPECT_DOUBLE_EQ(y(0, 2), 1.5);
  EXPECT_DOUBLE_EQ(y(0, 3), 1.5);
}

TEST(SetSoftmax, EqualMembersSplitEvenly) {
  Tape t;
  Matrix x = Matrix::Constant(2, 3, 0.7);
  const std::vector<int> seg = {0, 0};
  const Matrix y = segment_softmax(t.constant(x), seg, 1).value();
  EXPECT_TRUE(y.isApprox(Matrix::Constant(2, 3, 0.5)));
}

TEST(SetSoftmax, SingleMemberGetsAllWeight) {
  Tape t;
  const std::vector<int> seg = {0};
  const Matrix y = segment_softmax(t.constant(random_matrix(1, 4, 5)), seg, 1).value();
  EXPECT_TRUE(y.isApprox(Matrix::Ones(1, 4)));
}

TEST(SetSoftmax, TwoMembersMatchClosedForm) {
  Tape t;
  Matrix x(2, 1);
  x << 2.0, 1.0;
  const std::vector<int> seg = {0, 0};
  const Matrix y = segment_softmax(t.constant(x), seg, 1).value();
  // e^2 / (e^2 + e) and e / (e^2 + e)
  EXPECT_NEAR(y(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(y(1, 0), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(y(0, 0), 0.7311, 5e-5);
}

TEST(SetSoftmax, ChannelsSumToOnePerSegment) {
  Tape t;
  const Matrix x = random_matrix(9, 5, 8, 30.0);
  const std::vector<int> seg = {0, 2, 2, 0, 1, 2, 0, 0, 2};
  const Matrix y = segment_softmax(t.constant(x), seg, 4).value();
  Matrix sums = Matrix::Zero(4, 5);
  for (int r = 0; r < 9; ++r) sums.row(seg[r]) += y.row(r);
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(sums(s, c), 1.0, 1e-9);
  EXPECT_TRUE(sums.row(3).isZero());
}

TEST(RecurrentStep, ZeroWeightsGiveZeroHidden) {
  Tape t;
  const int h = 4;
  RecurrentState s{t.constant(Matrix::Zero(2, h)), t.constant(Matrix::Zero(2, h))};
  auto next = recurrent_step(t.constant(random_matrix(2, 3, 3)), s, t.constant(Matrix::Zero(3, 4 * h)),
                             t.constant(Matrix::Zero(h, 4 * h)), t.constant(Matrix::Zero(1, 4 * h)));
  EXPECT_TRUE(next.hidden.value().isZero());
}

TEST(RecurrentStep, SaturatedForgetGateKeepsCell) {
  Tape t;
  const int h = 3;
  Matrix bias = Matrix::Zero(1, 4 * h);
  bias.middleCols(0, h).setConstant(-1e3);  // input gate -> 0
  bias.middleCols(h, h).setConstant(1e3);   // forget gate -> 1
  const Matrix cell = random_matrix(2, h, 11);
  RecurrentState s{t.constant(random_matrix(2, h, 12)), t.constant(cell)};
  auto next = recurrent_step(t.constant(random_matrix(2, 5, 13)), s, t.constant(random_matrix(5, 4 * h, 14)),
                             t.constant(random_matrix(h, 4 * h, 15)), t.constant(bias));
  EXPECT_TRUE(next.cell.value().isApprox(cell, 1e-12));
}

TEST(RecurrentStep, FiveUnrolledStepsMatchFiniteDifferences) {
  const int h = 4, in = 3, n = 2, steps = 5;
  const Matrix wx = random_matrix(in, 4 * h, 21, 0.5);
  const Matrix wh = random_matrix(h, 4 * h, 22, 0.5);
  const Matrix b = random_matrix(1, 4 * h, 23, 0.5);
  std::vector<Matrix> xs;
  for (int s = 0; s < steps; ++s) xs.push_back(random_matrix(n, in, 30 + s));
  const Matrix proj = random_matrix(n, h, 40);

  auto run = [&](Tape& t, const Var& wxv, const Var& whv, const Var& bv) {
    RecurrentState st{t.constant(Matrix::Zero(n, h)), t.constant(Matrix::Zero(n, h))};
    for (const auto& x : xs) st = recurrent_step(t.constant(x), st, wxv, whv, bv);
    return sum(mul(st.hidden, t.constant(proj)));
  };

  Tape t;
  Var wxv = t.variable(wx), whv = t.variable(wh), bv = t.variable(b);
  t.backward(run(t, wxv, whv, bv));

  auto f_wx = [&](const Matrix& m) {
    Tape tt;
    return run(tt, tt.constant(m), tt.constant(wh), tt.constant(b)).value()(0, 0);
  };
  auto f_wh = [&](const Matrix& m) {
    Tape tt;
    return run(tt, tt.constant(wx), tt.constant(m), tt.constant(b)).value()(0, 0);
  };
  auto f_b = [&](const Matrix& m) {
    Tape tt;
    return run(tt, tt.constant(wx), tt.constant(wh), tt.constant(m)).value()(0, 0);
  };
  EXPECT_LT(max_relative_error(t.grad(wxv), central_difference(f_wx, wx)), 1e-5);
  EXPECT_LT(max_relative_error(t.grad(whv), central_difference(f_wh, wh)), 1e-5);
  EXPECT_LT(max_relative_error(t.grad(bv), central_difference(f_b, b)), 1e-5);
}

TEST(ValueAndGrad, SquareAtThree) {
  ParamStore p;
  p.add("x", Matrix::Constant(1, 1, 3.0));
  const double v = value_and_grad([&](Tape& t) { return square(t.param(p, "x")); }, p);
  EXPECT_DOUBLE_EQ(v, 9.0);
  EXPECT_DOUBLE_EQ(p.grad("x")(0, 0), 6.0);
}

TEST(ValueAndGrad, ConstantLossGivesZeroGradients) {
  ParamStore p;
  p.add("a", random_matrix(2, 2, 1));
  p.add("b", random_matrix(3, 1, 2));
  p.grad("a").setConstant(5.0);
  const double v = value_and_grad([&](Tape& t) { return t.scalar(4.0); }, p);
  EXPECT_DOUBLE_EQ(v, 4.0);
  EXPECT_TRUE(p.grad("a").isZero());
  EXPECT_TRUE(p.grad("b").isZero());
}

TEST(ValueAndGrad, UntouchedParameterStaysZero) {
  ParamStore p;
  p.add("used", random_matrix(1, 3, 1));
  p.add("unused", random_matrix(1, 3, 2));
  value_and_grad([&](Tape& t) { return sum(square(t.param(p, "used"))); }, p);
  EXPECT_FALSE(p.grad("used").isZero());
  EXPECT_TRUE(p.grad("unused").isZero());
}

TEST(ValueAndGrad, NonScalarLossIsRejected) {
  ParamStore p;
  p.add("w", random_matrix(2, 2, 1));
  EXPECT_THROW(value_and_grad([&](Tape& t) { return t.param(p, "w"); }, p), std::invalid_argument);
}

TEST(ValueAndGrad, EvaluationIsBitIdentical) {
  ParamStore p;
  p.add("w", random_matrix(6, 6, 4));
  auto loss = [&](Tape& t) {
    Var w = t.param(p, "w");
    return sum(tanh(matmul(w, sigmoid(w))));
  };
  const double a = value_and_grad(loss, p);
  const Matrix ga = p.grad("w");
  const double b = value_and_grad(loss, p);
  EXPECT_EQ(a, b);
  EXPECT_TRUE((ga.array() == p.grad("w").array()).all());
}

// Every primitive's vector-Jacobian product against central differences.
TEST(PrimitiveVjp, ElementwiseAndShapeOps) {
  const Matrix x = random_matrix(4, 6, 101, 2.0);
  const std::vector<int> idx = {3, 0, 0, 2, 1};
  const std::vector<int> seg = {0, 1, 1, 0};
  Matrix shifted = x;
  // Keep relu/smooth-l1 kinks away from the probe points.
  for (Eigen::Index i = 0; i < shifted.size(); ++i) {
    double& v = shifted.data()[i];
    if (std::abs(v) < 0.05) v += 0.1;
    if (std::abs(std::abs(v) - 1.0) < 0.05) v += 0.1;
  }
  expect_vjp_matches([](const Var& v) { return relu(v); }, shifted, 1);
  expect_vjp_matches([](const Var& v) { return tanh(v); }, x, 2);
  expect_vjp_matches([](const Var& v) { return sigmoid(v); }, x, 3);
  expect_vjp_matches([](const Var& v) { return square(v); }, x, 4);
  expect_vjp_matches([](const Var& v) { return smooth_l1(v); }, shifted, 5);
  expect_vjp_matches([](const Var& v) { return scale(v, -1.7); }, x, 6);
  expect_vjp_matches([](const Var& v) { return add_scalar(v, 0.3); }, x, 7);
  expect_vjp_matches([](const Var& v) { return mul(v, v); }, x, 8);
  expect_vjp_matches([](const Var& v) { return sub(v, scale(v, 0.5)); }, x, 9);
  expect_vjp_matches([](const Var& v) { return matmul(v, v.tape()->constant(random_matrix(6, 3, 77))); }, x, 10);
  expect_vjp_matches([](const Var& v) { return matmul(slice_cols(v, 0, 4), v); }, x, 11);
  expect_vjp_matches([](const Var& v) { return add_row(v, slice_rows(v, 2, 1)); }, x, 12);
  expect_vjp_matches([](const Var& v) { return slice_cols(v, 1, 3); }, x, 13);
  expect_vjp_matches([](const Var& v) { return slice_rows(v, 1, 2); }, x, 14);
  expect_vjp_matches(
      [](const Var& v) {
        std::vector<Var> parts = {v, slice_cols(v, 2, 2)};
        return concat_cols(parts);
      },
      x, 15);
  expect_vjp_matches(
      [](const Var& v) {
        std::vector<Var> parts = {v, slice_rows(v, 0, 1)};
        return concat_rows(parts);
      },
      x, 16);
  expect_vjp_matches([&](const Var& v) { return gather_rows(v, idx); }, x, 17);
  expect_vjp_matches([&](const Var& v) { return scatter_add_rows(slice_rows(v, 0, 4), seg, 3); }, x, 18);
  expect_vjp_matches([&](const Var& v) { return segment_softmax(v, seg, 2); }, x, 19);
  expect_vjp_matches([](const Var& v) { return row_softmax(v); }, x, 20);
  expect_vjp_matches([](const Var& v) { return cumsum_steps(v, 2); }, x, 21);
  expect_vjp_matches([](const Var& v) { return sum(v); }, x, 22);
}

TEST(PrimitiveVjp, DetachBlocksGradient) {
  Tape t;
  Var x = t.variable(random_matrix(2, 2, 3));
  t.backward(sum(mul(x, detach(x))));
  // d/dx sum(x * stop(x)) = stop(x)
  EXPECT_TRUE(t.grad(x).isApprox(x.value()));
}

TEST(ParamStore, DuplicatePathRejected) {
  ParamStore p;
  p.add("a", Matrix::Zero(1, 1));
  EXPECT_THROW(p.add("a", Matrix::Zero(1, 1)), std::invalid_argument);
  EXPECT_THROW(p.value("missing"), std::out_of_range);
}

}  // namespace
}  // namespace proin::ad
