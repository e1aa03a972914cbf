#include "eventbind/autodiff.hpp"
#include "eventbind/nn.hpp"
#include "eventbind/rng.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace eventbind {
namespace {

using ad::Mat;
using ad::Tape;
using ad::Var;
using testing::check_gradients;
using testing::worst;

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
  return m;
}

// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
// every output entry influences the loss differently.
Var weighted_sum(Tape& t, Var x, const Mat& w) { return ad::sum(ad::mul(x, t.constant(w))); }

struct OpCase {
  const char* name;
  std::function<Var(Tape&, Var, Var)> op;  // (a, b) -> output
  int ar, ac, br, bc;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const OpCase& c = GetParam();
  Rng rng(11);
  ad::Param a(random_mat(rng, c.ar, c.ac));
  ad::Param b(random_mat(rng, c.br, c.bc));
  Mat w;
  auto loss = [&](Tape& t) {
    Var out = c.op(t, t.param(a), t.param(b));
    if (w.size() == 0) {
      Rng wr(5);
      w = random_mat(wr, static_cast<int>(out.rows()), static_cast<int>(out.cols()));
    }
    return weighted_sum(t, out, w);
  };
  const auto checks = check_gradients(loss, {{"a", &a}, {"b", &b}});
  EXPECT_LT(worst(checks), 1e-6) << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    Ops, OpGradient,
    ::testing::Values(
        OpCase{"add", [](Tape&, Var a, Var b) { return ad::add(a, b); }, 3, 4, 3, 4},
        OpCase{"sub", [](Tape&, Var a, Var b) { return ad::sub(a, b); }, 3, 4, 3, 4},
        OpCase{"mul", [](Tape&, Var a, Var b) { return ad::mul(a, b); }, 3, 4, 3, 4},
        OpCase{"matmul", [](Tape&, Var a, Var b) { return ad::matmul(a, b); }, 3, 4, 4, 2},
        OpCase{"matmul_nt", [](Tape&, Var a, Var b) { return ad::matmul_nt(a, b); }, 3, 4, 5, 4},
        OpCase{"transpose", [](Tape&, Var a, Var b) { return ad::add(ad::transpose(a), b); }, 3, 4, 4, 3},
        OpCase{"add_row", [](Tape&, Var a, Var b) { return ad::add_row(a, b); }, 3, 4, 1, 4},
        OpCase{"scale_by", [](Tape&, Var a, Var b) { return ad::scale_by(a, b); }, 3, 4, 1, 1},
        OpCase{"quick_gelu", [](Tape&, Var a, Var b) { return ad::add(ad::quick_gelu(a), b); }, 3, 4, 3, 4},
        OpCase{"exp", [](Tape&, Var a, Var b) { return ad::mul(ad::exp(a), b); }, 2, 3, 2, 3},
        OpCase{"reciprocal", [](Tape&, Var a, Var b) { return ad::reciprocal(ad::add(ad::exp(a), b)); }, 1, 1, 1, 1},
        OpCase{"clamp_inside", [](Tape&, Var a, Var b) { return ad::mul(ad::clamp(a, -100.0, 100.0), b); }, 2, 3, 2, 3},
        OpCase{"layer_norm", [](Tape&, Var a, Var b) { return ad::layer_norm(a, b, ad::scale(b, 0.5)); }, 3, 5, 1, 5},
        OpCase{"softmax", [](Tape&, Var a, Var b) { return ad::mul(ad::softmax_rows(a), b); }, 3, 4, 3, 4},
        OpCase{"softmax_causal", [](Tape&, Var a, Var b) { return ad::mul(ad::softmax_rows(a, true), b); }, 4, 4, 4, 4},
        OpCase{"logsumexp", [](Tape&, Var a, Var b) { return ad::add(ad::logsumexp_rows(a), b); }, 3, 4, 3, 1},
        OpCase{"diagonal", [](Tape&, Var a, Var b) { return ad::add(ad::diagonal(a), b); }, 3, 3, 3, 1},
        OpCase{"mean_rows", [](Tape&, Var a, Var b) { return ad::add(ad::mean_rows(a), b); }, 3, 4, 1, 4},
        OpCase{"mean_square", [](Tape&, Var a, Var b) { return ad::mean_square(ad::sub(a, b)); }, 3, 4, 3, 4},
        OpCase{"l2_normalize", [](Tape&, Var a, Var b) { return ad::add(ad::l2_normalize_rows(a), b); }, 3, 4, 3, 4},
        OpCase{"rows_cols", [](Tape&, Var a, Var b) { return ad::add(ad::cols(ad::rows(a, 1, 2), 1, 3), b); }, 4, 5, 2, 3},
        OpCase{"vconcat", [](Tape&, Var a, Var b) { return ad::vconcat({a, b, a}); }, 2, 3, 1, 3},
        OpCase{"hconcat", [](Tape&, Var a, Var b) { return ad::hconcat({b, a}); }, 2, 3, 2, 1},
        OpCase{"gather_rows", [](Tape&, Var a, Var b) { return ad::add(ad::gather_rows(a, {2, 0, 2}), b); }, 4, 3, 3, 3}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

TEST(Autodiff, SoftmaxRowsSumToOneAndCausalMaskIsZero) {
  Rng rng(3);
  Tape t(false);
  const Mat p = ad::softmax_rows(t.constant(random_mat(rng, 4, 4, 3.0)), true).value();
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    for (int j = i + 1; j < 4; ++j) EXPECT_EQ(p(i, j), 0.0);
  }
}

TEST(Autodiff, LogSumExpIsStableForLargeInputs) {
  Tape t(false);
  Mat x(1, 2);
  x << 1000.0, 1000.0;
  EXPECT_NEAR(ad::logsumexp_rows(t.constant(x)).scalar(), 1000.0 + std::log(2.0), 1e-9);
}

TEST(Autodiff, LayerNormOutputHasZeroMeanUnitVariance) {
  Rng rng(4);
  Tape t(false);
  Var x = t.constant(random_mat(rng, 3, 16, 5.0));
  const Mat y = ad::layer_norm(x, t.constant(Mat::Ones(1, 16)), t.constant(Mat::Zero(1, 16))).value();
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR((y.row(i).array() - y.row(i).mean()).square().mean(), 1.0, 1e-3);
  }
}

TEST(Autodiff, ParamBoundTwiceAccumulatesBothPaths) {
  ad::Param p(Mat::Constant(1, 1, 3.0));
  Tape t;
  Var a = t.param(p);
  Var b = t.param(p);
  t.backward(ad::mul(a, b));  // p^2 -> 2p
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 6.0);
}

TEST(Autodiff, FrozenParamReceivesNoGradient) {
  ad::Param p(Mat::Constant(1, 1, 3.0));
  p.trainable = false;
  ad::Param q(Mat::Constant(1, 1, 2.0));
  Tape t;
  t.backward(ad::mul(t.param(p), t.param(q)));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(q.grad(0, 0), 3.0);
}

TEST(Autodiff, BackwardRejectsNonScalarRootAndGradlessTape) {
  Tape t;
  Var x = t.input(Mat::Ones(2, 2));
  EXPECT_THROW(t.backward(x), std::invalid_argument);
  Tape nograd(false);
  Var y = nograd.input(Mat::Ones(1, 1));
  EXPECT_THROW(nograd.backward(y), std::logic_error);
}

TEST(Autodiff, ShapeMismatchThrows) {
  Tape t(false);
  Var a = t.constant(Mat::Ones(2, 3));
  Var b = t.constant(Mat::Ones(2, 2));
  EXPECT_THROW(ad::add(a, b), std::invalid_argument);
  EXPECT_THROW(ad::matmul(a, a), std::invalid_argument);
}

TEST(Autodiff, TransformerBlockGradient) {
  Rng rng(9);
  nn::ParamStore store;
  nn::TransformerBlock block(store, rng, "b", 8, 2);
  const Mat x0 = random_mat(rng, 5, 8);
  const Mat w = random_mat(rng, 5, 8);
  for (bool causal : {false, true}) {
    auto loss = [&](Tape& t) { return weighted_sum(t, block(t, t.constant(x0), causal), w); };
    EXPECT_LT(worst(check_gradients(loss, testing::all_params(store))), 1e-6) << "causal=" << causal;
  }
}

TEST(Autodiff, GradientDescentMinimizesRankOneFit) {
  // plain gradient descent on ||u v^T - M||^2 for a rank-1 target
  Rng rng(21);
  const Mat u0 = random_mat(rng, 6, 1), v0 = random_mat(rng, 5, 1);
  const Mat target = u0 * v0.transpose();
  ad::Param u(random_mat(rng, 6, 1, 0.5)), v(random_mat(rng, 5, 1, 0.5));
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    u.zero_grad();
    v.zero_grad();
    Tape t;
    Var l = ad::mean_square(ad::sub(ad::matmul_nt(t.param(u), t.param(v)), t.constant(target)));
    if (step == 0) first = l.scalar();
    last = l.scalar();
    t.backward(l);
    u.value -= 0.5 * u.grad;
    v.value -= 0.5 * v.grad;
  }
  EXPECT_LT(last, 1e-3 * first);
}

}  // namespace
}  // namespace eventbind
