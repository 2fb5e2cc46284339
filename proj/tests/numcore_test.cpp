#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "orchestra/encoder.hpp"
#include "orchestra/errors.hpp"
#include "orchestra/losses.hpp"
#include "orchestra/matrix.hpp"
#include "orchestra/rng.hpp"
#include "orchestra_cli/commands.hpp"

namespace orchestra {
namespace {

using testing::random_matrix;
using testing::small_encoder;

EncoderParams single_layer(DenseMatrix w, std::vector<double> b) {
  EncoderParams p;
  const std::size_t out = w.rows();
  p.layers.push_back(DenseLayer{std::move(w), std::move(b)});
  p.rot_head = DenseMatrix(out, kNumRotations);
  return p;
}

TEST(Matrix, MatmulVariantsAgree) {
  Rng rng(1);
  const DenseMatrix a = random_matrix(3, 4, rng);
  const DenseMatrix b = random_matrix(4, 5, rng);
  const DenseMatrix ab = matmul(a, b);
  const DenseMatrix via_bt = matmul_bt(a, b.transposed());
  const DenseMatrix via_at = matmul_at(a.transposed(), b);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    EXPECT_NEAR(ab.data()[i], via_bt.data()[i], 1e-12);
    EXPECT_NEAR(ab.data()[i], via_at.data()[i], 1e-12);
  }
  double manual = 0.0;
  for (std::size_t k = 0; k < 4; ++k) manual += a(1, k) * b(k, 2);
  EXPECT_NEAR(ab(1, 2), manual, 1e-12);
}

TEST(Matrix, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), ShapeError);
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>(3)), ShapeError);
}

TEST(Matrix, NormalizeRowsZeroRowBecomesFirstBasis) {
  DenseMatrix m(2, 3, std::vector<double>{0, 0, 0, 3, 0, 4});
  normalize_rows(m);
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_NEAR(m(1, 0), 0.6, 1e-15);
  EXPECT_NEAR(m(1, 2), 0.8, 1e-15);
}

TEST(Matrix, SoftmaxRowsSumToOne) {
  Rng rng(2);
  const DenseMatrix p = softmax_rows(random_matrix(4, 6, rng, 50.0), 0.1);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(Rng, StreamsAreReproducibleAndIndependent) {
  Rng a = Rng::stream(7, StreamTag::kClient, 3, 4);
  Rng b = Rng::stream(7, StreamTag::kClient, 3, 4);
  Rng c = Rng::stream(7, StreamTag::kClient, 3, 5);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, SplitDoesNotAdvanceParent) {
  Rng a(11);
  Rng b(11);
  (void)a.split(3).next_u64();
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, NormalMoments) {
  Rng rng(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng rng(9);
  auto ids = rng.sample_without_replacement(20, 20);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], i);
}

TEST(Forward, IdentityLayerNormalizes) {
  const EncoderParams p = single_layer(DenseMatrix::identity(2), {0.0, 0.0});
  const DenseMatrix out = forward(p, DenseMatrix(1, 2, std::vector<double>{3, 4}));
  EXPECT_NEAR(out(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.8, 1e-15);
}

TEST(Forward, ZeroBatchGivesNormalizedBias) {
  const EncoderParams p = single_layer(DenseMatrix(3, 2, 1.0), {1.0, -2.0, 2.0});
  const DenseMatrix out = forward(p, DenseMatrix(4, 2));
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_NEAR(out(r, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(out(r, 1), -2.0 / 3.0, 1e-15);
    EXPECT_NEAR(out(r, 2), 2.0 / 3.0, 1e-15);
  }
}

TEST(Forward, RandomNetRowsHaveUnitNorm) {
  Rng rng(3);
  EncoderShape shape{.input_dim = 8, .hidden = {16, 16}, .rep_dim = 4};
  const EncoderParams p = init_encoder(shape, rng);
  const DenseMatrix out = forward(p, random_matrix(30, 8, rng));
  for (std::size_t r = 0; r < out.rows(); ++r) EXPECT_NEAR(norm2(out.row(r)), 1.0, 1e-12);
}

TEST(Forward, DimensionMismatchThrows) {
  Rng rng(3);
  const EncoderParams p = small_encoder(rng);
  EXPECT_THROW(forward(p, DenseMatrix(2, 7)), ShapeError);
}

TEST(Forward, DefaultArchitecture) {
  Rng rng(0);
  const EncoderParams p = init_encoder(EncoderShape{}, rng);
  ASSERT_EQ(p.layers.size(), 3u);
  EXPECT_EQ(p.input_dim(), 16u);
  EXPECT_EQ(p.layers[0].weight.rows(), 64u);
  EXPECT_EQ(p.layers[1].weight.rows(), 64u);
  EXPECT_EQ(p.rep_dim(), 16u);
  EXPECT_EQ(p.rot_head.rows(), 16u);
  EXPECT_EQ(p.rot_head.cols(), 4u);
}

TEST(Forward, DegenerateRowHasZeroGradient) {
  // zero input + zero bias: pre-normalization output is exactly zero
  const EncoderParams p = single_layer(DenseMatrix::identity(2), {0.0, 0.0});
  const ForwardCache cache = forward_cached(p, DenseMatrix(1, 2));
  EXPECT_EQ(cache.reps(0, 0), 1.0);
  EXPECT_EQ(cache.reps(0, 1), 0.0);
  Gradients g = Gradients::zeros_like(p);
  backward(p, cache, DenseMatrix(1, 2, 1.0), g);
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(Gradients, SquaredErrorAtOwnOutputIsZero) {
  Rng rng(4);
  const EncoderParams p = small_encoder(rng);
  const DenseMatrix x = random_matrix(5, 6, rng);
  const auto lg = compute_loss_and_grads(p, SquaredErrorLoss{x, forward(p, x)});
  EXPECT_NEAR(lg.loss, 0.0, 1e-15);
  EXPECT_NEAR(lg.grads.max_abs(), 0.0, 1e-15);
}

TEST(Gradients, RotationHeadUniformLogitsGiveLog4) {
  Rng rng(4);
  EncoderParams p = small_encoder(rng);
  p.rot_head = DenseMatrix(p.rep_dim(), 4);
  const DenseMatrix x = random_matrix(6, 6, rng);
  const auto lg = compute_loss_and_grads(p, DegeneracyLoss{x, {0, 1, 2, 3, 0, 1}});
  EXPECT_NEAR(lg.loss, std::log(4.0), 1e-12);
}

class FiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(FiniteDifference, AnalyticMatchesCentralDifference) {
  Rng rng(100 + GetParam());
  const EncoderParams p = small_encoder(rng);
  ASSERT_LE(p.num_params(), 200u);
  const std::size_t n = 6;
  const DenseMatrix x = random_matrix(n, 6, rng);
  const DenseMatrix xa = random_matrix(n, 6, rng);
  const Centroids cents = Centroids::from_rows(random_matrix(3, 5, rng));
  DenseMatrix targets = random_matrix(n, 5, rng);
  std::vector<LossSpec> specs;
  specs.emplace_back(SquaredErrorLoss{x, targets});
  specs.emplace_back(ClusterLoss{xa, assignment_probs(forward(p, x), cents, 0.2), cents, 0.2});
  specs.emplace_back(DegeneracyLoss{x, {0, 1, 2, 3, 2, 1}});
  specs.emplace_back(SpecLoss{x, xa});
  for (const auto& spec : specs) {
    const auto lg = compute_loss_and_grads(p, spec);
    EXPECT_NEAR(lg.loss, evaluate_loss(p, spec), 1e-12) << loss_name(spec);
    const Gradients fd =
        finite_diff_grads(p, [&](const EncoderParams& q) { return evaluate_loss(q, spec); }, 1e-5);
    EXPECT_LT(cli::max_relative_error(lg.grads, fd), 1e-4) << loss_name(spec);
  }
}

INSTANTIATE_TEST_SUITE_P(Draws, FiniteDifference, ::testing::Range(0, 5));

TEST(FiniteDiff, QuadraticAtThree) {
  EncoderParams p = single_layer(DenseMatrix(1, 1, 3.0), {0.0});
  const Gradients g = finite_diff_grads(
      p, [](const EncoderParams& q) { return q.layers[0].weight(0, 0) * q.layers[0].weight(0, 0); },
      1e-5);
  EXPECT_NEAR(g.layers[0].weight(0, 0), 6.0, 1e-6);
  EXPECT_EQ(g.layers[0].bias[0], 0.0);
}

TEST(FiniteDiff, ConstantLossZeroGrads) {
  Rng rng(6);
  const EncoderParams p = small_encoder(rng);
  const Gradients g = finite_diff_grads(p, [](const EncoderParams&) { return 2.5; }, 1e-5);
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(FiniteDiff, RejectsNonPositiveEps) {
  Rng rng(6);
  const EncoderParams p = small_encoder(rng);
  EXPECT_THROW(finite_diff_grads(p, [](const EncoderParams&) { return 0.0; }, 0.0), ConfigError);
}

TEST(SgdStep, ZeroLrIsIdentity) {
  Rng rng(7);
  const EncoderParams p = small_encoder(rng);
  Gradients g = Gradients::zeros_like(p);
  g.layers[0].weight(0, 0) = 5.0;
  EXPECT_EQ(sgd_step(p, g, 0.0), p);
}

TEST(SgdStep, Arithmetic) {
  EncoderParams p = single_layer(DenseMatrix(1, 1, 1.0), {0.0});
  Gradients g = Gradients::zeros_like(p);
  g.layers[0].weight(0, 0) = 0.5;
  EXPECT_NEAR(sgd_step(p, g, 0.1).layers[0].weight(0, 0), 0.95, 1e-15);
}

TEST(SgdStep, TwoStepsEqualSummedStep) {
  Rng rng(8);
  const EncoderParams p = small_encoder(rng);
  Gradients g1 = Gradients::zeros_like(p);
  Gradients g2 = Gradients::zeros_like(p);
  for (std::size_t i = 0; i < g1.layers[0].weight.size(); ++i) {
    g1.layers[0].weight.data()[i] = rng.normal();
    g2.layers[0].weight.data()[i] = rng.normal();
  }
  const EncoderParams two = sgd_step(sgd_step(p, g1, 0.1), g2, 0.1);
  Gradients sum = g1;
  sum += g2;
  const EncoderParams one = sgd_step(p, sum, 0.1);
  const auto a = flatten(two);
  const auto b = flatten(one);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Ema, Endpoints) {
  Rng rng(9);
  const EncoderParams t = small_encoder(rng);
  const EncoderParams o = small_encoder(rng);
  EXPECT_EQ(ema_update(t, o, 1.0), t);
  EXPECT_EQ(ema_update(t, o, 0.0), o);
  EXPECT_THROW(ema_update(t, o, 1.5), ConfigError);
  EXPECT_THROW(ema_update(t, o, -0.1), ConfigError);
}

TEST(Ema, GeometricDecay) {
  Rng rng(10);
  EncoderParams t = small_encoder(rng);
  const EncoderParams o = small_encoder(rng);
  auto gap = [&](const EncoderParams& a) {
    const auto x = flatten(a);
    const auto y = flatten(o);
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
  };
  const double before = gap(t);
  for (int i = 0; i < 100; ++i) t = ema_update(t, o, 0.9);
  EXPECT_NEAR(gap(t) / before, std::pow(0.9, 100), 1e-9);
  EXPECT_NEAR(std::pow(0.9, 100), 2.65e-5, 1e-7);
}

}  // namespace
}  // namespace orchestra
