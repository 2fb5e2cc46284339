// Randomized invariants, each checked over many seeded instances.
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "orchestra/clustering.hpp"
#include "orchestra/datasets.hpp"
#include "orchestra/encoder.hpp"
#include "orchestra/evaluation.hpp"

namespace orchestra {
namespace {

using testing::random_matrix;
using testing::random_unit_rows;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TEST(Property, DirichletIsAPartition) {
  const Dataset ds = gen_mixture(MixtureSpec{.num_classes = 5, .input_dim = 4, .per_class = 40});
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 1 + rng.below(20);
    const double alpha = std::pow(10.0, rng.uniform(-3.0, 5.0));
    const auto shards = dirichlet_partition(ds, k, alpha, rng.next_u64(), 1);
    ASSERT_EQ(shards.size(), k);
    std::vector<int> seen(ds.size(), 0);
    for (std::size_t c = 0; c < k; ++c) {
      EXPECT_EQ(shards[c].client_id, c);
      EXPECT_GE(shards[c].sample_ids.size(), 1u);
      for (auto id : shards[c].sample_ids) ++seen[id];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Property, HeterogeneityMonotoneInAlpha) {
  const Dataset ds = gen_mixture(MixtureSpec{.num_classes = 10, .input_dim = 4, .per_class = 100});
  double prev = INFINITY;
  for (double alpha : {1e5, 1e-1, 1e-3}) {
    std::vector<double> v;
    for (std::uint64_t seed = 0; seed < 5; ++seed)
      v.push_back(avg_classes_per_client(dirichlet_partition(ds, 100, alpha, seed, 1), ds.labels, 10,
                                         ClassPresenceRule::kAtLeastOne));
    EXPECT_LE(median(v), prev);
    prev = median(v);
  }
}

TEST(Property, OneSampleRuleDominatesOnePercentRule) {
  const Dataset ds = gen_mixture(MixtureSpec{.num_classes = 6, .input_dim = 4, .per_class = 50});
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto shards = dirichlet_partition(ds, 1 + rng.below(15), rng.uniform(0.01, 10.0), rng.next_u64(), 1);
    EXPECT_GE(avg_classes_per_client(shards, ds.labels, 6, ClassPresenceRule::kAtLeastOne),
              avg_classes_per_client(shards, ds.labels, 6, ClassPresenceRule::kAtLeastOnePercent));
  }
}

TEST(Property, RotationsComposeAdditively) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 4 * (1 + rng.below(5));
    std::vector<double> x(d);
    std::iota(x.begin(), x.end(), 0.0);
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(rotate(rotate(x, a), b), rotate(x, (a + b) % 4));
    for (std::size_t a = 0; a < 4; ++a) {
      auto y = rotate(x, a);
      std::sort(y.begin(), y.end());
      EXPECT_EQ(y, x);
    }
  }
}

TEST(Property, ZeroJitterUnitScaleAugmentIsIdentity) {
  Rng rng(4);
  const DenseMatrix x = random_matrix(10, 8, rng);
  EXPECT_EQ(augment_batch(x, AugmentConfig{0.0, 1.0, 1.0}, rng), x);
}

TEST(Property, ForwardRowsUnitNorm) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    EncoderShape shape{.input_dim = 4 * (1 + rng.below(4)), .hidden = {1 + rng.below(20), 1 + rng.below(20)},
                       .rep_dim = 2 + rng.below(10)};
    const EncoderParams p = init_encoder(shape, rng);
    const DenseMatrix out = forward(p, random_matrix(12, shape.input_dim, rng, 5.0));
    for (std::size_t r = 0; r < out.rows(); ++r) EXPECT_NEAR(norm2(out.row(r)), 1.0, 1e-10);
  }
}

TEST(Property, EmaAndSgdAreElementwise) {
  Rng rng(6);
  const EncoderParams t = testing::small_encoder(rng);
  const EncoderParams o = testing::small_encoder(rng);
  const auto ft = flatten(t), fo = flatten(o);
  const auto fe = flatten(ema_update(t, o, 0.7));
  for (std::size_t i = 0; i < ft.size(); ++i) EXPECT_EQ(fe[i], 0.7 * ft[i] + (1 - 0.7) * fo[i]);
  EXPECT_EQ(ema_update(t, o, 0.7), ema_update(t, o, 0.7));
}

TEST(Property, BalancedClusteringMarginalsAndSizes) {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t g = 1 + rng.below(16);
    const std::size_t n = g + rng.below(120);
    const DenseMatrix pts = random_unit_rows(n, 2 + rng.below(8), rng);
    SinkhornConfig cfg;
    cfg.seed = rng.next_u64();
    const auto r = sinkhorn_balanced(pts, g, cfg);
    EXPECT_LT(r.marginal_residual, 1e-6);
    for (auto s : cluster_sizes(r.assignment.assignment, g)) {
      EXPECT_GE(s, n / g);
      EXPECT_LE(s, (n + g - 1) / g);
    }
  }
}

TEST(Property, ConsistencyInvariantToRelabeling) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t g = 2 + rng.below(6);
    const std::size_t n = 5 + rng.below(50);
    std::vector<std::size_t> a(n), b(n), perm(g);
    for (auto& v : a) v = rng.below(g);
    for (auto& v : b) v = rng.below(g);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<std::size_t> pa(n), pb(n);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = perm[a[i]];
      pb[i] = perm[b[i]];
    }
    const double c = consistency_fraction(a, b, g);
    EXPECT_DOUBLE_EQ(consistency_fraction(pa, b, g), c);
    EXPECT_DOUBLE_EQ(consistency_fraction(a, pb, g), c);
    EXPECT_DOUBLE_EQ(consistency_fraction(b, a, g), c);
    EXPECT_GE(c, 1.0 / static_cast<double>(g) - 1e-12);
  }
}

TEST(Property, MixingIsTheDoubleMax) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t g = 2 + rng.below(5);
    const std::size_t d = 2 + rng.below(4);
    const DenseMatrix pts = random_unit_rows(g + rng.below(30), d, rng);
    const Centroids c = Centroids::from_rows(random_unit_rows(g, d, rng));
    std::vector<std::size_t> a(pts.rows());
    for (auto& v : a) v = rng.below(g);
    double brute = -INFINITY;
    for (std::size_t i = 0; i < pts.rows(); ++i)
      for (std::size_t k = 0; k < g; ++k)
        if (a[i] != k) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += pts(i, j) * c.matrix()(j, k);
          brute = std::max(brute, s);
        }
    EXPECT_NEAR(*inter_cluster_mixing(c, pts, a), brute, 1e-14);
  }
}

TEST(Property, BoundIdentityOverGrid) {
  for (double delta : {0.0, 0.01, 0.2, 0.7, 1.0})
    for (std::size_t G : {2u, 16u, 64u})
      for (std::size_t N : {3u, 100u, 50000u})
        for (double zeta : {0.0, 0.3}) {
          BoundInputs in{.delta = delta, .c = 1.0, .G = G, .N = N, .zeta = zeta};
          const double n = static_cast<double>(N);
          EXPECT_NEAR(idealized_bound(in) - two_level_bound(in),
                      static_cast<double>(G) / (n * (n - 1.0)), 1e-12);
        }
}

TEST(Property, CollapsedEncoderTunerIsZero) {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    EncoderParams p;
    std::vector<double> bias(4, 0.0);
    bias[rng.below(4)] = 1.0 + rng.uniform();
    p.layers.push_back(DenseLayer{DenseMatrix(4, 8), bias});
    p.rot_head = DenseMatrix(4, 4);
    const std::vector<DenseMatrix> samples = {random_matrix(6, 8, rng), random_matrix(9, 8, rng)};
    EXPECT_EQ(evaluate_tuner(p, samples, AugmentConfig{}, 0.2, rng).combined, 0.0);
  }
}

}  // namespace
}  // namespace orchestra
