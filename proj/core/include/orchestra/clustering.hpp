#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "orchestra/matrix.hpp"

namespace orchestra {

/// Unit-norm cluster centers stored column-wise (D x G).
class Centroids {
 public:
  Centroids() = default;
  /// Throws NumericalError if any column is not unit norm within 1e-10.
  explicit Centroids(DenseMatrix columns);
  /// Builds from G x D rows (normalizing them first).
  static Centroids from_rows(const DenseMatrix& rows);

  const DenseMatrix& matrix() const noexcept { return columns_; }
  std::size_t count() const noexcept { return columns_.cols(); }
  std::size_t dim() const noexcept { return columns_.rows(); }
  /// G x D copy, one centroid per row.
  DenseMatrix as_rows() const { return columns_.transposed(); }

 private:
  DenseMatrix columns_;
};

struct SinkhornConfig {
  double epsilon = 0.05;
  std::size_t outer_iters = 10;
  std::size_t inner_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::size_t restarts = 4;  // seeded inits; lowest hard within-cluster cost wins
};

/// Hard labels with sizes in {floor(n/G), ceil(n/G)} plus the soft plan
/// (rows sum to 1/n, columns to 1/G).
struct BalancedAssignment {
  std::vector<std::size_t> assignment;
  DenseMatrix plan;
};

struct ClusteringResult {
  Centroids centroids;
  BalancedAssignment assignment;
  /// Entropic objective <P, C> + eps * sum P log P after each plan solve.
  std::vector<double> objective_trace;
  /// Max row-marginal error of the final plan (columns are exact). Below
  /// tol unless the problem is so ill-conditioned that the iteration budget
  /// ran out; the hard labels stay exactly balanced either way.
  double marginal_residual = 0.0;
};

/// Equal-size clustering of unit-norm rows: alternates an entropic optimal
/// transport plan (cost 1 - cosine, uniform marginals) with plan-weighted
/// centroid updates, then rounds the final plan to a balanced hard labeling.
ClusteringResult sinkhorn_balanced(const DenseMatrix& points, std::size_t num_clusters,
                                   const SinkhornConfig& cfg);

/// Balanced labeling of points against fixed centroids (one plan solve +
/// capacity-respecting rounding).
BalancedAssignment balanced_assign(const DenseMatrix& points, const Centroids& centroids,
                                   const SinkhornConfig& cfg);

/// Greedy rounding of a transport plan: cells in decreasing mass, ties by
/// (point, cluster); exactly n mod G clusters receive ceil(n/G) points.
std::vector<std::size_t> round_plan(const DenseMatrix& plan);

/// argmax_g of point . centroid_g, ties to the lowest index.
std::vector<std::size_t> nearest_centroid(const DenseMatrix& points, const Centroids& centroids);

std::vector<std::size_t> cluster_sizes(std::span<const std::size_t> assignment,
                                       std::size_t num_clusters);

/// sum over points of 1 - point . mean_dir(cluster), where mean_dir is the
/// normalized mean of the cluster's members.
double within_cluster_cost(const DenseMatrix& points, std::span<const std::size_t> assignment,
                           std::size_t num_clusters);

/// Largest similarity between a centroid and any point assigned elsewhere.
/// Empty when no such pair exists (single cluster).
std::optional<double> inter_cluster_mixing(const Centroids& centroids, const DenseMatrix& points,
                                           std::span<const std::size_t> assignment);

/// Maximum-weight perfect matching on a square matrix (Hungarian method).
/// Returns match[row] = column.
std::vector<std::size_t> max_weight_matching(const DenseMatrix& weights);

/// Fraction of samples on which two labelings agree after the best
/// one-to-one relabeling of clusters.
double consistency_fraction(std::span<const std::size_t> ideal,
                            std::span<const std::size_t> federated, std::size_t num_clusters);

struct BoundInputs {
  double delta = 0.0;
  double c = 1.0;
  std::size_t G = 2;
  std::size_t N = 3;
  double zeta = 0.0;
};

/// Linear-probe error bound when all representations are clustered at one
/// place into equal-size clusters with mixing delta. Negative delta is
/// clamped to 0.
double idealized_bound(const BoundInputs& in);

/// Same bound when only a fraction c of samples keep their idealized
/// assignment under two-level clustering.
double two_level_bound(const BoundInputs& in);

struct TwoLevelResult {
  Centroids global;
  std::vector<Centroids> local;
};

/// Clusters each client's representations into its own L, then clusters the
/// client-ordered concatenation of local centroids into G global ones.
TwoLevelResult two_level_cluster(std::span<const DenseMatrix> local_reps,
                                 std::span<const std::size_t> local_clusters,
                                 std::size_t num_global, const SinkhornConfig& cfg,
                                 std::size_t threads = 1);

/// Minimum occupancy of any of L equal-size clusters over N_k samples.
std::size_t kanonymity_level(std::size_t shard_size, std::size_t local_clusters);

/// True when G is large enough (G > 4M + 2) for the idealized bound to apply.
bool enough_clusters_for_bound(std::size_t num_clusters, std::size_t num_classes);

}  // namespace orchestra
