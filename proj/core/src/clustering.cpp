#include "orchestra/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "orchestra/errors.hpp"
#include "orchestra/parallel.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

namespace {

constexpr double kUnitTol = 1e-10;
// The last plan solve may run past inner_iters to honor the marginal
// tolerance; it stops after this many multiples and keeps the best plan.
constexpr std::size_t kFinalSolveBudget = 200;

struct PlanSolve {
  DenseMatrix plan;
  double objective = 0.0;
  double residual = 0.0;  // max row-marginal error
  bool converged = false;
};

// Entropic OT between n points (mass 1/n each) and G centroids (mass 1/G
// each) with cost 1 - similarity. `v` carries the column scaling between
// calls as a warm start.
PlanSolve solve_plan(const DenseMatrix& similarity, double epsilon, std::size_t max_iters,
                     double tol, std::vector<double>& v) {
  const std::size_t n = similarity.rows();
  const std::size_t g = similarity.cols();
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(g);

  // Kernel with a per-row shift; the shift is absorbed by the row scaling.
  DenseMatrix kernel(n, g);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = similarity.row(i);
    const double best = *std::max_element(s.begin(), s.end());
    auto k = kernel.row(i);
    for (std::size_t j = 0; j < g; ++j) k[j] = std::exp((s[j] - best) / epsilon);
  }

  if (v.size() != g) v.assign(g, 1.0);
  std::vector<double> u(n, 1.0);
  std::vector<double> kv(n);
  std::vector<double> ktu(g);

  auto fail = [&](const char* where) {
    throw NumericalError(std::string("sinkhorn: ") + where +
                         " scaling underflowed or overflowed; increase epsilon (currently " +
                         std::to_string(epsilon) + ")");
  };

  PlanSolve out;
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      kv[i] = dot(kernel.row(i), v);
      if (!(kv[i] > 0.0) || !std::isfinite(kv[i])) fail("row");
      u[i] = a / kv[i];
    }
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto k = kernel.row(i);
      for (std::size_t j = 0; j < g; ++j) ktu[j] += k[j] * u[i];
    }
    for (std::size_t j = 0; j < g; ++j) {
      if (!(ktu[j] > 0.0) || !std::isfinite(ktu[j])) fail("column");
      v[j] = b / ktu[j];
    }
    // Columns are exact after the v update; rows carry the residual.
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(u[i] * dot(kernel.row(i), v) - a));
    out.residual = err;
    if (err < tol) {
      out.converged = true;
      break;
    }
  }

  out.plan = DenseMatrix(n, g);
  for (std::size_t i = 0; i < n; ++i) {
    auto k = kernel.row(i);
    auto p = out.plan.row(i);
    auto s = similarity.row(i);
    for (std::size_t j = 0; j < g; ++j) {
      p[j] = u[i] * k[j] * v[j];
      if (p[j] > 0.0) out.objective += p[j] * (1.0 - s[j]) + epsilon * p[j] * std::log(p[j]);
    }
  }
  if (!out.plan.all_finite()) fail("plan");
  return out;
}

void check_points(const DenseMatrix& points) {
  if (!points.all_finite()) throw NumericalError("clustering input contains non-finite values");
}

}  // namespace

Centroids::Centroids(DenseMatrix columns) : columns_(std::move(columns)) {
  for (std::size_t c = 0; c < columns_.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < columns_.rows(); ++r) s += columns_(r, c) * columns_(r, c);
    if (std::abs(std::sqrt(s) - 1.0) > kUnitTol)
      throw NumericalError("centroid " + std::to_string(c) + " is not unit norm");
  }
}

Centroids Centroids::from_rows(const DenseMatrix& rows) {
  DenseMatrix cols = rows.transposed();
  normalize_cols(cols);
  return Centroids(std::move(cols));
}

std::vector<std::size_t> round_plan(const DenseMatrix& plan) {
  const std::size_t n = plan.rows();
  const std::size_t g = plan.cols();
  std::vector<std::size_t> cells(n * g);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  // Row-major cell ids make (point, cluster) the tie-break for equal mass.
  std::stable_sort(cells.begin(), cells.end(), [&](std::size_t x, std::size_t y) {
    return plan.data()[x] > plan.data()[y];
  });

  const std::size_t floor_size = n / g;
  const std::size_t num_ceil = n % g;
  std::vector<std::size_t> label(n, g);
  std::vector<std::size_t> size(g, 0);
  std::size_t full = 0;
  std::size_t placed = 0;
  for (std::size_t cell : cells) {
    const std::size_t i = cell / g;
    const std::size_t j = cell % g;
    if (label[i] != g) continue;
    if (size[j] < floor_size) {
      // room below the floor
    } else if (size[j] == floor_size && full < num_ceil) {
      ++full;
    } else {
      continue;
    }
    label[i] = j;
    ++size[j];
    if (++placed == n) break;
  }
  return label;
}

namespace {
ClusteringResult sinkhorn_once(const DenseMatrix& points, std::size_t num_clusters,
                               const SinkhornConfig& cfg, std::size_t restart);
}  // namespace

ClusteringResult sinkhorn_balanced(const DenseMatrix& points, std::size_t num_clusters,
                                   const SinkhornConfig& cfg) {
  const std::size_t n = points.rows();
  if (num_clusters == 0) throw ConfigError("sinkhorn_balanced: need at least one cluster");
  if (n < num_clusters) {
    throw ConfigError("sinkhorn_balanced: " + std::to_string(n) + " points cannot fill " +
                      std::to_string(num_clusters) + " clusters");
  }
  if (!(cfg.epsilon > 0.0)) throw ConfigError("sinkhorn_balanced: epsilon must be positive");
  check_points(points);

  if (cfg.restarts == 0) throw ConfigError("sinkhorn_balanced: restarts must be >= 1");

  ClusteringResult best;
  double best_cost = INFINITY;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    ClusteringResult run = sinkhorn_once(points, num_clusters, cfg, r);
    const double cost = within_cluster_cost(points, run.assignment.assignment, num_clusters);
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best = std::move(run);
    }
  }
  return best;
}

namespace {

ClusteringResult sinkhorn_once(const DenseMatrix& points, std::size_t num_clusters,
                               const SinkhornConfig& cfg, std::size_t restart) {
  const std::size_t n = points.rows();
  Rng rng(mix64(cfg.seed ^ 0xc1057e5ULL));
  if (restart > 0) rng = rng.split(restart);
  const auto init_ids = rng.sample_without_replacement(n, num_clusters);
  DenseMatrix centroid_rows = points.select_rows(init_ids);
  normalize_rows(centroid_rows);

  ClusteringResult result;
  std::vector<double> v;
  for (std::size_t t = 0; t < cfg.outer_iters; ++t) {
    const DenseMatrix sim = matmul_bt(points, centroid_rows);
    PlanSolve solve = solve_plan(sim, cfg.epsilon, cfg.inner_iters, cfg.tol, v);
    result.objective_trace.push_back(solve.objective);
    DenseMatrix next = matmul_at(solve.plan, points);  // G x D weighted sums
    normalize_rows(next);
    centroid_rows = std::move(next);
  }

  const DenseMatrix sim = matmul_bt(points, centroid_rows);
  PlanSolve final_solve =
      solve_plan(sim, cfg.epsilon, cfg.inner_iters * kFinalSolveBudget, cfg.tol, v);
  result.objective_trace.push_back(final_solve.objective);
  result.marginal_residual = final_solve.residual;
  result.assignment.assignment = round_plan(final_solve.plan);
  result.assignment.plan = std::move(final_solve.plan);
  // reported centroids: normalized means of the hard clusters
  DenseMatrix hard(num_clusters, points.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto src = points.row(i);
    auto dst = hard.row(result.assignment.assignment[i]);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
  }
  normalize_rows(hard);
  result.centroids = Centroids(hard.transposed());
  return result;
}

}  // namespace

BalancedAssignment balanced_assign(const DenseMatrix& points, const Centroids& centroids,
                                   const SinkhornConfig& cfg) {
  if (points.rows() < centroids.count())
    throw ConfigError("balanced_assign: fewer points than clusters");
  check_points(points);
  std::vector<double> v;
  const DenseMatrix sim = matmul(points, centroids.matrix());
  PlanSolve solve =
      solve_plan(sim, cfg.epsilon, cfg.inner_iters * kFinalSolveBudget, cfg.tol, v);
  BalancedAssignment out;
  out.assignment = round_plan(solve.plan);
  out.plan = std::move(solve.plan);
  return out;
}

std::vector<std::size_t> nearest_centroid(const DenseMatrix& points, const Centroids& centroids) {
  const DenseMatrix sim = matmul(points, centroids.matrix());
  std::vector<std::size_t> out(points.rows());
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    auto r = sim.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

std::vector<std::size_t> cluster_sizes(std::span<const std::size_t> assignment,
                                       std::size_t num_clusters) {
  std::vector<std::size_t> sizes(num_clusters, 0);
  for (std::size_t a : assignment) {
    if (a >= num_clusters) throw ShapeError("cluster label out of range");
    ++sizes[a];
  }
  return sizes;
}

double within_cluster_cost(const DenseMatrix& points, std::span<const std::size_t> assignment,
                           std::size_t num_clusters) {
  if (assignment.size() != points.rows()) throw ShapeError("within_cluster_cost: length mismatch");
  DenseMatrix sums(num_clusters, points.cols());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (assignment[i] >= num_clusters) throw ShapeError("within_cluster_cost: bad label");
    auto s = sums.row(assignment[i]);
    auto p = points.row(i);
    for (std::size_t d = 0; d < p.size(); ++d) s[d] += p[d];
  }
  normalize_rows(sums);
  double cost = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    cost += 1.0 - dot(points.row(i), sums.row(assignment[i]));
  return cost;
}

std::optional<double> inter_cluster_mixing(const Centroids& centroids, const DenseMatrix& points,
                                           std::span<const std::size_t> assignment) {
  if (assignment.size() != points.rows())
    throw ShapeError("inter_cluster_mixing: assignment length != point count");
  if (points.cols() != centroids.dim())
    throw ShapeError("inter_cluster_mixing: point/centroid dims differ");
  const DenseMatrix sim = matmul(points, centroids.matrix());
  std::optional<double> delta;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    if (assignment[i] >= centroids.count()) throw ShapeError("inter_cluster_mixing: bad label");
    for (std::size_t g = 0; g < sim.cols(); ++g) {
      if (g == assignment[i]) continue;
      if (!delta || sim(i, g) > *delta) delta = sim(i, g);
    }
  }
  return delta;
}

std::vector<std::size_t> max_weight_matching(const DenseMatrix& weights) {
  const std::size_t n = weights.rows();
  if (weights.cols() != n) throw ShapeError("max_weight_matching: matrix must be square");
  if (n == 0) return {};
  double wmax = *std::max_element(weights.data().begin(), weights.data().end());
  // Min-cost form, 1-indexed potentials (classic O(n^3) Hungarian).
  auto cost = [&](std::size_t i, std::size_t j) { return wmax - weights(i - 1, j - 1); };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

double consistency_fraction(std::span<const std::size_t> ideal,
                            std::span<const std::size_t> federated, std::size_t num_clusters) {
  if (ideal.size() != federated.size())
    throw ShapeError("consistency_fraction: assignments differ in length");
  if (ideal.empty()) return 1.0;
  DenseMatrix overlap(num_clusters, num_clusters);
  for (std::size_t i = 0; i < ideal.size(); ++i) {
    if (ideal[i] >= num_clusters || federated[i] >= num_clusters)
      throw ShapeError("consistency_fraction: label >= G");
    overlap(ideal[i], federated[i]) += 1.0;
  }
  const auto match = max_weight_matching(overlap);
  double matched = 0.0;
  for (std::size_t g = 0; g < num_clusters; ++g) matched += overlap(g, match[g]);
  return matched / static_cast<double>(ideal.size());
}

namespace {
void check_bound_inputs(const BoundInputs& in) {
  if (in.G < 2) throw ConfigError("bound: G must be >= 2");
  if (in.N <= 2) throw ConfigError("bound: N must be > 2");
  if (in.delta < -1.0) throw ConfigError("bound: delta must be >= -1");
  if (!(in.c >= 0.0 && in.c <= 1.0)) throw ConfigError("bound: c must lie in [0, 1]");
}

double mixing_term(const BoundInputs& in) {
  const double d = std::max(in.delta, 0.0);
  return 2.0 * d + (static_cast<double>(in.G) - 1.0) * d * d;
}
}  // namespace

double idealized_bound(const BoundInputs& in) {
  check_bound_inputs(in);
  const double n = static_cast<double>(in.N);
  const double g = static_cast<double>(in.G);
  return in.zeta + (n / (n - 1.0)) * (1.0 / g + (1.0 - 1.0 / g) * mixing_term(in));
}

double two_level_bound(const BoundInputs& in) {
  check_bound_inputs(in);
  const double n = static_cast<double>(in.N);
  const double g = static_cast<double>(in.G);
  const double c = in.c;
  const double kept = 1.0 - (1.0 - c) / g;
  return in.zeta + (n / (n - 1.0)) * ((1.0 / g) * (1.0 - g * g / (n * n)) +
                                      (1.0 / g) * (1.0 - c * c) +
                                      (kept * kept - 1.0 / g) * mixing_term(in));
}

TwoLevelResult two_level_cluster(std::span<const DenseMatrix> local_reps,
                                 std::span<const std::size_t> local_clusters,
                                 std::size_t num_global, const SinkhornConfig& cfg,
                                 std::size_t threads) {
  if (local_reps.size() != local_clusters.size())
    throw ShapeError("two_level_cluster: one L per client required");
  const std::size_t total_local =
      std::accumulate(local_clusters.begin(), local_clusters.end(), std::size_t{0});
  if (total_local < num_global) {
    throw ConfigError("two_level_cluster: " + std::to_string(total_local) +
                      " local centroids cannot form " + std::to_string(num_global) +
                      " global clusters");
  }
  TwoLevelResult out;
  out.local.resize(local_reps.size());
  const Rng base(cfg.seed);
  parallel_for(local_reps.size(), threads, [&](std::size_t k) {
    SinkhornConfig local_cfg = cfg;
    local_cfg.seed = base.split(k + 1).key();
    out.local[k] = sinkhorn_balanced(local_reps[k], local_clusters[k], local_cfg).centroids;
  });
  std::vector<DenseMatrix> rows;
  rows.reserve(out.local.size());
  for (const auto& c : out.local) rows.push_back(c.as_rows());
  SinkhornConfig global_cfg = cfg;
  global_cfg.seed = base.split(0).key();
  out.global = sinkhorn_balanced(vstack(rows), num_global, global_cfg).centroids;
  return out;
}

std::size_t kanonymity_level(std::size_t shard_size, std::size_t local_clusters) {
  if (local_clusters == 0) throw ConfigError("kanonymity_level: L must be >= 1");
  if (shard_size < local_clusters) {
    throw AnonymityError("kanonymity_level: " + std::to_string(shard_size) +
                         " samples cannot populate " + std::to_string(local_clusters) +
                         " clusters");
  }
  return shard_size / local_clusters;
}

bool enough_clusters_for_bound(std::size_t num_clusters, std::size_t num_classes) {
  return num_clusters > 4 * num_classes + 2;
}

}  // namespace orchestra
