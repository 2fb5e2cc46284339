#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "orchestra/evaluation.hpp"
#include "orchestra_cli/experiment.hpp"

namespace orchestra::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// ---- run -------------------------------------------------------------------

struct RunOutputs {
  std::string hash;
  std::filesystem::path dir;  // <output_dir>/<hash>
  FederationResult result;
};

/// Runs the federation and writes metrics.jsonl, summary.csv and config.json.
RunOutputs run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Header + one row of summary.csv. Final values fall back to the initial
/// (round 0) metrics when no round ran.
std::string summary_csv(const FederationResult& result, const ExperimentConfig& cfg,
                        const std::string& hash);

// ---- tune ------------------------------------------------------------------

struct TuneOutputs {
  std::filesystem::path table_path;
  std::vector<std::string> grid_keys;
  SearchResult search;
  std::vector<std::size_t> order;  // table rows by descending score
};

/// Grid file: {"base": {config}, "grid": {key: [values...]}, "tune_rounds": n}.
/// The cartesian product of grid values (first key slowest) is applied on
/// top of base. Writes tune.csv into the base output_dir.
TuneOutputs run_tune(const nlohmann::json& grid_file, std::ostream& log, std::size_t threads = 1);

// ---- partition-stats -------------------------------------------------------

struct PartitionStatsRequest {
  MixtureSpec mixture{.num_classes = 10, .input_dim = 16, .per_class = 100};
  std::size_t clients = 100;
  std::vector<double> alphas = {1e5, 1e-1, 1e-3};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t min_shard_size = 1;
};

struct PartitionStatsCell {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> at_least_one;
  std::optional<double> at_least_one_pct;
  std::string error;
};

struct PartitionStatsMedian {
  double alpha = 0.0;
  std::optional<double> at_least_one;
  std::optional<double> at_least_one_pct;
};

struct PartitionStats {
  std::vector<PartitionStatsCell> cells;
  std::vector<PartitionStatsMedian> medians;  // one per alpha, request order
};

PartitionStats partition_stats(const PartitionStatsRequest& req);
std::string partition_stats_csv(const PartitionStats& stats);

// ---- cluster ---------------------------------------------------------------

struct ClusterOutputs {
  ClusteringResult result;
  DenseMatrix points;  // unit-normalized input rows
  std::optional<double> delta;
  std::vector<std::size_t> sizes;
};

/// Reads `label,f0,...` CSV, normalizes rows, clusters into G balanced
/// clusters and writes assignments.csv and centroids.csv into out_dir.
ClusterOutputs run_cluster(const std::filesystem::path& csv_in, std::size_t num_clusters,
                           const SinkhornConfig& cfg, const std::filesystem::path& out_dir);

/// Reads centroids.csv as written by run_cluster.
Centroids read_centroids_csv(const std::filesystem::path& path);
/// Reads assignments.csv as written by run_cluster.
std::vector<std::size_t> read_assignments_csv(const std::filesystem::path& path);

// ---- grad-check ------------------------------------------------------------

struct GradCheckLine {
  std::string loss;
  double max_rel_error = 0.0;
  std::size_t draws = 0;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Analytic vs central-difference gradients on `draws` random instances of
/// every loss. `flip_sign` negates the analytic gradient (negative control).
std::vector<GradCheckLine> grad_check(std::uint64_t seed, std::size_t draws, bool flip_sign = false);

/// |a - f| / max(|a|, |f|, floor), maximized over parameters.
double max_relative_error(const Gradients& analytic, const Gradients& numeric);

// ---- entry point -----------------------------------------------------------

/// Full command line handling; returns the process exit code.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace orchestra::cli
