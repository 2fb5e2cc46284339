#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orchestra/clustering.hpp"
#include "orchestra/datasets.hpp"
#include "orchestra/encoder.hpp"
#include "orchestra/matrix.hpp"

namespace orchestra {

enum class Method { kOrchestra, kSpecLoss, kRotPred, kRandom };

std::string to_string(Method m);
/// Throws ConfigError on an unknown name.
Method parse_method(const std::string& name);

struct FederationConfig {
  std::size_t clients = 16;          // K
  double participation = 0.5;        // R
  std::size_t rounds = 30;
  std::size_t local_epochs = 5;      // E
  std::size_t batch_size = 16;       // B
  double lr = 0.05;
  double ema = 0.99;                 // m
  std::size_t global_clusters = 16;  // G
  std::size_t local_clusters = 4;    // L
  double tau_assign = 0.1;
  double tau_unif = 0.2;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  Method method = Method::kOrchestra;
  std::size_t mem_size = 128;
  std::size_t eval_every = 5;
  bool weighted_fedavg = false;

  EncoderShape encoder{};
  AugmentConfig augment{};
  SinkhornConfig sinkhorn{};

  std::size_t knn_k = 0;  // 0: min(200, n_train / 10)
  std::size_t probe_epochs = 500;
  double probe_lr = 0.5;
  std::size_t delta_probe_size = 256;
  std::size_t eval_per_client = 32;

  /// Worker threads for client rounds; results do not depend on it.
  std::size_t threads = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Fixed-capacity ring of the most recent target representations.
class MemoryBuffer {
 public:
  explicit MemoryBuffer(std::size_t capacity);

  void push(std::span<const double> rep);
  void push_rows(const DenseMatrix& reps);

  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return rows_.empty(); }
  /// Oldest first.
  DenseMatrix contents() const;

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> rows_;
};

struct ClientStats {
  double mean_cluster_loss = 0.0;
  double mean_deg_loss = 0.0;
  double mean_spec_loss = 0.0;
  std::vector<double> epoch_losses;  // mean total loss per epoch
  std::size_t steps = 0;
  std::size_t buffer_size = 0;
};

struct ClientResult {
  std::size_t client_id = 0;
  std::size_t shard_size = 0;
  bool skipped = false;
  EncoderParams target;
  EncoderParams online;
  Centroids local_centroids;
  ClientStats stats;
};

/// Local training on one client: E epochs over shuffled minibatches, SGD on
/// the online encoder, EMA on the target encoder, memory buffer of target
/// reps, then L balanced local centroids from the buffer. Shards smaller than
/// B come back with skipped = true.
ClientResult client_round(const Dataset& dataset, const ClientShard& shard,
                          const EncoderParams& online, const EncoderParams& target,
                          const Centroids& global_centroids, const FederationConfig& cfg,
                          std::size_t round_idx);

/// Elementwise mean; optional weights (must match length). Sums in the order
/// given.
EncoderParams fedavg(std::span<const EncoderParams> params,
                     std::span<const double> weights = {});

struct Aggregate {
  EncoderParams online;
  EncoderParams target;
  DenseMatrix local_centroid_rows;  // client-id order
  std::vector<std::size_t> participants;
};

/// Sorts non-skipped results by client id, then averages both encoders and
/// collects local centroids. Throws AggregationError if nothing remains.
Aggregate aggregate_results(std::vector<ClientResult> results, bool weighted);

/// Encodes each shard with the initial target encoder, clusters locally into
/// L, then globally into G.
Centroids init_global_centroids(const Dataset& dataset, std::span<const ClientShard> shards,
                                const EncoderParams& target, const FederationConfig& cfg);

struct RoundMetrics {
  std::size_t round = 0;
  double mean_cluster_loss = 0.0;
  double mean_deg_loss = 0.0;
  double mean_spec_loss = 0.0;
  std::optional<double> delta;
  std::optional<double> knn_acc;
  std::optional<double> linear_acc;
  double align = 0.0;
  double unif = 0.0;
  double tuner = 0.0;
  std::vector<std::size_t> participants;
};

struct FederationResult {
  RoundMetrics initial;  // round 0: untrained encoder, initial centroids
  std::vector<RoundMetrics> timeline;
  EncoderParams online;
  EncoderParams target;
  Centroids global_centroids;
};

/// Called after every completed round.
using RoundObserver = std::function<void(const RoundMetrics&)>;

/// Full federation: seeded init, initial centroids, then per round sample
/// ceil(R K) clients, train locally, average encoders, re-cluster the local
/// centroids into G global ones and record metrics.
FederationResult run_federation(const FederationConfig& cfg, const Dataset& dataset,
                                std::span<const ClientShard> shards,
                                const RoundObserver& observer = {});

/// Seeded 80/20 split of sample ids used by the probes.
Split probe_split(const Dataset& dataset, const FederationConfig& cfg);

/// Per-client held-out evaluation samples: each shard's ids that fall in the
/// probe test split, shuffled, capped at eval_per_client. Clients with fewer
/// than 2 such ids are left out.
std::vector<DenseMatrix> eval_samples(const Dataset& dataset, std::span<const ClientShard> shards,
                                      const FederationConfig& cfg);

/// Local epochs scaled linearly with client count; at least 1.
std::size_t scale_local_epochs(std::size_t base_epochs, std::size_t base_clients,
                               std::size_t new_clients);
/// Learning rate scaled by sqrt of the participation-ratio change.
double scale_lr(double base_lr, double base_ratio, double new_ratio);

}  // namespace orchestra
