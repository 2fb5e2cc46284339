#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "orchestra/datasets.hpp"
#include "orchestra/encoder.hpp"
#include "orchestra/matrix.hpp"
#include "orchestra/protocol.hpp"

namespace orchestra {

enum class ProbeKind { kKnn, kLinear };

struct ProbeReport {
  ProbeKind kind = ProbeKind::kKnn;
  double accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t hyper = 0;  // k for kNN, epochs for the linear probe
};

/// Default kNN neighbourhood: min(200, n_train / 10), at least 1.
std::size_t default_knn_k(std::size_t n_train);

/// Cosine kNN majority vote; ties go to the larger summed similarity, then
/// the lower class index.
ProbeReport knn_probe(const DenseMatrix& train_reps, std::span<const std::size_t> train_labels,
                      const DenseMatrix& test_reps, std::span<const std::size_t> test_labels,
                      std::size_t k);

/// Multinomial logistic regression (weights + bias, zero init) trained by
/// full-batch gradient descent on frozen representations.
ProbeReport linear_probe(const DenseMatrix& train_reps, std::span<const std::size_t> train_labels,
                         const DenseMatrix& test_reps, std::span<const std::size_t> test_labels,
                         std::size_t epochs = 500, double lr = 0.5);

/// Mean over clients of mean cos(f(x), f(T(x))).
double alignment_score(const EncoderParams& encoder, std::span<const DenseMatrix> client_samples,
                       const AugmentConfig& augment, Rng& rng);

/// -mean over clients of mean_x log mean_y exp(cos(f(x), f(y)) / tau),
/// with y ranging over the whole client sample (self term included).
double uniformity_score(const EncoderParams& encoder, std::span<const DenseMatrix> client_samples,
                        double tau = 0.2);

/// Same quantity on precomputed unit-norm representations.
double uniformity_from_reps(std::span<const DenseMatrix> client_reps, double tau = 0.2);

inline constexpr double kUniformityWeight = 0.2;

/// align + 0.2 * unif.
double tuner_score(double align, double unif);

struct TunerScore {
  double align = 0.0;
  double unif = 0.0;
  double combined = 0.0;
};

TunerScore evaluate_tuner(const EncoderParams& encoder, std::span<const DenseMatrix> client_samples,
                          const AugmentConfig& augment, double tau, Rng& rng);

struct SearchRow {
  FederationConfig config;
  double align = 0.0;
  double unif = 0.0;
  double score = -std::numeric_limits<double>::infinity();
  std::string error;  // non-empty when the run failed
};

struct SearchResult {
  std::size_t best = 0;
  std::vector<SearchRow> table;  // grid order
};

/// Runs every config for `tune_rounds` rounds and scores the final target
/// encoder with align + 0.2 unif on held-out unlabeled samples. Failed runs
/// score -inf. Ties prefer the lower learning rate.
SearchResult hyperparam_search(std::span<const FederationConfig> grid, const Dataset& dataset,
                               std::span<const ClientShard> shards, std::size_t tune_rounds = 20,
                               std::size_t threads = 1);

/// Representations of a dataset split for probing.
struct ProbeData {
  DenseMatrix train_reps;
  std::vector<std::size_t> train_labels;
  DenseMatrix test_reps;
  std::vector<std::size_t> test_labels;
};

ProbeData encode_split(const EncoderParams& encoder, const Dataset& dataset, const Split& split);

}  // namespace orchestra
