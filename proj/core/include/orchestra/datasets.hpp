#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orchestra/matrix.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

/// How feature vectors are laid out; decides what "rotation" means.
enum class InputLayout {
  kVector,   // cyclic block shift by d/4 per quarter turn
  kImage32,  // 3 x 32 x 32 planes, true 90-degree spatial rotation
};

struct Dataset {
  DenseMatrix features;  // N x d_in
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  InputLayout layout = InputLayout::kVector;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return features.cols(); }
  /// Throws unless N >= 2, labels < M and feature rows match labels.
  void validate() const;
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> sample_ids;
};

struct AugmentConfig {
  double jitter_sigma = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.2;

  void validate() const;
};

struct MixtureSpec {
  std::size_t num_classes = 4;
  std::size_t input_dim = 16;
  std::size_t per_class = 512;
  double class_sep = 1.0;
  double within_std = 1.0;
  std::uint64_t seed = 0;
};

/// Gaussian mixture: class means uniform on the radius-class_sep sphere,
/// isotropic within-class noise. Labels are grouped by class.
Dataset gen_mixture(const MixtureSpec& spec);

/// s * (x + noise), noise ~ N(0, sigma^2 I), s ~ U(lo, hi).
std::vector<double> augment(std::span<const double> x, const AugmentConfig& cfg, Rng& rng);
/// Row-wise augment of a batch.
DenseMatrix augment_batch(const DenseMatrix& batch, const AugmentConfig& cfg, Rng& rng);

/// Quarter-turn `idx` (0..3) of a vector: cyclic shift right by idx*d/4.
std::vector<double> rotate(std::span<const double> x, std::size_t idx);
/// Quarter-turn counter-clockwise `idx` times of a 3x32x32 image.
std::vector<double> rotate_image(std::span<const double> x, std::size_t idx);
std::vector<double> rotate_input(std::span<const double> x, std::size_t idx, InputLayout layout);

/// Dirichlet non-IID split: per-client class proportions ~ Dir(alpha), equal
/// target shard sizes, largest-remainder rounding, leftovers round-robin to
/// the smallest shards. Redraws (derived seed) up to 100 times when a shard
/// ends up below min_shard_size.
std::vector<ClientShard> dirichlet_partition(const Dataset& dataset, std::size_t num_clients,
                                             double alpha, std::uint64_t seed,
                                             std::size_t min_shard_size);

enum class ClassPresenceRule { kAtLeastOne, kAtLeastOnePercent };

/// Mean over clients of the number of classes present under `rule`.
double avg_classes_per_client(std::span<const ClientShard> shards,
                              std::span<const std::size_t> labels, std::size_t num_classes,
                              ClassPresenceRule rule);

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

/// Parses CIFAR binary records (label byte + R, G, B 32x32 planes); pixel
/// values scaled to [0, 1].
Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t num_classes = 10);
/// Writes features (rounded from [0,1] back to bytes) in CIFAR binary form.
void write_cifar_binary(const std::filesystem::path& path, const Dataset& dataset);

/// CSV with header `label,f0,...,f{d-1}`.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// Seeded split of sample ids into train / test (train_fraction of ids).
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split train_test_split(std::size_t n, double train_fraction, Rng& rng);

}  // namespace orchestra
