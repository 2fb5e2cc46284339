#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace orchestra {

/// Purpose tags keep independent consumers of one global seed from sharing
/// random numbers.
enum class StreamTag : std::uint64_t {
  kDataset = 1,
  kPartition = 2,
  kInit = 3,
  kParticipation = 4,
  kClient = 5,
  kCluster = 6,
  kProbe = 7,
  kEval = 8,
  kAugment = 9,
  kTest = 10,
};

/// Counter-based random stream: the n-th draw is a pure function of
/// (key, n), so streams can be created in any order or on any thread and
/// still reproduce bit-for-bit. All distributions are implemented here so
/// results do not depend on the standard library's distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  /// Stream keyed by (seed, tag, round, client).
  static Rng stream(std::uint64_t seed, StreamTag tag, std::uint64_t round = 0,
                    std::uint64_t client = 0);

  /// Independent child stream; does not advance this stream.
  Rng split(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  double normal();
  /// log of a Gamma(shape, 1) draw; stays finite for tiny shapes where the
  /// draw itself underflows.
  double log_gamma(double shape);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }
  template <class T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace orchestra
