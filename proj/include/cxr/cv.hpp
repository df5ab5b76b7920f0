#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cxr/feature_store.hpp"

namespace cxr {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Child seed for stream `offset` of `seed`. Fixed offsets are reserved per
/// consumer (see SeedStream) so each component reproduces on its own.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t offset);

namespace SeedStream {
inline constexpr std::uint64_t kFoldShuffle = 1;
inline constexpr std::uint64_t kForestBase = 1000;  // + fold index
inline constexpr std::uint64_t kLabelShuffle = 2;
}  // namespace SeedStream

/// Portable PRNG: SplitMix64-seeded xoshiro256**, with an unbiased bounded
/// draw, so shuffles do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  /// Uniform double in [0, 1).
  double uniform();
  double normal();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Seeded uniform shuffle of 0..n-1 cut into `folds` contiguous sections;
/// the first n % folds sections get one extra element.
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t folds,
                                                      std::uint64_t seed);

/// Like kfold_partition but each class is shuffled separately and dealt
/// round-robin, so every fold gets a near-equal share of both classes.
std::vector<std::vector<std::size_t>> stratified_kfold_partition(std::span<const Label> labels,
                                                                 std::size_t folds,
                                                                 std::uint64_t seed);

}  // namespace cxr
