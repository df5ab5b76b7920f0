#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cxr/feature_store.hpp"

namespace cxr::synthetic {

struct BlobSpec {
  std::size_t n = 1000;
  std::size_t dim = 32;
  /// Euclidean distance between the two class means, in units of the
  /// per-coordinate standard deviation.
  double separation = 4.0;
  double positive_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// Two isotropic Gaussian classes. Negatives are centred at the origin,
/// positives at separation / sqrt(dim) on every coordinate.
std::vector<Record> gaussian_blobs(const BlobSpec& spec);

/// Same vectors, labels permuted uniformly at random.
std::vector<Record> shuffle_labels(std::vector<Record> records, std::uint64_t seed);

/// Streams `n` standard-normal records straight to disk (no resident copy).
void write_random_store(const std::filesystem::path& path, std::size_t n, std::size_t dim,
                        std::uint64_t seed, double positive_fraction = 0.1);

}  // namespace cxr::synthetic
