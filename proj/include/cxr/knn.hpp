#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cxr/feature_store.hpp"

namespace cxr {

/// One retrieval hit. `dist2` is the squared Euclidean distance.
struct Neighbor {
  std::size_t index = 0;
  float dist2 = 0.0f;
  Label label = Label::Negative;

  bool operator==(const Neighbor&) const = default;
};

/// Strict total order used for selection: smaller distance first, then
/// smaller record index.
inline bool closer(const Neighbor& a, const Neighbor& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

/// Set of record indices removed from the candidate pool.
class RowFilter {
 public:
  explicit RowFilter(std::size_t n_rows) : words_((n_rows + 63) / 64, 0), n_rows_(n_rows) {}
  RowFilter(std::size_t n_rows, std::span<const std::size_t> rows);

  void add(std::size_t row);
  bool contains(std::size_t row) const {
    return row < n_rows_ && ((words_[row >> 6] >> (row & 63)) & 1u) != 0;
  }
  std::size_t count() const { return count_; }
  std::size_t n_rows() const { return n_rows_; }

 private:
  std::vector<std::uint64_t> words_;
  std::size_t n_rows_;
  std::size_t count_ = 0;
};

struct SearchParams {
  std::size_t k = 11;
  /// Optional; rows in the filter are never returned.
  std::shared_ptr<const RowFilter> exclude;
  /// Worker threads, 0 = all available (still capped by CXR_CBIR_THREADS).
  unsigned threads = 0;
};

/// Squared Euclidean distance with a fixed reduction order: 16 float lanes,
/// lane j accumulating dimensions j, j+16, j+32, ... in sequence, combined
/// by a fixed pairwise tree, then the leftover tail added sequentially.
float squared_euclidean(std::span<const float> a, std::span<const float> b);

/// Exact top-k by (dist2, index). Independent of thread count.
std::vector<Neighbor> top_k_search(const FeatureStore& store, std::span<const float> query,
                                   const SearchParams& params);

/// Element q equals top_k_search(store, queries[q], params). Queries run
/// concurrently; errors are reported as QueryError with the query index.
std::vector<std::vector<Neighbor>> batch_search(const FeatureStore& store,
                                                std::span<const std::span<const float>> queries,
                                                const SearchParams& params);

/// Candidate pool size after exclusion.
std::size_t pool_size(const FeatureStore& store, const SearchParams& params);

}  // namespace cxr
