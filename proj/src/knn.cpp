#include "cxr/knn.hpp"

#include <algorithm>
#include <string>

#include "cxr/concurrency.hpp"
#include "cxr/error.hpp"

namespace cxr {

namespace {

constexpr std::size_t kLanes = 16;
constexpr std::size_t kChunkRows = 16384;
constexpr std::size_t kQueryBlock = 8;

inline float dist2_kernel(const float* a, const float* b, std::size_t n) {
  float acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) {
      const float d = a[i + j] - b[i + j];
      acc[j] += d * d;
    }
  }
  for (std::size_t width = kLanes / 2; width > 0; width /= 2) {
    for (std::size_t j = 0; j < width; ++j) acc[j] += acc[j + width];
  }
  float sum = acc[0];
  for (; i < n; ++i) {
    const float d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

/// Bounded max-heap keeping the k closest candidates seen so far.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(std::size_t index, float dist2, Label label) {
    Neighbor cand{index, dist2, label};
    if (heap_.size() < k_) {
      heap_.push_back(cand);
      std::push_heap(heap_.begin(), heap_.end(), closer);
    } else if (closer(cand, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), closer);
      heap_.back() = cand;
      std::push_heap(heap_.begin(), heap_.end(), closer);
    }
  }

  std::vector<Neighbor> take_sorted() {
    std::sort_heap(heap_.begin(), heap_.end(), closer);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

void check_k(const FeatureStore& store, const SearchParams& params) {
  if (params.k == 0) throw Error("k must be at least 1");
  if (params.exclude && params.exclude->n_rows() != store.size()) {
    throw Error("exclusion filter sized for " + std::to_string(params.exclude->n_rows()) +
                " rows, store has " + std::to_string(store.size()));
  }
  const std::size_t pool = pool_size(store, params);
  if (params.k > pool) {
    throw Error("k exceeds pool: k=" + std::to_string(params.k) + ", pool=" + std::to_string(pool));
  }
}

void check_dim(const FeatureStore& store, std::span<const float> query) {
  if (query.size() != store.dim()) {
    throw Error("dimension mismatch: query has " + std::to_string(query.size()) +
                ", store has " + std::to_string(store.dim()));
  }
}

std::vector<Neighbor> merge_chunks(std::vector<std::vector<Neighbor>>& parts, std::size_t k) {
  std::vector<Neighbor> all;
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  const auto keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    closer);
  all.resize(keep);
  return all;
}

}  // namespace

RowFilter::RowFilter(std::size_t n_rows, std::span<const std::size_t> rows) : RowFilter(n_rows) {
  for (auto r : rows) add(r);
}

void RowFilter::add(std::size_t row) {
  if (row >= n_rows_) {
    throw Error("excluded row " + std::to_string(row) + " out of range");
  }
  auto& word = words_[row >> 6];
  const std::uint64_t bit = std::uint64_t{1} << (row & 63);
  if ((word & bit) == 0) {
    word |= bit;
    ++count_;
  }
}

float squared_euclidean(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()));
  }
  return dist2_kernel(a.data(), b.data(), a.size());
}

std::size_t pool_size(const FeatureStore& store, const SearchParams& params) {
  return store.size() - (params.exclude ? params.exclude->count() : 0);
}

std::vector<Neighbor> top_k_search(const FeatureStore& store, std::span<const float> query,
                                   const SearchParams& params) {
  check_dim(store, query);
  check_k(store, params);

  const std::size_t n = store.size();
  const std::size_t dim = store.dim();
  const float* base = store.payload().data();
  const RowFilter* exclude = params.exclude.get();
  const auto& metas = store.metas();

  const std::size_t n_chunks = (n + kChunkRows - 1) / kChunkRows;
  std::vector<std::vector<Neighbor>> parts(n_chunks);
  parallel_for(n_chunks, resolve_threads(params.threads), [&](std::size_t c) {
    TopK best(params.k);
    const std::size_t end = std::min(n, (c + 1) * kChunkRows);
    for (std::size_t i = c * kChunkRows; i < end; ++i) {
      if (exclude && exclude->contains(i)) continue;
      best.offer(i, dist2_kernel(query.data(), base + i * dim, dim), metas[i].label);
    }
    parts[c] = best.take_sorted();
  });
  return merge_chunks(parts, params.k);
}

std::vector<std::vector<Neighbor>> batch_search(const FeatureStore& store,
                                                std::span<const std::span<const float>> queries,
                                                const SearchParams& params) {
  if (queries.empty()) return {};
  for (std::size_t q = 0; q < queries.size(); ++q) {
    try {
      check_dim(store, queries[q]);
    } catch (const Error& e) {
      throw QueryError(q, e.what());
    }
  }
  try {
    check_k(store, params);
  } catch (const Error& e) {
    throw QueryError(0, e.what());
  }

  const std::size_t n = store.size();
  const std::size_t dim = store.dim();
  const float* base = store.payload().data();
  const RowFilter* exclude = params.exclude.get();
  const auto& metas = store.metas();

  std::vector<std::vector<Neighbor>> results(queries.size());
  const std::size_t n_blocks = (queries.size() + kQueryBlock - 1) / kQueryBlock;
  // Each block scans the store once and scores every row against all of its
  // queries while the row is hot in cache.
  parallel_for(n_blocks, resolve_threads(params.threads), [&](std::size_t b) {
    const std::size_t q0 = b * kQueryBlock;
    const std::size_t q1 = std::min(queries.size(), q0 + kQueryBlock);
    std::vector<TopK> best(q1 - q0, TopK(params.k));
    for (std::size_t i = 0; i < n; ++i) {
      if (exclude && exclude->contains(i)) continue;
      const float* row = base + i * dim;
      for (std::size_t q = q0; q < q1; ++q) {
        best[q - q0].offer(i, dist2_kernel(queries[q].data(), row, dim), metas[i].label);
      }
    }
    for (std::size_t q = q0; q < q1; ++q) results[q] = best[q - q0].take_sorted();
  });
  return results;
}

}  // namespace cxr
