#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cxr/feature_store.hpp"
#include "cxr/knn.hpp"
#include "cxr/metrics.hpp"

namespace cxr {

/// Unweighted majority vote over a neighbor list.
struct VoteResult {
  double score = 0.0;  ///< positives / k
  bool decision = false;  ///< positive iff 2 * positives > k
  std::size_t k = 0;
  std::size_t positives = 0;
};

VoteResult majority_vote(std::span<const Neighbor> neighbors);

/// Scores stored rows as queries; each pair carries the row's own label.
std::vector<ScoredLabel> score_queries(const FeatureStore& store,
                                       std::span<const std::size_t> query_rows,
                                       const SearchParams& params);

/// Scores external query vectors with caller-supplied ground truth.
std::vector<ScoredLabel> score_queries(const FeatureStore& store,
                                       std::span<const std::span<const float>> queries,
                                       std::span<const Label> truth, const SearchParams& params);

}  // namespace cxr
