#include "cxr/vote.hpp"

#include "cxr/error.hpp"

namespace cxr {

VoteResult majority_vote(std::span<const Neighbor> neighbors) {
  if (neighbors.empty()) throw Error("cannot vote on an empty neighbor list");
  VoteResult vote;
  vote.k = neighbors.size();
  for (const auto& n : neighbors) {
    if (is_positive(n.label)) ++vote.positives;
  }
  vote.score = static_cast<double>(vote.positives) / static_cast<double>(vote.k);
  // Even k with an exact tie is decided negative.
  vote.decision = 2 * vote.positives > vote.k;
  return vote;
}

std::vector<ScoredLabel> score_queries(const FeatureStore& store,
                                       std::span<const std::size_t> query_rows,
                                       const SearchParams& params) {
  std::vector<std::span<const float>> queries;
  std::vector<Label> truth;
  queries.reserve(query_rows.size());
  truth.reserve(query_rows.size());
  for (auto row : query_rows) {
    queries.push_back(store.vector(row));
    truth.push_back(store.label(row));
  }
  return score_queries(store, queries, truth, params);
}

std::vector<ScoredLabel> score_queries(const FeatureStore& store,
                                       std::span<const std::span<const float>> queries,
                                       std::span<const Label> truth, const SearchParams& params) {
  if (queries.size() != truth.size()) throw Error("query/label count mismatch");
  auto hits = batch_search(store, queries, params);
  std::vector<ScoredLabel> scored;
  scored.reserve(hits.size());
  for (std::size_t q = 0; q < hits.size(); ++q) {
    scored.push_back({majority_vote(hits[q]).score, truth[q]});
  }
  return scored;
}

}  // namespace cxr
