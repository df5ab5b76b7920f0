#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"

#include "cxr/error.hpp"
#include "cxr/knn.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cxr;
using cxr::testing::make_record;
using cxr::testing::random_records;

namespace {

using oracle::bitwise_equal;
using oracle::reference_dist2;

std::vector<Neighbor> full_sort_oracle(const FeatureStore& store, const std::vector<float>& q,
                                       std::size_t k, const RowFilter* exclude = nullptr) {
  return oracle::full_sort(store, q, k, exclude);
}

FeatureStore tiny_store() {
  return FeatureStore::in_memory({make_record("p0", Label::Negative, {0, 0}),
                                  make_record("p1", Label::Positive, {1, 0}),
                                  make_record("p2", Label::Positive, {0, 2})});
}

}  // namespace

TEST_CASE("squared_euclidean basics") {
  const std::vector<float> a{1.5f, -2.0f, 3.25f};
  CHECK(squared_euclidean(a, a) == 0.0f);
  CHECK(squared_euclidean(std::vector<float>{0, 0}, std::vector<float>{3, 4}) == 25.0f);
  CHECK_THROWS_AS(squared_euclidean(std::vector<float>{0, 0}, std::vector<float>{1, 2, 3}),
                  Error);
}

TEST_CASE("squared_euclidean agrees with a naive double loop") {
  std::mt19937 gen(1);
  std::normal_distribution<float> v(0.0f, 3.0f);
  for (int t = 0; t < 500; ++t) {
    std::vector<float> a(8), b(8);
    for (auto& x : a) x = v(gen);
    for (auto& x : b) x = v(gen);
    double naive = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      naive += d * d;
    }
    CHECK(std::fabs(squared_euclidean(a, b) - naive) <= 1e-6 * naive);
  }
}

TEST_CASE("squared_euclidean follows the fixed reduction order bit-for-bit") {
  std::mt19937 gen(2);
  std::normal_distribution<float> v(0.0f, 1.0f);
  for (std::size_t dim : {1u, 7u, 15u, 16u, 17u, 32u, 33u, 100u, 1024u}) {
    std::vector<float> a(dim), b(dim);
    for (auto& x : a) x = v(gen);
    for (auto& x : b) x = v(gen);
    const float got = squared_euclidean(a, b);
    const float want = reference_dist2(a, b);
    CHECK(std::memcmp(&got, &want, sizeof(float)) == 0);
  }
}

TEST_CASE("top_k_search on the three-point store") {
  const auto store = tiny_store();
  SearchParams params;
  params.k = 1;
  auto hits = top_k_search(store, std::vector<float>{0, 0}, params);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].index == 0);
  CHECK(hits[0].dist2 == 0.0f);

  params.k = 2;
  hits = top_k_search(store, std::vector<float>{0.6f, 0}, params);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].index == 1);
  CHECK(hits[1].index == 0);
  CHECK(hits[0].dist2 == doctest::Approx(0.16).epsilon(1e-6));
  CHECK(hits[1].dist2 == doctest::Approx(0.36).epsilon(1e-6));
  CHECK(hits[0].label == Label::Positive);
}

TEST_CASE("top_k_search errors") {
  const auto store = tiny_store();
  SearchParams params;
  params.k = 4;
  CHECK_THROWS_WITH_AS(top_k_search(store, std::vector<float>{0, 0}, params),
                       doctest::Contains("k exceeds pool"), Error);
  params.k = 0;
  CHECK_THROWS_AS(top_k_search(store, std::vector<float>{0, 0}, params), Error);
  params.k = 1;
  CHECK_THROWS_WITH_AS(top_k_search(store, std::vector<float>{0, 0, 0}, params),
                       doctest::Contains("dimension mismatch"), Error);
  params.k = 3;
  params.exclude = std::make_shared<RowFilter>(3, std::vector<std::size_t>{2});
  CHECK_THROWS_WITH_AS(top_k_search(store, std::vector<float>{0, 0}, params),
                       doctest::Contains("k exceeds pool"), Error);
}

TEST_CASE("top_k_search equals the full-sort oracle across k and thread counts") {
  const auto store = FeatureStore::in_memory(random_records(1000, 32, 21));
  const auto queries = random_records(100, 32, 22);
  for (std::size_t k : {1u, 11u, 51u}) {
    for (const auto& q : queries) {
      const auto want = full_sort_oracle(store, q.vector, k);
      for (unsigned threads : {1u, 4u, 8u}) {
        SearchParams params;
        params.k = k;
        params.threads = threads;
        const auto got = top_k_search(store, q.vector, params);
        REQUIRE(bitwise_equal(got, want));
      }
    }
  }
}

TEST_CASE("results are sorted and respect exclusion") {
  const auto store = FeatureStore::in_memory(random_records(500, 12, 31));
  std::mt19937 gen(4);
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < 500; ++i) {
    if (gen() % 3 == 0) masked.push_back(i);
  }
  auto filter = std::make_shared<RowFilter>(500, masked);
  SearchParams params;
  params.k = 25;
  params.exclude = filter;
  for (const auto& q : random_records(30, 12, 32)) {
    const auto got = top_k_search(store, q.vector, params);
    REQUIRE(bitwise_equal(got, full_sort_oracle(store, q.vector, 25, filter.get())));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK_FALSE(filter->contains(got[i].index));
      if (i > 0) CHECK(got[i - 1].dist2 <= got[i].dist2);
    }
  }
}

TEST_CASE("equal distances break ties by lower record index, across chunk boundaries") {
  // 40000 rows spans several scan chunks; every fourth row is a duplicate of
  // the query direction at equal distance.
  std::vector<Record> records;
  for (std::size_t i = 0; i < 40000; ++i) {
    const float x = (i % 4 == 0) ? 1.0f : 5.0f + static_cast<float>(i % 97);
    records.push_back(make_record("t" + std::to_string(i), Label::Negative, {x, 0.0f}));
  }
  const auto store = FeatureStore::in_memory(std::move(records));
  for (unsigned threads : {1u, 3u, 8u}) {
    SearchParams params;
    params.k = 5;
    params.threads = threads;
    const auto got = top_k_search(store, std::vector<float>{0, 0}, params);
    REQUIRE(got.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(got[i].index == 4 * i);
      CHECK(got[i].dist2 == 1.0f);
    }
  }
  // One past the 10000 duplicates pulls in the nearest non-duplicate.
  SearchParams params;
  params.k = 10001;
  const auto got = top_k_search(store, std::vector<float>{0, 0}, params);
  CHECK(got.back().dist2 > 1.0f);
  CHECK(got[9999].index == 39996);
}

TEST_CASE("batch_search composes top_k_search") {
  const auto store = tiny_store();
  SearchParams params;
  params.k = 2;
  const std::vector<float> q0{0, 0}, q1{0.6f, 0};
  const std::vector<std::span<const float>> queries{q0, q1};
  const auto batch = batch_search(store, queries, params);
  REQUIRE(batch.size() == 2);
  CHECK(batch[0] == top_k_search(store, q0, params));
  CHECK(batch[1] == top_k_search(store, q1, params));

  CHECK(batch_search(store, std::span<const std::span<const float>>{}, params).empty());

  const std::vector<float> bad{1, 2, 3};
  const std::vector<std::span<const float>> with_bad{q0, q1, bad};
  try {
    batch_search(store, with_bad, params);
    FAIL("expected QueryError");
  } catch (const QueryError& e) {
    CHECK(e.query_index() == 2);
  }
}

TEST_CASE("batch_search is identical under 1 and 8 threads and matches single queries") {
  const auto store = FeatureStore::in_memory(random_records(2000, 24, 41));
  const auto qs = random_records(100, 24, 42);
  std::vector<std::span<const float>> queries;
  for (const auto& q : qs) queries.push_back(q.vector);
  SearchParams params;
  params.k = 11;
  params.exclude = std::make_shared<RowFilter>(2000, std::vector<std::size_t>{0, 5, 99, 1999});
  params.threads = 1;
  const auto one = batch_search(store, queries, params);
  params.threads = 8;
  const auto eight = batch_search(store, queries, params);
  REQUIRE(one.size() == eight.size());
  for (std::size_t q = 0; q < one.size(); ++q) {
    REQUIRE(bitwise_equal(one[q], eight[q]));
    REQUIRE(bitwise_equal(one[q], top_k_search(store, queries[q], params)));
  }
}

TEST_CASE("RowFilter bookkeeping") {
  RowFilter f(130);
  f.add(0);
  f.add(64);
  f.add(129);
  f.add(64);
  CHECK(f.count() == 3);
  CHECK(f.contains(129));
  CHECK_FALSE(f.contains(128));
  CHECK_FALSE(f.contains(1000));
  CHECK_THROWS_AS(f.add(130), Error);
}
