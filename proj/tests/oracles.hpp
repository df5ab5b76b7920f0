#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. They restate the documented behaviour independently of
// the library code paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <span>
#include <vector>

#include "cxr/feature_store.hpp"
#include "cxr/knn.hpp"
#include "cxr/metrics.hpp"

namespace cxr::oracle {

/// Lane j sums dims j, j+16, ... sequentially; lanes fold pairwise
/// 16->8->4->2->1; the tail past the last full group of 16 is added in order.
inline float reference_dist2(std::span<const float> a, std::span<const float> b) {
  std::array<float, 16> lanes{};
  const std::size_t full = a.size() / 16 * 16;
  for (std::size_t j = 0; j < 16; ++j) {
    for (std::size_t i = j; i < full; i += 16) {
      const float d = a[i] - b[i];
      lanes[j] += d * d;
    }
  }
  for (std::size_t width = 8; width >= 1; width /= 2) {
    for (std::size_t j = 0; j < width; ++j) lanes[j] += lanes[j + width];
  }
  float sum = lanes[0];
  for (std::size_t i = full; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

/// Distance to every admissible row, stable-sorted, first k kept.
inline std::vector<Neighbor> full_sort(const FeatureStore& store, std::span<const float> q,
                                       std::size_t k, const RowFilter* exclude = nullptr) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (exclude && exclude->contains(i)) continue;
    all.push_back({i, reference_dist2(q, store.row(i)), store.label(i)});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.dist2 < b.dist2; });
  all.resize(std::min(k, all.size()));
  return all;
}

inline bool bitwise_equal(const std::vector<Neighbor>& a, const std::vector<Neighbor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].index != b[i].index || a[i].label != b[i].label ||
        std::memcmp(&a[i].dist2, &b[i].dist2, sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

/// O(n^2) Mann-Whitney pair count; ties are worth one half.
inline double pair_count_auc(const std::vector<ScoredLabel>& s) {
  double good = 0.0;
  double pairs = 0.0;
  for (const auto& p : s) {
    if (!is_positive(p.label)) continue;
    for (const auto& n : s) {
      if (is_positive(n.label)) continue;
      pairs += 1.0;
      if (p.score > n.score) {
        good += 1.0;
      } else if (p.score == n.score) {
        good += 0.5;
      }
    }
  }
  return good / pairs;
}

/// Random scored instance of size 2..300 containing both classes. With
/// `quantized`, scores are vote fractions m/K and tie heavily.
inline std::vector<ScoredLabel> random_scored(std::mt19937& gen, bool quantized) {
  const std::size_t n = 2 + gen() % 299;
  const std::size_t k = 1 + gen() % 51;
  std::vector<ScoredLabel> s(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& x : s) {
    x.label = gen() % 3 == 0 ? Label::Positive : Label::Negative;
    const double signal = is_positive(x.label) ? 0.7 : 0.0;
    const double raw = signal + noise(gen);
    if (quantized) {
      const double kd = static_cast<double>(k);
      x.score = std::clamp(std::round((0.5 + 0.3 * raw) * kd), 0.0, kd) / kd;
    } else {
      x.score = raw;
    }
  }
  s[0].label = Label::Positive;
  s[1].label = Label::Negative;
  return s;
}

}  // namespace cxr::oracle
