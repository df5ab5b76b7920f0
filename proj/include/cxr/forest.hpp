#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cxr/feature_store.hpp"

namespace cxr {

/// Row-major dense matrix view.
struct FeatureMatrix {
  std::span<const float> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const float> row(std::size_t i) const { return values.subspan(i * cols, cols); }

  static FeatureMatrix of(const FeatureStore& store) {
    return {store.payload(), store.size(), store.dim()};
  }
};

struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;

  double of(Label label) const { return is_positive(label) ? positive : negative; }
};

/// w_c = n_total / (2 * n_c). Throws when a class is absent.
ClassWeights balanced_weights(std::span<const Label> labels);

struct TreeNode {
  static constexpr std::uint32_t kNone = UINT32_MAX;

  // Internal nodes: go left when x[feature] <= threshold.
  std::uint32_t feature = 0;
  double threshold = 0.0;
  std::uint32_t left = kNone;
  std::uint32_t right = kNone;
  // Weighted class mass of the training samples that reached this node.
  double negative_mass = 0.0;
  double positive_mass = 0.0;

  bool is_leaf() const { return left == kNone; }
  double positive_fraction() const { return positive_mass / (negative_mass + positive_mass); }
};

class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const TreeNode& leaf_for(std::span<const float> x) const;
  double predict(std::span<const float> x) const { return leaf_for(x).positive_fraction(); }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t depth() const;

 private:
  std::vector<TreeNode> nodes_;
};

struct ForestParams {
  std::size_t trees = 11;
  std::uint64_t seed = 0;
  /// Candidate features per node; 0 means floor(sqrt(dim)).
  std::size_t max_features = 0;
  bool bootstrap = true;
  unsigned threads = 0;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::size_t dim = 0;
  ClassWeights class_weights;
  std::uint64_t seed = 0;
};

/// Trains on the rows listed in `rows` (indices into `features`/`labels`).
ForestModel train_forest(const FeatureMatrix& features, std::span<const Label> labels,
                         std::span<const std::size_t> rows, const ForestParams& params);
ForestModel train_forest(const FeatureMatrix& features, std::span<const Label> labels,
                         const ForestParams& params);

/// Mean over trees of the leaf's weighted positive fraction.
double predict_proba(const ForestModel& model, std::span<const float> x);

/// Weighted Gini impurity 1 - sum p_c^2 for class masses.
double gini(double negative_mass, double positive_mass);

std::vector<std::uint8_t> serialize_forest(const ForestModel& model);
ForestModel deserialize_forest(std::span<const std::uint8_t> bytes);
void save_forest(const ForestModel& model, const std::filesystem::path& path);
ForestModel load_forest(const std::filesystem::path& path);

}  // namespace cxr
