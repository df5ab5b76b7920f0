#include "cxr/forest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "cxr/concurrency.hpp"
#include "cxr/cv.hpp"
#include "cxr/error.hpp"

namespace cxr {

namespace {

constexpr std::array<char, 8> kForestMagic = {'C', 'X', 'R', 'F', '-', 'R', 'F', '\0'};
constexpr std::uint32_t kForestVersion = 1;

struct Sample {
  std::size_t row;
  double negative;  // weighted mass contributed to each class
  double positive;
};

struct Split {
  bool found = false;
  std::uint32_t feature = 0;
  double threshold = 0.0;
  double impurity = 0.0;  // sum over children of mass * gini
};

// mass * gini, i.e. w - (n^2 + p^2) / w.
double weighted_impurity(double n, double p) {
  const double w = n + p;
  if (w <= 0.0) return 0.0;
  return w - (n * n + p * p) / w;
}

bool better(const Split& cand, const Split& best) {
  if (!best.found) return true;
  if (cand.impurity != best.impurity) return cand.impurity < best.impurity;
  if (cand.feature != best.feature) return cand.feature < best.feature;
  return cand.threshold < best.threshold;
}

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, std::size_t max_features, std::uint64_t seed)
      : x_(x), max_features_(max_features), rng_(seed), features_(x.cols) {
    std::iota(features_.begin(), features_.end(), std::uint32_t{0});
  }

  DecisionTree build(std::vector<Sample> samples) {
    samples_ = std::move(samples);
    nodes_.clear();
    struct Pending {
      std::size_t begin, end;
      std::uint32_t node;
    };
    std::vector<Pending> stack;
    stack.push_back({0, samples_.size(), new_node(0, samples_.size())});
    while (!stack.empty()) {
      const auto job = stack.back();
      stack.pop_back();
      const TreeNode& node = nodes_[job.node];
      const bool pure = node.negative_mass == 0.0 || node.positive_mass == 0.0;
      if (pure || job.end - job.begin < 2) continue;

      const Split split = best_split(job.begin, job.end);
      if (!split.found) continue;

      auto first = samples_.begin() + static_cast<std::ptrdiff_t>(job.begin);
      auto last = samples_.begin() + static_cast<std::ptrdiff_t>(job.end);
      auto mid = std::stable_partition(first, last, [&](const Sample& s) {
        return x_.row(s.row)[split.feature] <= split.threshold;
      });
      const auto cut = static_cast<std::size_t>(mid - samples_.begin());

      const auto left = new_node(job.begin, cut);
      const auto right = new_node(cut, job.end);
      nodes_[job.node].feature = split.feature;
      nodes_[job.node].threshold = split.threshold;
      nodes_[job.node].left = left;
      nodes_[job.node].right = right;
      stack.push_back({cut, job.end, right});
      stack.push_back({job.begin, cut, left});
    }
    return DecisionTree(std::move(nodes_));
  }

 private:
  std::uint32_t new_node(std::size_t begin, std::size_t end) {
    TreeNode node;
    for (std::size_t i = begin; i < end; ++i) {
      node.negative_mass += samples_[i].negative;
      node.positive_mass += samples_[i].positive;
    }
    nodes_.push_back(node);
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  // Features are drawn without replacement until max_features non-constant
  // ones have been evaluated or every feature has been visited.
  Split best_split(std::size_t begin, std::size_t end) {
    Split best;
    std::size_t evaluated = 0;
    const std::size_t d = features_.size();
    for (std::size_t i = 0; i < d && evaluated < max_features_; ++i) {
      const auto j = i + static_cast<std::size_t>(rng_.below(d - i));
      std::swap(features_[i], features_[j]);
      if (scan_feature(features_[i], begin, end, best)) ++evaluated;
    }
    return best;
  }

  // Returns false when the feature is constant over the node.
  bool scan_feature(std::uint32_t feature, std::size_t begin, std::size_t end, Split& best) {
    column_.clear();
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = samples_[i];
      column_.push_back({x_.row(s.row)[feature], s.negative, s.positive});
    }
    std::sort(column_.begin(), column_.end(),
              [](const Cell& a, const Cell& b) { return a.value < b.value; });
    if (column_.front().value == column_.back().value) return false;

    double total_n = 0.0, total_p = 0.0;
    for (const auto& c : column_) {
      total_n += c.negative;
      total_p += c.positive;
    }
    double left_n = 0.0, left_p = 0.0;
    for (std::size_t i = 0; i + 1 < column_.size(); ++i) {
      left_n += column_[i].negative;
      left_p += column_[i].positive;
      if (column_[i].value == column_[i + 1].value) continue;
      Split cand;
      cand.found = true;
      cand.feature = feature;
      cand.threshold =
          (static_cast<double>(column_[i].value) + static_cast<double>(column_[i + 1].value)) /
          2.0;
      cand.impurity = weighted_impurity(left_n, left_p) +
                      weighted_impurity(total_n - left_n, total_p - left_p);
      if (better(cand, best)) best = cand;
    }
    return true;
  }

  struct Cell {
    float value;
    double negative;
    double positive;
  };

  const FeatureMatrix& x_;
  std::size_t max_features_;
  Rng rng_;
  std::vector<std::uint32_t> features_;
  std::vector<Sample> samples_;
  std::vector<TreeNode> nodes_;
  std::vector<Cell> column_;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw Error("truncated forest model");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double gini(double negative_mass, double positive_mass) {
  const double w = negative_mass + positive_mass;
  if (w <= 0.0) return 0.0;
  const double pn = negative_mass / w;
  const double pp = positive_mass / w;
  return 1.0 - pn * pn - pp * pp;
}

ClassWeights balanced_weights(std::span<const Label> labels) {
  std::size_t pos = 0;
  for (auto l : labels) pos += is_positive(l) ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error("balanced weights need both classes");
  const auto n = static_cast<double>(labels.size());
  return {n / (2.0 * static_cast<double>(neg)), n / (2.0 * static_cast<double>(pos))};
}

const TreeNode& DecisionTree::leaf_for(std::span<const float> x) const {
  if (nodes_.empty()) throw Error("empty decision tree");
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const auto& node = nodes_[i];
    i = x[node.feature] <= node.threshold ? node.left : node.right;
  }
  return nodes_[i];
}

std::size_t DecisionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::size_t deepest = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 1}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes_[i].is_leaf()) {
      stack.push_back({nodes_[i].left, d + 1});
      stack.push_back({nodes_[i].right, d + 1});
    }
  }
  return deepest;
}

ForestModel train_forest(const FeatureMatrix& features, std::span<const Label> labels,
                         std::span<const std::size_t> rows, const ForestParams& params) {
  if (features.cols == 0 || features.rows == 0) throw Error("empty feature matrix");
  if (features.values.size() != features.rows * features.cols) {
    throw Error("feature matrix shape does not match its buffer");
  }
  if (labels.size() != features.rows) throw Error("label count does not match feature rows");
  if (params.trees == 0) throw Error("forest needs at least one tree");
  if (rows.size() < 2) throw Error("forest needs at least two training samples");
  if (features.cols > UINT32_MAX) throw Error("too many features");

  std::vector<Label> train_labels;
  train_labels.reserve(rows.size());
  for (auto r : rows) {
    if (r >= features.rows) throw Error("training row out of range");
    train_labels.push_back(labels[r]);
  }
  for (auto v : features.values) {
    if (!std::isfinite(v)) throw Error("non-finite feature value");
  }

  ForestModel model;
  model.dim = features.cols;
  model.seed = params.seed;
  model.class_weights = balanced_weights(train_labels);

  const std::size_t max_features =
      params.max_features > 0
          ? std::min(params.max_features, features.cols)
          : std::max<std::size_t>(
                1, static_cast<std::size_t>(std::sqrt(static_cast<double>(features.cols))));

  model.trees.resize(params.trees);
  parallel_for(params.trees, resolve_threads(params.threads), [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(params.seed, t);
    Rng bootstrap_rng(derive_seed(tree_seed, 0));

    std::vector<std::uint32_t> multiplicity(rows.size(), params.bootstrap ? 0 : 1);
    if (params.bootstrap) {
      for (std::size_t draw = 0; draw < rows.size(); ++draw) {
        ++multiplicity[bootstrap_rng.below(rows.size())];
      }
    }
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (multiplicity[i] == 0) continue;
      const double w = model.class_weights.of(train_labels[i]) * multiplicity[i];
      const bool pos = is_positive(train_labels[i]);
      samples.push_back({rows[i], pos ? 0.0 : w, pos ? w : 0.0});
    }
    TreeBuilder builder(features, max_features, derive_seed(tree_seed, 1));
    model.trees[t] = builder.build(std::move(samples));
  });
  return model;
}

ForestModel train_forest(const FeatureMatrix& features, std::span<const Label> labels,
                         const ForestParams& params) {
  std::vector<std::size_t> rows(features.rows);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return train_forest(features, labels, rows, params);
}

double predict_proba(const ForestModel& model, std::span<const float> x) {
  if (x.size() != model.dim) {
    throw Error("dimension mismatch: model expects " + std::to_string(model.dim) + ", got " +
                std::to_string(x.size()));
  }
  if (model.trees.empty()) throw Error("forest has no trees");
  double sum = 0.0;
  for (const auto& tree : model.trees) sum += tree.predict(x);
  return std::clamp(sum / static_cast<double>(model.trees.size()), 0.0, 1.0);
}

// Layout (little-endian): magic[8], version u32, dim u32, w_neg f64, w_pos f64,
// seed u64, n_trees u32, then per tree: n_nodes u32 and per node
// feature u32, threshold f64, left u32, right u32, neg f64, pos f64.
std::vector<std::uint8_t> serialize_forest(const ForestModel& model) {
  std::vector<std::uint8_t> out(kForestMagic.begin(), kForestMagic.end());
  put<std::uint32_t>(out, kForestVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim));
  put<double>(out, model.class_weights.negative);
  put<double>(out, model.class_weights.positive);
  put<std::uint64_t>(out, model.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.trees.size()));
  for (const auto& tree : model.trees) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tree.nodes().size()));
    for (const auto& n : tree.nodes()) {
      put<std::uint32_t>(out, n.feature);
      put<double>(out, n.threshold);
      put<std::uint32_t>(out, n.left);
      put<std::uint32_t>(out, n.right);
      put<double>(out, n.negative_mass);
      put<double>(out, n.positive_mass);
    }
  }
  return out;
}

ForestModel deserialize_forest(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kForestMagic.size() ||
      std::memcmp(bytes.data(), kForestMagic.data(), kForestMagic.size()) != 0) {
    throw Error("bad magic in forest model");
  }
  Reader in(bytes.subspan(kForestMagic.size()));
  const auto version = in.get<std::uint32_t>();
  if (version != kForestVersion) {
    throw Error("unsupported forest model version " + std::to_string(version));
  }
  ForestModel model;
  model.dim = in.get<std::uint32_t>();
  model.class_weights.negative = in.get<double>();
  model.class_weights.positive = in.get<double>();
  model.seed = in.get<std::uint64_t>();
  const auto n_trees = in.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < n_trees; ++t) {
    const auto n_nodes = in.get<std::uint32_t>();
    if (n_nodes == 0) throw Error("forest model contains an empty tree");
    std::vector<TreeNode> nodes(n_nodes);
    for (auto& n : nodes) {
      n.feature = in.get<std::uint32_t>();
      n.threshold = in.get<double>();
      n.left = in.get<std::uint32_t>();
      n.right = in.get<std::uint32_t>();
      n.negative_mass = in.get<double>();
      n.positive_mass = in.get<double>();
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (n.is_leaf()) {
        if (!(n.negative_mass >= 0.0 && n.positive_mass >= 0.0) ||
            n.negative_mass + n.positive_mass <= 0.0) {
          throw Error("forest model has a leaf without mass");
        }
        continue;
      }
      // Children always follow their parent, which also rules out cycles.
      if (n.feature >= model.dim || n.left <= i || n.right <= i || n.left >= n_nodes ||
          n.right >= n_nodes) {
        throw Error("forest model has a malformed node");
      }
    }
    model.trees.emplace_back(std::move(nodes));
  }
  if (!in.at_end()) throw Error("trailing bytes in forest model");
  return model;
}

void save_forest(const ForestModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_forest(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("I/O failure writing " + path.string());
}

ForestModel load_forest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_forest(bytes);
}

}  // namespace cxr
