#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cxr/feature_store.hpp"
#include "cxr/metrics.hpp"

#include "json.hpp"

namespace cxr {

enum class Method { ImageSearch, RandomForest };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct ExperimentConfig {
  std::string dataset_id = "unnamed";
  Method method = Method::ImageSearch;
  std::size_t param = 11;  ///< K for image search, number of trees for the forest
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  bool stratified = false;
  bool exclude_self = true;  ///< image search: mask the validation fold from the pool
  unsigned threads = 0;
};

struct FoldReport {
  std::size_t fold_id = 0;  ///< 1-based
  double auc = 0.0;
  std::vector<RocPoint> roc;
  Method method = Method::ImageSearch;
  std::size_t param = 0;
  std::size_t n_validation = 0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<FoldReport> per_fold;
  double mean_auc = 0.0;
};

/// k-fold cross-validation of one method configuration over a store.
/// Every validation record is scored against a model built only from the
/// other folds. Deterministic given the config.
ExperimentReport run_experiment(const FeatureStore& store, const ExperimentConfig& config);

/// Per-fold validation index sets for a config (exposed for inspection).
std::vector<std::vector<std::size_t>> experiment_folds(const FeatureStore& store,
                                                       const ExperimentConfig& config);

nlohmann::ordered_json to_json(const ExperimentConfig& config);
nlohmann::ordered_json to_json(const ExperimentReport& report);

/// `threshold,fpr,tpr` rows; the leading point's threshold is written as `inf`.
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc);

}  // namespace cxr
