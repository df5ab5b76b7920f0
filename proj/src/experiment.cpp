#include "cxr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "cxr/cv.hpp"
#include "cxr/error.hpp"
#include "cxr/forest.hpp"
#include "cxr/knn.hpp"
#include "cxr/vote.hpp"

namespace cxr {

namespace {

ClassCounts count_rows(const FeatureStore& store, std::span<const std::size_t> rows) {
  ClassCounts c;
  for (auto r : rows) {
    if (is_positive(store.label(r))) {
      ++c.positive;
    } else {
      ++c.negative;
    }
  }
  return c;
}

std::vector<ScoredLabel> score_fold_forest(const FeatureStore& store,
                                           std::span<const std::size_t> train,
                                           std::span<const std::size_t> validation,
                                           const ExperimentConfig& config, std::size_t fold) {
  ForestParams params;
  params.trees = config.param;
  params.seed = derive_seed(config.seed, SeedStream::kForestBase + fold);
  params.threads = config.threads;
  const auto labels = store.labels();
  const auto model = train_forest(FeatureMatrix::of(store), labels, train, params);
  std::vector<ScoredLabel> scored;
  scored.reserve(validation.size());
  for (auto r : validation) scored.push_back({predict_proba(model, store.row(r)), store.label(r)});
  return scored;
}

}  // namespace

std::string_view to_string(Method method) {
  return method == Method::ImageSearch ? "image_search" : "random_forest";
}

Method parse_method(std::string_view text) {
  if (text == "image_search" || text == "image-search" || text == "knn") return Method::ImageSearch;
  if (text == "random_forest" || text == "random-forest" || text == "rf") {
    return Method::RandomForest;
  }
  throw Error("unknown method '" + std::string(text) + "' (expected image_search or rf)");
}

std::vector<std::vector<std::size_t>> experiment_folds(const FeatureStore& store,
                                                       const ExperimentConfig& config) {
  const auto fold_seed = derive_seed(config.seed, SeedStream::kFoldShuffle);
  if (config.stratified) {
    const auto labels = store.labels();
    return stratified_kfold_partition(labels, config.folds, fold_seed);
  }
  return kfold_partition(store.size(), config.folds, fold_seed);
}

ExperimentReport run_experiment(const FeatureStore& store, const ExperimentConfig& config) {
  if (config.param == 0) throw Error("method parameter (K or trees) must be at least 1");
  const auto folds = experiment_folds(store, config);

  ExperimentReport report;
  report.config = config;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& validation = folds[f];
    std::vector<std::size_t> train;
    train.reserve(store.size() - validation.size());
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train.begin(), train.end());

    const auto fold_name = "fold " + std::to_string(f + 1);
    const auto val_counts = count_rows(store, validation);
    const auto train_counts = count_rows(store, train);
    if (train_counts.positive == 0 || train_counts.negative == 0) {
      throw Error(fold_name + ": training portion lacks a class (" +
                  std::to_string(train_counts.positive) + " positive, " +
                  std::to_string(train_counts.negative) + " negative)");
    }
    if (val_counts.positive == 0 || val_counts.negative == 0) {
      throw Error(fold_name + ": validation section lacks a class (" +
                  std::to_string(val_counts.positive) + " positive, " +
                  std::to_string(val_counts.negative) + " negative); AUC undefined");
    }

    std::vector<ScoredLabel> scored;
    if (config.method == Method::ImageSearch) {
      SearchParams params;
      params.k = config.param;
      params.threads = config.threads;
      if (config.exclude_self) {
        params.exclude = std::make_shared<RowFilter>(store.size(), validation);
      }
      try {
        scored = score_queries(store, validation, params);
      } catch (const Error& e) {
        throw Error(fold_name + ": " + e.what());
      }
    } else {
      scored = score_fold_forest(store, train, validation, config, f);
    }

    FoldReport fold;
    fold.fold_id = f + 1;
    fold.method = config.method;
    fold.param = config.param;
    fold.n_validation = validation.size();
    fold.roc = roc_curve(scored);
    fold.auc = auc(scored);
    report.per_fold.push_back(std::move(fold));
  }

  std::vector<double> aucs;
  for (const auto& f : report.per_fold) aucs.push_back(f.auc);
  report.mean_auc = mean(aucs);
  return report;
}

nlohmann::ordered_json to_json(const ExperimentConfig& config) {
  nlohmann::ordered_json j;
  j["dataset_id"] = config.dataset_id;
  j["method"] = to_string(config.method);
  j[config.method == Method::ImageSearch ? "k" : "trees"] = config.param;
  j["folds"] = config.folds;
  j["seed"] = config.seed;
  j["stratified"] = config.stratified;
  if (config.method == Method::ImageSearch) j["exclude_self"] = config.exclude_self;
  return j;
}

nlohmann::ordered_json to_json(const ExperimentReport& report) {
  nlohmann::ordered_json j;
  j["v"] = 1;
  j["config"] = to_json(report.config);
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : report.per_fold) {
    nlohmann::ordered_json fj;
    fj["fold"] = f.fold_id;
    fj["auc"] = f.auc;
    fj["n_validation"] = f.n_validation;
    auto roc = nlohmann::ordered_json::array();
    for (const auto& p : f.roc) roc.push_back({p.fpr, p.tpr});
    fj["roc"] = std::move(roc);
    folds.push_back(std::move(fj));
  }
  j["per_fold"] = std::move(folds);
  j["mean_auc"] = report.mean_auc;
  return j;
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc) {
    if (std::isinf(p.threshold)) {
      out << "inf";
    } else {
      out << p.threshold;
    }
    out << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  if (!out) throw Error("I/O failure writing " + path.string());
}

}  // namespace cxr
