#pragma once

#include <limits>
#include <span>
#include <vector>

#include "cxr/feature_store.hpp"

namespace cxr {

struct ScoredLabel {
  double score = 0.0;
  Label label = Label::Negative;
};

/// One ROC operating point: predict positive when score >= threshold.
/// The leading (0,0) point carries threshold +inf.
struct RocPoint {
  double threshold = std::numeric_limits<double>::infinity();
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC curve with one point per distinct score, swept from high to low.
/// Starts at (0,0) and ends at (1,1). Throws on single-class input.
std::vector<RocPoint> roc_curve(std::span<const ScoredLabel> scores);

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted 1/2.
double auc(std::span<const ScoredLabel> scores);

/// Trapezoidal area under a ROC point list.
double trapezoid_area(std::span<const RocPoint> roc);

double mean(std::span<const double> values);
/// Unbiased (n - 1) sample variance.
double sample_variance(std::span<const double> values);

struct TTestResult {
  double t_stat = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Two-sample, two-tailed t-test with unequal variances (Welch).
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_tailed(double t, double dof);

}  // namespace cxr
