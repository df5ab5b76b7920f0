#include "cxr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "cxr/error.hpp"

namespace cxr {

namespace {

struct ClassTotals {
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

ClassTotals check_scores(std::span<const ScoredLabel> scores) {
  ClassTotals totals;
  for (const auto& s : scores) {
    if (std::isnan(s.score)) throw Error("NaN score");
    if (is_positive(s.label)) {
      ++totals.pos;
    } else {
      ++totals.neg;
    }
  }
  if (totals.pos == 0 || totals.neg == 0) {
    throw Error("ROC/AUC needs both classes (got " + std::to_string(totals.pos) + " positive, " +
                std::to_string(totals.neg) + " negative)");
  }
  return totals;
}

std::vector<std::size_t> order_by_score(std::span<const ScoredLabel> scores, bool descending) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a].score > scores[b].score : scores[a].score < scores[b].score;
  });
  return order;
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kTolerance = 1e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;

    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) <= kTolerance) return h;
  }
  return h;
}

// I_x(a, b) with y = 1 - x supplied separately so callers can avoid
// cancellation when x is close to 1.
double incomplete_beta(double a, double b, double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log(y);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, y) / b;
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const ScoredLabel> scores) {
  const auto totals = check_scores(scores);
  const auto order = order_by_score(scores, /*descending=*/true);

  std::vector<RocPoint> roc;
  roc.push_back({});
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]].score;
    while (i < order.size() && scores[order[i]].score == threshold) {
      if (is_positive(scores[order[i]].label)) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    roc.push_back({threshold, static_cast<double>(fp) / static_cast<double>(totals.neg),
                   static_cast<double>(tp) / static_cast<double>(totals.pos)});
  }
  return roc;
}

double auc(std::span<const ScoredLabel> scores) {
  const auto totals = check_scores(scores);
  const auto order = order_by_score(scores, /*descending=*/false);

  // Twice the Mann-Whitney U, kept integral until the final division.
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double value = scores[order[i]].score;
    std::uint64_t pos_here = 0;
    std::uint64_t neg_here = 0;
    while (i < order.size() && scores[order[i]].score == value) {
      if (is_positive(scores[order[i]].label)) {
        ++pos_here;
      } else {
        ++neg_here;
      }
      ++i;
    }
    twice_u += 2 * pos_here * neg_below + pos_here * neg_here;
    neg_below += neg_here;
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(totals.pos) * static_cast<double>(totals.neg));
}

double trapezoid_area(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return area;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw Error("mean of an empty sample");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw Error("variance needs at least two values");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return ss / static_cast<double>(values.size() - 1);
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error("incomplete beta needs a > 0 and b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw Error("incomplete beta needs x in [0, 1]");
  return incomplete_beta(a, b, x, 1.0 - x);
}

double student_t_two_tailed(double t, double dof) {
  if (!(dof > 0.0)) throw Error("degrees of freedom must be positive");
  if (std::isnan(t)) throw Error("t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  const double x = dof / (dof + t2);
  const double y = t2 / (dof + t2);
  return std::clamp(incomplete_beta(dof / 2.0, 0.5, x, y), 0.0, 1.0);
}

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error("Welch t-test needs at least two values per sample (got " +
                std::to_string(a.size()) + " and " + std::to_string(b.size()) + ")");
  }
  const double mean_a = mean(a);
  const double mean_b = mean(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double qa = sample_variance(a) / na;
  const double qb = sample_variance(b) / nb;
  const double se2 = qa + qb;

  TTestResult result;
  if (se2 == 0.0) {
    if (mean_a != mean_b) {
      throw Error("both samples have zero variance but different means");
    }
    result.t_stat = 0.0;
    result.dof = na + nb - 2.0;
    result.p_value = 1.0;
    return result;
  }
  result.t_stat = (mean_a - mean_b) / std::sqrt(se2);
  result.dof = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  result.p_value = student_t_two_tailed(result.t_stat, result.dof);
  return result;
}

}  // namespace cxr
