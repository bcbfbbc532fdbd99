#pragma once

// Threshold-free separation metrics. Positives (label 1) are in-distribution
// scores, negatives are test scores; higher means "more in-distribution".

#include <algorithm>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "inflow/error.hpp"

namespace inflow {

namespace detail {

struct LabeledScore {
  double score;
  bool positive;
};

/// Scores sorted descending, then walked in groups of equal value.
inline std::vector<LabeledScore> sorted_descending(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw ContractError("metrics need non-empty positive and negative sets");
  std::vector<LabeledScore> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const LabeledScore& a, const LabeledScore& b) { return a.score > b.score; });
  return all;
}

template <typename Fn>
void for_each_group(const std::vector<LabeledScore>& sorted, Fn&& fn) {
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].positive ? p : n) += 1;
      ++j;
    }
    fn(sorted[i].score, p, n);
    i = j;
  }
}

}  // namespace detail

/// Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg).
inline double auc_roc(std::span<const double> pos, std::span<const double> neg) {
  const auto sorted = detail::sorted_descending(pos, neg);
  // Twice the credited pair count, kept integral.
  std::uint64_t twice_credit = 0, pos_above = 0;
  // Walk descending: each negative group is beaten by all positives seen so far.
  detail::for_each_group(sorted, [&](double, std::uint64_t p, std::uint64_t n) {
    twice_credit += 2 * pos_above * n + p * n;
    pos_above += p;
  });
  return static_cast<double>(twice_credit) / (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// Smallest false-positive rate over observed thresholds t with
/// TPR(t) = |{pos >= t}| / |pos| of at least 0.95.
inline double fpr_at_95_tpr(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw ContractError("metrics need non-empty positive and negative sets");
  std::vector<double> p(pos.begin(), pos.end());
  std::sort(p.begin(), p.end(), std::greater<>());
  const std::size_t needed = (95 * p.size() + 99) / 100;
  const double t = p[needed - 1];
  const auto false_pos = std::count_if(neg.begin(), neg.end(), [t](double s) { return s >= t; });
  return static_cast<double>(false_pos) / static_cast<double>(neg.size());
}

/// Average precision: sum over descending unique thresholds of
/// (recall_k - recall_{k-1}) * precision_k.
inline double auc_pr(std::span<const double> pos, std::span<const double> neg) {
  const auto sorted = detail::sorted_descending(pos, neg);
  const double total_pos = static_cast<double>(pos.size());
  std::uint64_t tp = 0, fp = 0;
  double area = 0.0, prev_recall = 0.0;
  detail::for_each_group(sorted, [&](double, std::uint64_t p, std::uint64_t n) {
    tp += p;
    fp += n;
    const double recall = static_cast<double>(tp) / total_pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  });
  return area;
}

struct MetricsReport {
  double aucroc = 0.0;
  double fpr95 = 0.0;
  double aucpr = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline MetricsReport evaluate(std::span<const double> in_scores, std::span<const double> test_scores) {
  return {auc_roc(in_scores, test_scores), fpr_at_95_tpr(in_scores, test_scores), auc_pr(in_scores, test_scores),
          in_scores.size(), test_scores.size()};
}

}  // namespace inflow
