#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recapd/error.hpp"

namespace recapd {

/// Binary classification metrics with PD (label 1) as the positive class.
/// Ratios with an empty denominator are reported as 0; AUC is absent when
/// only one class is present.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

inline const std::array<std::string, 6>& metric_names() {
  static const std::array<std::string, 6> names{"accuracy", "precision", "f1", "auc", "sensitivity", "specificity"};
  return names;
}

inline std::optional<double> metric_value(const Metrics& m, std::size_t index) {
  switch (index) {
    case 0: return m.accuracy;
    case 1: return m.precision;
    case 2: return m.f1;
    case 3: return m.auc;
    case 4: return m.sensitivity;
    default: return m.specificity;
  }
}

/// Mann-Whitney form of the ROC area, using midranks so tied scores count
/// one half.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  if (scores.empty()) throw ValueError("compute_metrics: no predictions");
  if (scores.size() != labels.size()) {
    throw DimensionError("compute_metrics: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValueError("compute_metrics: labels must be 0 or 1");
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? tp : fn) += 1;
    else (pred ? fp : tn) += 1;
  }
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  Metrics m;
  m.accuracy = (tp + tn) / static_cast<double>(scores.size());
  m.precision = ratio(tp, tp + fp);
  m.sensitivity = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  m.auc = roc_auc(scores, labels);
  return m;
}

}  // namespace recapd
