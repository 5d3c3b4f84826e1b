#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "recapd/error.hpp"

namespace recapd {

struct WilcoxonResult {
  /// Sum of ranks of positive differences (x - y > 0).
  double w_plus = 0.0;
  double w_minus = 0.0;
  /// min(W+, W-).
  double statistic = 0.0;
  /// Two-sided p-value.
  double p_value = 1.0;
  /// Pairs left after dropping zero differences.
  std::size_t n = 0;
  bool exact = false;
};

struct WilcoxonOptions {
  /// Largest n evaluated with the exact null distribution.
  std::size_t exact_max_n = 25;
  std::size_t min_n = 5;
};

namespace detail {

/// Midranks of |d|, ascending.
inline std::vector<double> abs_midranks(const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  return ranks;
}

/// Exact two-sided p under the sign-flip null, conditional on the observed
/// (possibly tied) ranks. Ranks are doubled so every midrank is an integer;
/// counts[s] is the number of the 2^n sign patterns whose doubled W+ is s.
inline double exact_p(const std::vector<double>& ranks, double w_plus) {
  std::vector<long> doubled;
  long total = 0;
  for (double r : ranks) {
    doubled.push_back(std::lround(2.0 * r));
    total += doubled.back();
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : doubled) {
    for (long s = reach; s >= 0; --s) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    reach += r;
  }
  const long obs = std::lround(2.0 * w_plus);
  double lower = 0.0, upper = 0.0, all = 0.0;
  for (long s = 0; s <= total; ++s) {
    const double c = counts[static_cast<std::size_t>(s)];
    all += c;
    if (s <= obs) lower += c;
    if (s >= obs) upper += c;
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

}  // namespace detail

/// Paired two-sided signed-rank test. Zero differences are dropped; fewer
/// than `min_n` remaining pairs is an error.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                           const WilcoxonOptions& opts = {}) {
  if (x.size() != y.size()) {
    throw DimensionError("wilcoxon: samples have " + std::to_string(x.size()) + " and " + std::to_string(y.size()) +
                         " values");
  }
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] - y[i];
    if (!std::isfinite(v)) throw ValueError("wilcoxon: non-finite difference at index " + std::to_string(i));
    if (v != 0.0) d.push_back(v);
  }
  if (d.empty()) throw ValueError("wilcoxon: all differences are zero");
  if (d.size() < opts.min_n) {
    throw ValueError("wilcoxon: " + std::to_string(d.size()) + " non-zero differences, need at least " +
                     std::to_string(opts.min_n));
  }
  const std::vector<double> ranks = detail::abs_midranks(d);
  WilcoxonResult r;
  r.n = d.size();
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = std::min(r.w_plus, r.w_minus);

  if (r.n <= opts.exact_max_n) {
    r.exact = true;
    r.p_value = detail::exact_p(ranks, r.w_plus);
    return r;
  }
  const double n = static_cast<double>(r.n);
  const double mean = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    var -= (t * t * t - t) / 48.0;
    i = j;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

}  // namespace recapd
