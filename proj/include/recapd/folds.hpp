#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "recapd/dataset.hpp"
#include "recapd/rng.hpp"

namespace recapd {

struct SpeakerSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

struct OuterFold {
  std::vector<std::string> train;
  std::vector<std::string> test;
  /// Splits of `train` used for model selection; `test` holds validation
  /// speakers.
  std::vector<SpeakerSplit> inner;
};

struct FoldPlan {
  std::vector<OuterFold> outer;
  std::uint64_t seed = 0;
};

namespace detail {

/// Stratified k-way partition: speakers of each class are shuffled and dealt
/// round-robin, PD first, HC continuing where PD stopped so fold sizes stay
/// within one of each other.
inline std::vector<std::vector<std::string>> stratified_partition(const std::map<std::string, std::size_t>& labels,
                                                                  std::size_t k, Rng rng) {
  std::vector<std::string> pd, hc;
  for (const auto& [spk, label] : labels) (label == kLabelPD ? pd : hc).push_back(spk);
  if (pd.size() < 2 || hc.size() < 2) {
    throw ValueError("make_folds: need at least 2 speakers per class, have " + std::to_string(pd.size()) + " PD and " +
                     std::to_string(hc.size()) + " HC");
  }
  if (k < 2 || k > pd.size() + hc.size()) {
    throw ValueError("make_folds: cannot split " + std::to_string(pd.size() + hc.size()) + " speakers into " +
                     std::to_string(k) + " folds");
  }
  rng.shuffle(std::span<std::string>(pd));
  rng.shuffle(std::span<std::string>(hc));
  std::vector<std::vector<std::string>> parts(k);
  std::size_t slot = 0;
  for (const auto& s : pd) parts[slot++ % k].push_back(s);
  for (const auto& s : hc) parts[slot++ % k].push_back(s);
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

inline std::vector<SpeakerSplit> splits_from_parts(const std::vector<std::vector<std::string>>& parts) {
  std::vector<SpeakerSplit> out;
  for (std::size_t f = 0; f < parts.size(); ++f) {
    SpeakerSplit s;
    s.test = parts[f];
    for (std::size_t g = 0; g < parts.size(); ++g)
      if (g != f) s.train.insert(s.train.end(), parts[g].begin(), parts[g].end());
    std::sort(s.train.begin(), s.train.end());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Speaker-independent nested folds, stratified by class. `n_inner` < 2
/// disables inner folds.
inline FoldPlan make_folds(const Dataset& ds, std::size_t n_outer, std::size_t n_inner, std::uint64_t seed) {
  const auto labels = ds.speaker_labels();
  Rng rng(seed);
  FoldPlan plan;
  plan.seed = seed;
  std::size_t index = 0;
  for (auto& split : detail::splits_from_parts(detail::stratified_partition(labels, n_outer, rng.split(0)))) {
    OuterFold fold{std::move(split.train), std::move(split.test), {}};
    if (n_inner >= 2) {
      std::map<std::string, std::size_t> sub;
      for (const auto& s : fold.train) sub.emplace(s, labels.at(s));
      fold.inner = detail::splits_from_parts(detail::stratified_partition(sub, n_inner, rng.split(1 + index)));
    }
    plan.outer.push_back(std::move(fold));
    ++index;
  }
  return plan;
}

}  // namespace recapd
