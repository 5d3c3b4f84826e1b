#pragma once

// Training loop and the two evaluation protocols.
//
// Protocol A trains and tests each task separately (plus a Split-Mono row)
// and reports F1. Protocol B pools a fixed task subset, runs every requested
// variant and reports six metrics with signed-rank comparisons between
// neighbouring variants.
//
// Every (variant, task set, seed, fold) job is independent: it owns its
// parameters and RNG streams, derived only from the seed and fold index, so
// the report does not depend on the number of worker threads.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "recapd/dataset.hpp"
#include "recapd/folds.hpp"
#include "recapd/metrics.hpp"
#include "recapd/model.hpp"
#include "recapd/wilcoxon.hpp"

namespace recapd {

enum class Selection { kInner, kLast };

struct TrainOptions {
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  Selection selection = Selection::kInner;
};

enum class Pairing { kFold, kSeed };

struct EvalOptions {
  std::size_t n_outer = 5;
  std::size_t n_inner = 3;
  /// Fold assignment seed, shared by all variants and training seeds so
  /// comparisons are paired on identical splits.
  std::uint64_t split_seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Worker threads; 0 uses the hardware concurrency.
  std::size_t jobs = 0;
  Pairing pairing = Pairing::kFold;
  std::size_t split_mono_segments = 10;
  /// Protocol A: tasks to report (empty = every task present).
  std::vector<Task> tasks;
  /// Protocol B: pooled tasks.
  std::vector<Task> combined_tasks{Task::kDdk, Task::kSentences, Task::kRead, Task::kMonologue};
  double threshold = 0.5;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  ModelParams params;
  FeatureStats stats;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::size_t epochs = 0;
};

inline FeatureStats fit_stats(const Dataset& ds) {
  std::vector<const AspectFeatureSet*> ptrs;
  std::set<std::string> speakers;
  for (const auto& u : ds.samples) {
    ptrs.push_back(&u.features);
    speakers.insert(u.speaker_id);
  }
  return fit_feature_stats(ptrs, std::move(speakers));
}

inline std::vector<AspectFeatureSet> normalize_all(const Dataset& ds, const FeatureStats& stats) {
  std::vector<AspectFeatureSet> out;
  out.reserve(ds.size());
  for (const auto& u : ds.samples) out.push_back(normalize_features(u.features, stats));
  return out;
}

inline nlohmann::ordered_json to_json(const FeatureStats& st) {
  nlohmann::ordered_json j;
  j["aspects"] = st.aspect_names;
  j["mean"] = st.mean;
  j["stddev"] = st.stddev;
  j["speakers"] = st.provenance;
  return j;
}

inline FeatureStats feature_stats_from_json(const nlohmann::json& j, const std::string& source) {
  FeatureStats st;
  try {
    st.aspect_names = j.at("aspects").get<std::vector<std::string>>();
    st.mean = j.at("mean").get<std::vector<std::vector<double>>>();
    st.stddev = j.at("stddev").get<std::vector<std::vector<double>>>();
    st.provenance = j.at("speakers").get<std::set<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(source + ": invalid feature statistics: " + e.what());
  }
  if (st.mean.size() != st.aspect_names.size() || st.stddev.size() != st.mean.size()) {
    throw DimensionError(source + ": feature statistics lists are misaligned");
  }
  return st;
}

/// Mean eval-mode cross-entropy.
inline double mean_loss(const Dataset& ds, const std::vector<AspectFeatureSet>& feats, const ModelConfig& cfg,
                        const ModelParams& params) {
  double total = 0.0;
  Rng unused(0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tape tape;
    ForwardVars f = forward(tape, ds.samples[i].embeddings(), feats[i], cfg, params, unused, false);
    total += cross_entropy(f.logits, ds.samples[i].label).value()[0];
  }
  return total / static_cast<double>(ds.size());
}

/// Fits normalization on `train`, initializes from cfg.seed and runs
/// `opts.epochs` epochs of shuffled mini-batches. When `validation` is given
/// its loss is logged after every epoch.
inline TrainResult train_model(const Dataset& train, const ModelConfig& cfg, const TrainOptions& opts, Rng rng,
                               const Dataset* validation = nullptr) {
  if (train.empty()) throw ValueError("train_model: empty training set");
  if (opts.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  TrainResult res;
  res.stats = fit_stats(train);
  res.params = init_params(cfg);
  const auto feats = normalize_all(train, res.stats);
  std::vector<AspectFeatureSet> val_feats;
  if (validation) val_feats = normalize_all(*validation, res.stats);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Adam opt({.lr = opts.lr});
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      std::vector<Example> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + opts.batch_size); ++i) {
        const auto& u = train.samples[order[i]];
        batch.push_back({&u.embeddings(), &feats[order[i]], u.label});
      }
      epoch_loss += backward_step(batch, cfg, res.params, opt, rng) * static_cast<double>(batch.size());
    }
    res.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    if (validation) res.validation_loss.push_back(mean_loss(*validation, val_feats, cfg, res.params));
  }
  res.epochs = opts.epochs;
  return res;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct FoldRecord {
  std::string variant;
  std::string task_set;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::size_t n_test = 0;
  std::size_t epochs = 0;
  Metrics metrics;
};

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> stddev;
};

struct Comparison {
  std::optional<double> p_value;
  bool star = false;
};

struct ReportRow {
  std::string variant;
  std::string task_set;
  std::array<MetricSummary, 6> metrics;
  /// Against the row named in `compared_with` (same task set).
  std::array<Comparison, 6> comparisons;
  std::string compared_with;
};

struct EvalReport {
  std::string protocol;
  /// Indices into metric_names() shown in this report.
  std::vector<std::size_t> shown_metrics;
  std::string pairing;
  std::vector<ReportRow> rows;
  std::vector<FoldRecord> records;
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for a single value.
inline std::optional<double> sample_std(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  if (v.size() == 1) return 0.0;
  const double m = *mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Mean and std over folds within each seed, then the average of both over
/// seeds. Missing values (undefined AUC) are skipped.
inline MetricSummary summarize_metric(const std::vector<const FoldRecord*>& recs, std::size_t metric) {
  std::map<std::uint64_t, std::vector<double>> by_seed;
  for (const FoldRecord* r : recs) {
    auto& vals = by_seed[r->seed];
    if (auto v = metric_value(r->metrics, metric)) vals.push_back(*v);
  }
  std::vector<double> means, stds;
  for (const auto& [seed, vals] : by_seed) {
    if (vals.empty()) continue;
    means.push_back(*detail::mean_of(vals));
    stds.push_back(*detail::sample_std(vals));
  }
  return {detail::mean_of(means), detail::mean_of(stds)};
}

/// Paired samples for one metric: one pair per (seed, fold) under
/// Pairing::kFold, one per seed (fold means) under Pairing::kSeed. Pairs with
/// a missing value on either side are dropped.
inline std::pair<std::vector<double>, std::vector<double>> paired_values(const std::vector<const FoldRecord*>& a,
                                                                         const std::vector<const FoldRecord*>& b,
                                                                         std::size_t metric, Pairing pairing) {
  std::map<std::pair<std::uint64_t, std::size_t>, std::optional<double>> va, vb;
  for (const FoldRecord* r : a) va[{r->seed, r->fold}] = metric_value(r->metrics, metric);
  for (const FoldRecord* r : b) vb[{r->seed, r->fold}] = metric_value(r->metrics, metric);
  std::vector<double> x, y;
  if (pairing == Pairing::kFold) {
    for (const auto& [key, v] : va) {
      auto it = vb.find(key);
      if (it == vb.end() || !v || !it->second) continue;
      x.push_back(*v);
      y.push_back(*it->second);
    }
    return {x, y};
  }
  std::map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>> per_seed;
  for (const auto& [key, v] : va) {
    auto it = vb.find(key);
    if (it == vb.end() || !v || !it->second) continue;
    per_seed[key.first].first.push_back(*v);
    per_seed[key.first].second.push_back(*it->second);
  }
  for (const auto& [seed, p] : per_seed) {
    x.push_back(*detail::mean_of(p.first));
    y.push_back(*detail::mean_of(p.second));
  }
  return {x, y};
}

inline Comparison compare(const std::vector<const FoldRecord*>& a, const std::vector<const FoldRecord*>& b,
                          std::size_t metric, Pairing pairing) {
  auto [x, y] = paired_values(a, b, metric, pairing);
  try {
    const double p = wilcoxon_signed_rank(x, y).p_value;
    return {p, p < 0.05};
  } catch (const ValueError&) {
    return {};
  }
}

/// Builds rows in the given order. Within a task set each variant is
/// compared with the preceding one and the first with the last.
inline std::vector<ReportRow> aggregate(const std::vector<FoldRecord>& records,
                                        const std::vector<std::pair<std::string, std::string>>& row_keys,
                                        Pairing pairing) {
  auto select = [&](const std::pair<std::string, std::string>& key) {
    std::vector<const FoldRecord*> out;
    for (const auto& r : records)
      if (r.variant == key.first && r.task_set == key.second) out.push_back(&r);
    return out;
  };
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < row_keys.size(); ++i) {
    ReportRow row;
    row.variant = row_keys[i].first;
    row.task_set = row_keys[i].second;
    const auto mine = select(row_keys[i]);
    for (std::size_t m = 0; m < 6; ++m) row.metrics[m] = summarize_metric(mine, m);

    std::vector<std::size_t> peers;
    for (std::size_t j = 0; j < row_keys.size(); ++j)
      if (row_keys[j].second == row.task_set) peers.push_back(j);
    if (peers.size() >= 2) {
      const auto pos = static_cast<std::size_t>(std::find(peers.begin(), peers.end(), i) - peers.begin());
      const std::size_t other = peers[pos == 0 ? peers.size() - 1 : pos - 1];
      row.compared_with = row_keys[other].first;
      const auto theirs = select(row_keys[other]);
      for (std::size_t m = 0; m < 6; ++m) row.comparisons[m] = compare(mine, theirs, m, pairing);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string to_string(Pairing p) { return p == Pairing::kFold ? "fold" : "seed"; }

inline nlohmann::ordered_json to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < 6; ++i) {
    auto v = metric_value(m, i);
    j[metric_names()[i]] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  }
  return j;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  using J = nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? J(*v) : J(nullptr); };
  J j;
  j["protocol"] = r.protocol;
  J names = J::array();
  for (std::size_t m : r.shown_metrics) names.push_back(metric_names()[m]);
  j["metrics"] = names;
  j["pairing"] = r.pairing;
  j["rows"] = J::array();
  for (const auto& row : r.rows) {
    J jr;
    jr["variant"] = row.variant;
    jr["task_set"] = row.task_set;
    jr["compared_with"] = row.compared_with.empty() ? J(nullptr) : J(row.compared_with);
    for (std::size_t m : r.shown_metrics) {
      const auto& s = row.metrics[m];
      const auto& c = row.comparisons[m];
      jr[metric_names()[m]] = {{"mean", opt(s.mean)}, {"std", opt(s.stddev)}, {"p_value", opt(c.p_value)}, {"star", c.star}};
    }
    j["rows"].push_back(jr);
  }
  j["folds"] = J::array();
  for (const auto& f : r.records) {
    j["folds"].push_back({{"variant", f.variant},
                          {"task_set", f.task_set},
                          {"seed", f.seed},
                          {"fold", f.fold},
                          {"n_test", f.n_test},
                          {"epochs", f.epochs},
                          {"metrics", to_json(f.metrics)}});
  }
  return j;
}

/// Aligned text table; values are percentages, "*" marks p < 0.05.
inline std::string format_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"variant", "task_set"};
  for (std::size_t m : r.shown_metrics) header.push_back(metric_names()[m]);
  cells.push_back(header);
  for (const auto& row : r.rows) {
    std::vector<std::string> line{row.variant, row.task_set};
    for (std::size_t m : r.shown_metrics) {
      const auto& s = row.metrics[m];
      std::ostringstream os;
      if (s.mean) {
        os << std::fixed << std::setprecision(1) << 100.0 * *s.mean << " +- " << 100.0 * s.stddev.value_or(0.0);
        if (row.comparisons[m].star) os << '*';
      } else {
        os << "n/a";
      }
      line.push_back(os.str());
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    for (std::size_t c = 0; c < cells[l].size(); ++c) {
      out << (c ? "  " : "");
      if (c < 2) out << std::left << std::setw(static_cast<int>(width[c])) << cells[l][c];
      else out << std::right << std::setw(static_cast<int>(width[c])) << cells[l][c];
    }
    out << '\n';
    if (l == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Jobs
// ---------------------------------------------------------------------------

struct Job {
  Variant variant = Variant::kM4;
  std::string task_set;
  const Dataset* data = nullptr;
  const FoldPlan* plan = nullptr;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// by index is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Trains on the outer training speakers (after inner-fold selection of the
/// epoch count, if enabled) and scores the held-out speakers.
inline FoldRecord run_job(const Job& job, const ModelConfig& base, const TrainOptions& topts, const EvalOptions& eopts) {
  const OuterFold& fold = job.plan->outer.at(job.fold);
  const Dataset train = job.data->filter_speakers({fold.train.begin(), fold.train.end()});
  const Dataset test = job.data->filter_speakers({fold.test.begin(), fold.test.end()});
  const Rng seeds = Rng(job.seed).split(job.fold);
  ModelConfig cfg = base;
  cfg.variant = job.variant;
  Rng init = seeds.split(0);
  cfg.seed = init.next();

  TrainOptions final_opts = topts;
  if (topts.selection == Selection::kInner && !fold.inner.empty()) {
    const SpeakerSplit& inner = fold.inner.front();
    const Dataset itrain = job.data->filter_speakers({inner.train.begin(), inner.train.end()});
    const Dataset ival = job.data->filter_speakers({inner.test.begin(), inner.test.end()});
    TrainResult sel = train_model(itrain, cfg, topts, seeds.split(2), &ival);
    const auto best = std::min_element(sel.validation_loss.begin(), sel.validation_loss.end());
    final_opts.epochs = static_cast<std::size_t>(best - sel.validation_loss.begin()) + 1;
  }
  TrainResult res = train_model(train, cfg, final_opts, seeds.split(3));
  for (const auto& spk : fold.test) {
    if (res.stats.provenance.count(spk)) {
      throw ValueError("speaker leakage: test speaker '" + spk + "' contributed to normalization statistics");
    }
  }

  std::vector<double> scores;
  std::vector<int> labels;
  Rng unused(0);
  for (const auto& u : test.samples) {
    PredictionOutput p = predict(u.embeddings(), normalize_features(u.features, res.stats), cfg, res.params, unused);
    scores.push_back(p.pd_probability());
    labels.push_back(static_cast<int>(u.label));
  }
  FoldRecord rec;
  rec.variant = to_string(job.variant);
  rec.task_set = job.task_set;
  rec.seed = job.seed;
  rec.fold = job.fold;
  rec.n_test = test.size();
  rec.epochs = final_opts.epochs;
  rec.metrics = compute_metrics(scores, labels, eopts.threshold);
  return rec;
}

struct TaskSet {
  std::string name;
  Dataset data;
  FoldPlan plan;
};

inline std::vector<FoldRecord> run_jobs(const std::vector<TaskSet>& sets, const std::vector<Variant>& variants,
                                        const ModelConfig& base, const TrainOptions& topts, const EvalOptions& eopts) {
  if (eopts.seeds.empty()) throw ConfigError("eval: seed list is empty");
  std::vector<Job> jobs;
  for (Variant v : variants)
    for (const auto& ts : sets)
      for (std::uint64_t seed : eopts.seeds)
        for (std::size_t f = 0; f < ts.plan.outer.size(); ++f) jobs.push_back({v, ts.name, &ts.data, &ts.plan, seed, f});
  std::vector<FoldRecord> records(jobs.size());
  parallel_for(jobs.size(), eopts.jobs, [&](std::size_t i) { records[i] = run_job(jobs[i], base, topts, eopts); });
  return records;
}

inline TaskSet make_task_set(std::string name, Dataset data, const EvalOptions& eopts) {
  if (data.empty()) throw ValueError("task set '" + name + "' has no utterances");
  FoldPlan plan = make_folds(data, eopts.n_outer, eopts.n_inner, eopts.split_seed);
  return {std::move(name), std::move(data), std::move(plan)};
}

/// Per-task training and testing with one row per task plus Split-Mono.
inline EvalReport run_protocol_A(const Dataset& ds, Variant variant, const ModelConfig& base, const TrainOptions& topts,
                                 const EvalOptions& eopts) {
  std::vector<Task> tasks = eopts.tasks.empty() ? ds.tasks() : eopts.tasks;
  if (tasks.empty()) throw ValueError("protocol A: no tasks selected");
  std::vector<TaskSet> sets;
  for (Task t : tasks) {
    Dataset sub = ds.filter_tasks({t});
    if (sub.empty()) throw ValueError("protocol A: dataset has no '" + to_string(t) + "' utterances");
    sets.push_back(make_task_set(to_string(t), std::move(sub), eopts));
    if (t == Task::kMonologue) {
      sets.push_back(make_task_set("split-mono", split_monologues(ds, eopts.split_mono_segments), eopts));
    }
  }
  EvalReport rep;
  rep.protocol = "a";
  rep.shown_metrics = {2};
  rep.pairing = to_string(eopts.pairing);
  rep.records = run_jobs(sets, {variant}, base, topts, eopts);
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& s : sets) keys.emplace_back(to_string(variant), s.name);
  rep.rows = aggregate(rep.records, keys, eopts.pairing);
  return rep;
}

/// Combined-task training; one row per variant with six metrics.
inline EvalReport run_protocol_B(const Dataset& ds, const std::vector<Variant>& variants, const ModelConfig& base,
                                 const TrainOptions& topts, const EvalOptions& eopts) {
  if (variants.empty()) throw ValueError("protocol B: no variants selected");
  Dataset sub = ds.filter_tasks(eopts.combined_tasks);
  if (sub.empty()) throw ValueError("protocol B: dataset has none of the combined tasks");
  std::string name;
  for (Task t : sub.tasks()) name += (name.empty() ? "" : "+") + to_string(t);
  std::vector<TaskSet> sets;
  sets.push_back(make_task_set(name, std::move(sub), eopts));
  EvalReport rep;
  rep.protocol = "b";
  rep.shown_metrics = {0, 1, 2, 3, 4, 5};
  rep.pairing = to_string(eopts.pairing);
  rep.records = run_jobs(sets, variants, base, topts, eopts);
  std::vector<std::pair<std::string, std::string>> keys;
  for (Variant v : variants) keys.emplace_back(to_string(v), name);
  rep.rows = aggregate(rep.records, keys, eopts.pairing);
  return rep;
}

}  // namespace recapd
