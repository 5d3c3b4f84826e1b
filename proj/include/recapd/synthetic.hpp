#pragma once

// Synthetic corpus with a planted signal. The informative aspect's features
// are N(+-s/2 * u, sigma^2 I) for PD/HC along a random unit direction u, so
// the Bayes accuracy is Phi(s / (2 sigma)); every other aspect is N(0,
// sigma^2 I) for both classes. SSL frames mix a shared offset, a few
// sinusoids along fixed directions and per-frame noise. With couple_ssl each
// frame also moves by +-ssl_signal/2 along a fixed unit direction.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "recapd/dataset.hpp"
#include "recapd/rng.hpp"

namespace recapd {

struct SynthConfig {
  std::size_t speakers_per_class = 20;
  std::size_t utterances_per_speaker = 6;
  std::size_t t_min = 20;
  std::size_t t_max = 40;
  std::size_t embedding_dim = 32;
  std::vector<AspectSpec> aspects{{"articulation", 9}, {"glottal", 9}, {"phonation", 9}, {"prosody", 8}};
  std::size_t informative_aspect = 0;
  double signal_strength = 10.0;
  double noise_std = 1.0;
  bool couple_ssl = true;
  double ssl_signal = 1.0;
  double ssl_noise = 1.0;
  double ssl_offset = 1.0;
  std::size_t ssl_rank = 4;
  /// Assigned to each speaker's utterances in rotation.
  std::vector<Task> tasks{Task::kDdk, Task::kSentences, Task::kRead, Task::kMonologue};
  std::uint64_t seed = 0;

  void validate() const {
    if (speakers_per_class < 2) throw ConfigError("synth: need at least 2 speakers per class");
    if (utterances_per_speaker == 0) throw ConfigError("synth: utterances_per_speaker must be positive");
    if (t_min == 0 || t_max < t_min) throw ConfigError("synth: T range must satisfy 0 < t_min <= t_max");
    if (embedding_dim == 0) throw ConfigError("synth: D must be positive");
    if (aspects.empty()) throw ConfigError("synth: at least one aspect is required");
    for (const auto& a : aspects)
      if (a.features == 0) throw ConfigError("synth: aspect '" + a.name + "' has no features");
    if (informative_aspect >= aspects.size()) {
      throw ConfigError("synth: informative_aspect " + std::to_string(informative_aspect) + " is not below K=" +
                        std::to_string(aspects.size()));
    }
    if (!(signal_strength >= 0.0)) throw ConfigError("synth: signal_strength must be >= 0");
    if (!(noise_std > 0.0)) throw ConfigError("synth: noise_std must be positive");
    if (!(ssl_noise >= 0.0) || !(ssl_signal >= 0.0)) throw ConfigError("synth: SSL noise and signal must be >= 0");
    if (tasks.empty()) throw ConfigError("synth: task list is empty");
  }

  /// Accuracy of the optimal classifier on the informative aspect alone.
  double bayes_accuracy() const { return 0.5 * std::erfc(-signal_strength / (2.0 * noise_std) / std::numbers::sqrt2); }
};

namespace detail {

inline std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

inline std::string padded(std::size_t v, int width) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << v;
  return os.str();
}

}  // namespace detail

/// Builds the corpus in memory with embeddings attached. ssl_path is set to
/// the relative location write_synthetic() uses.
inline Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng structure = root.split(0);
  const std::size_t d = cfg.embedding_dim;
  const std::vector<double> direction = detail::random_unit(cfg.aspects[cfg.informative_aspect].features, structure);
  const std::vector<double> ssl_direction = detail::random_unit(d, structure);
  const std::vector<double> offset_dir = detail::random_unit(d, structure);
  std::vector<std::vector<double>> basis;
  std::vector<double> freq;
  for (std::size_t r = 0; r < cfg.ssl_rank; ++r) {
    basis.push_back(detail::random_unit(d, structure));
    freq.push_back(structure.uniform(0.05, 0.5));
  }

  Dataset ds;
  Rng rng = root.split(1);
  for (std::size_t label : {kLabelHC, kLabelPD}) {
    const double sign = label == kLabelPD ? 1.0 : -1.0;
    for (std::size_t s = 0; s < cfg.speakers_per_class; ++s) {
      const std::string speaker = label_name(label) + detail::padded(s, 3);
      for (std::size_t i = 0; i < cfg.utterances_per_speaker; ++i) {
        Utterance u;
        u.speaker_id = speaker;
        u.utterance_id = speaker + "_u" + detail::padded(i, 2);
        u.task = cfg.tasks[i % cfg.tasks.size()];
        u.label = label;
        u.ssl_path = "ssl/" + u.utterance_id + ".emb";
        for (std::size_t k = 0; k < cfg.aspects.size(); ++k) {
          Aspect a{cfg.aspects[k].name, std::vector<double>(cfg.aspects[k].features)};
          for (std::size_t j = 0; j < a.values.size(); ++j) {
            a.values[j] = cfg.noise_std * rng.normal();
            if (k == cfg.informative_aspect) a.values[j] += sign * cfg.signal_strength / 2.0 * direction[j];
          }
          u.features.aspects.push_back(std::move(a));
        }
        const std::size_t t = cfg.t_min + rng.below(cfg.t_max - cfg.t_min + 1);
        std::vector<double> phase(cfg.ssl_rank);
        for (double& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
        Tensor ssl({t, d});
        for (std::size_t f = 0; f < t; ++f) {
          for (std::size_t j = 0; j < d; ++j) {
            double v = cfg.ssl_offset * offset_dir[j] + cfg.ssl_noise * rng.normal();
            for (std::size_t r = 0; r < cfg.ssl_rank; ++r)
              v += std::sin(freq[r] * static_cast<double>(f) + phase[r]) * basis[r][j];
            if (cfg.couple_ssl) v += sign * cfg.ssl_signal / 2.0 * ssl_direction[j];
            ssl(f, j) = v;
          }
        }
        u.ssl = std::make_shared<const Tensor>(std::move(ssl));
        ds.samples.push_back(std::move(u));
      }
    }
  }
  return ds;
}

inline FeatureManifest synthetic_feature_manifest(const SynthConfig& cfg) {
  FeatureManifest m;
  m.embedding_dim = cfg.embedding_dim;
  for (const auto& a : cfg.aspects) {
    FeatureManifest::Group g{a.name, {}};
    for (std::size_t j = 0; j < a.features; ++j) g.feature_names.push_back(a.name + "_" + std::to_string(j));
    m.aspects.push_back(std::move(g));
  }
  return m;
}

/// Writes manifest.jsonl, feature_manifest.json and ssl/*.emb under `dir`.
inline Dataset write_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir) {
  Dataset ds = generate(cfg);
  std::filesystem::create_directories(dir / "ssl");
  for (const auto& u : ds.samples) save_ssl_embeddings(dir / u.ssl_path, u.embeddings());
  save_manifest(dir / kManifestFile, ds);
  save_feature_manifest(dir / kFeatureManifestFile, synthetic_feature_manifest(cfg));
  return ds;
}

// ---------------------------------------------------------------------------
// Plant check
// ---------------------------------------------------------------------------

struct PlantReport {
  std::vector<std::string> aspect_names;
  /// Held-out accuracy of a logistic probe on each aspect alone.
  std::vector<double> probe_accuracy;
  std::size_t best_aspect = 0;
  std::size_t informative_aspect = 0;
  /// Informative probe accuracy minus the best other probe.
  double margin = 0.0;
  double required_margin = 0.0;
  bool mismatch = false;
};

namespace detail {

/// Logistic regression by full-batch gradient descent on standardized
/// features; returns accuracy on the test rows.
inline double probe_accuracy(const std::vector<std::vector<double>>& x_train, const std::vector<int>& y_train,
                             const std::vector<std::vector<double>>& x_test, const std::vector<int>& y_test) {
  const std::size_t f = x_train.front().size();
  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (const auto& x : x_train)
    for (std::size_t j = 0; j < f; ++j) mean[j] += x[j] / static_cast<double>(x_train.size());
  for (const auto& x : x_train)
    for (std::size_t j = 0; j < f; ++j) sd[j] += (x[j] - mean[j]) * (x[j] - mean[j]) / static_cast<double>(x_train.size());
  for (double& s : sd) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  auto standardize = [&](const std::vector<double>& x) {
    std::vector<double> z(f);
    for (std::size_t j = 0; j < f; ++j) z[j] = (x[j] - mean[j]) / sd[j];
    return z;
  };
  std::vector<std::vector<double>> xs;
  for (const auto& x : x_train) xs.push_back(standardize(x));
  std::vector<double> w(f, 0.0);
  double b = 0.0;
  const double lr = 0.5, l2 = 1e-3;
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gw(f, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double z = b;
      for (std::size_t j = 0; j < f; ++j) z += w[j] * xs[i][j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - y_train[i];
      for (std::size_t j = 0; j < f; ++j) gw[j] += err * xs[i][j];
      gb += err;
    }
    const double n = static_cast<double>(xs.size());
    for (std::size_t j = 0; j < f; ++j) w[j] -= lr * (gw[j] / n + l2 * w[j]);
    b -= lr * gb / n;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x_test.size(); ++i) {
    const auto z = standardize(x_test[i]);
    double s = b;
    for (std::size_t j = 0; j < f; ++j) s += w[j] * z[j];
    correct += static_cast<std::size_t>((s >= 0.0 ? 1 : 0) == y_test[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(x_test.size());
}

}  // namespace detail

/// Trains one probe per aspect on half of each class's speakers (sorted ids,
/// even positions) and tests on the rest. Flags a mismatch when the best
/// probe is not `informative_aspect` or its lead is below `required_margin`.
inline PlantReport plant_check(const Dataset& ds, std::size_t informative_aspect, double required_margin = 0.05) {
  if (ds.empty()) throw ValueError("plant_check: empty dataset");
  const auto labels = ds.speaker_labels();
  std::set<std::string> train_speakers;
  std::size_t seen[2] = {0, 0};
  for (const auto& [spk, label] : labels)
    if (seen[label]++ % 2 == 0) train_speakers.insert(spk);

  PlantReport rep;
  rep.aspect_names = ds.samples.front().features.names();
  rep.informative_aspect = informative_aspect;
  rep.required_margin = required_margin;
  if (informative_aspect >= rep.aspect_names.size()) {
    rep.mismatch = true;
    return rep;
  }
  for (std::size_t k = 0; k < rep.aspect_names.size(); ++k) {
    std::vector<std::vector<double>> xtr, xte;
    std::vector<int> ytr, yte;
    for (const auto& u : ds.samples) {
      const bool train = train_speakers.count(u.speaker_id) > 0;
      (train ? xtr : xte).push_back(u.features.aspects[k].values);
      (train ? ytr : yte).push_back(static_cast<int>(u.label));
    }
    if (xtr.empty() || xte.empty()) throw ValueError("plant_check: need at least 2 speakers per class");
    rep.probe_accuracy.push_back(detail::probe_accuracy(xtr, ytr, xte, yte));
  }
  rep.best_aspect = static_cast<std::size_t>(
      std::max_element(rep.probe_accuracy.begin(), rep.probe_accuracy.end()) - rep.probe_accuracy.begin());
  double best_other = 0.0;
  for (std::size_t k = 0; k < rep.probe_accuracy.size(); ++k)
    if (k != informative_aspect) best_other = std::max(best_other, rep.probe_accuracy[k]);
  rep.margin = rep.probe_accuracy[informative_aspect] - (rep.probe_accuracy.size() > 1 ? best_other : 0.5);
  rep.mismatch = rep.best_aspect != informative_aspect || rep.margin < required_margin;
  return rep;
}

inline nlohmann::ordered_json to_json(const PlantReport& r) {
  nlohmann::ordered_json j;
  j["aspects"] = r.aspect_names;
  j["probe_accuracy"] = r.probe_accuracy;
  j["best_aspect"] = r.best_aspect;
  j["informative_aspect"] = r.informative_aspect;
  j["margin"] = r.margin;
  j["required_margin"] = r.required_margin;
  j["mismatch"] = r.mismatch;
  return j;
}

}  // namespace recapd
