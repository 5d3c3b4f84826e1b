#pragma once

// Run configuration: one JSON document with fixed sections. Layers are
// merged in order (defaults, feature manifest, config file, command-line
// overrides); a key absent from the defaults is rejected.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "recapd/dataset.hpp"
#include "recapd/protocol.hpp"
#include "recapd/synthetic.hpp"

namespace recapd {

using Json = nlohmann::ordered_json;

inline Json default_config() {
  const SynthConfig synth;
  Json aspects = Json::array();
  for (const auto& a : synth.aspects) aspects.push_back({{"name", a.name}, {"features", a.features}});
  Json synth_tasks = Json::array();
  for (Task t : synth.tasks) synth_tasks.push_back(to_string(t));
  const EvalOptions eval;
  Json combined = Json::array();
  for (Task t : eval.combined_tasks) combined.push_back(to_string(t));

  Json c;
  c["model"] = {{"variant", "m4"}, {"D", 1024}, {"hidden1", 128}, {"hidden2", 512}, {"dropout", 0.1}, {"max_frames", 0}};
  c["train"] = {{"lr", 1e-4}, {"batch_size", 16}, {"epochs", 50}, {"selection", "inner"}, {"seed", 0}};
  c["eval"] = {{"protocol", "b"},
               {"variants", {"m1", "m2", "m3", "m4"}},
               {"n_outer", eval.n_outer},
               {"n_inner", eval.n_inner},
               {"split_seed", eval.split_seed},
               {"seeds", eval.seeds},
               {"pairing", "fold"},
               {"split_mono_segments", eval.split_mono_segments},
               {"tasks", Json::array()},
               {"combined_tasks", combined},
               {"threshold", eval.threshold}};
  c["synth"] = {{"speakers_per_class", synth.speakers_per_class},
                {"utterances_per_speaker", synth.utterances_per_speaker},
                {"t_min", synth.t_min},
                {"t_max", synth.t_max},
                {"D", synth.embedding_dim},
                {"aspects", aspects},
                {"informative_aspect", synth.informative_aspect},
                {"signal_strength", synth.signal_strength},
                {"noise_std", synth.noise_std},
                {"couple_ssl", synth.couple_ssl},
                {"ssl_signal", synth.ssl_signal},
                {"ssl_noise", synth.ssl_noise},
                {"ssl_offset", synth.ssl_offset},
                {"ssl_rank", synth.ssl_rank},
                {"tasks", synth_tasks},
                {"seed", synth.seed}};
  c["data"] = {{"dir", ""}};
  c["explain"] = {{"max_svg", 10}};
  c["jobs"] = 0;
  return c;
}

namespace detail {

inline bool compatible(const Json& def, const Json& v) {
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

inline void merge(Json& base, const Json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config" + (prefix.empty() ? "" : " '" + prefix + "'") + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else {
      if (!compatible(slot, value)) {
        throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                          value.type_name());
      }
      slot = value;
    }
  }
}

}  // namespace detail

inline void merge_config(Json& base, const Json& patch) { detail::merge(base, patch, ""); }

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// otherwise taken as a string.
inline void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  merge_config(cfg, patch);
}

inline Json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// The feature manifest fixes D for the model section.
inline void apply_feature_manifest(Json& cfg, const FeatureManifest& fm) { cfg["model"]["D"] = fm.embedding_dim; }

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T get(const Json& cfg, const char* section, const char* key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

inline std::vector<Task> tasks(const Json& cfg, const char* section, const char* key) {
  std::vector<Task> out;
  for (const auto& s : get<std::vector<std::string>>(cfg, section, key)) {
    try {
      out.push_back(parse_task(s));
    } catch (const ValueError& e) {
      throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
  }
  return out;
}

inline std::size_t non_negative(const Json& cfg, const char* section, const char* key) {
  const double v = get<double>(cfg, section, key);
  if (v < 0 || v != std::floor(v)) {
    throw ConfigError(std::string("config key '") + section + "." + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline ModelConfig model_config(const Json& cfg, const std::vector<AspectSpec>& aspects) {
  ModelConfig m;
  m.variant = parse_variant(detail::get<std::string>(cfg, "model", "variant"));
  m.embedding_dim = detail::non_negative(cfg, "model", "D");
  m.hidden1 = detail::non_negative(cfg, "model", "hidden1");
  m.hidden2 = detail::non_negative(cfg, "model", "hidden2");
  m.dropout = detail::get<double>(cfg, "model", "dropout");
  m.max_frames = detail::non_negative(cfg, "model", "max_frames");
  m.seed = detail::get<std::uint64_t>(cfg, "train", "seed");
  m.aspects = aspects;
  m.validate();
  return m;
}

inline TrainOptions train_options(const Json& cfg) {
  TrainOptions t;
  t.lr = detail::get<double>(cfg, "train", "lr");
  t.batch_size = detail::non_negative(cfg, "train", "batch_size");
  t.epochs = detail::non_negative(cfg, "train", "epochs");
  const auto sel = detail::get<std::string>(cfg, "train", "selection");
  if (sel == "inner") t.selection = Selection::kInner;
  else if (sel == "last") t.selection = Selection::kLast;
  else throw ConfigError("train.selection must be \"inner\" or \"last\", got \"" + sel + "\"");
  if (!(t.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (t.epochs == 0) throw ConfigError("train.epochs must be positive");
  return t;
}

inline EvalOptions eval_options(const Json& cfg) {
  EvalOptions e;
  e.n_outer = detail::non_negative(cfg, "eval", "n_outer");
  e.n_inner = detail::non_negative(cfg, "eval", "n_inner");
  e.split_seed = detail::get<std::uint64_t>(cfg, "eval", "split_seed");
  e.seeds = detail::get<std::vector<std::uint64_t>>(cfg, "eval", "seeds");
  e.jobs = static_cast<std::size_t>(cfg.at("jobs").get<double>());
  const auto pairing = detail::get<std::string>(cfg, "eval", "pairing");
  if (pairing == "fold") e.pairing = Pairing::kFold;
  else if (pairing == "seed") e.pairing = Pairing::kSeed;
  else throw ConfigError("eval.pairing must be \"fold\" or \"seed\", got \"" + pairing + "\"");
  e.split_mono_segments = detail::non_negative(cfg, "eval", "split_mono_segments");
  e.tasks = detail::tasks(cfg, "eval", "tasks");
  e.combined_tasks = detail::tasks(cfg, "eval", "combined_tasks");
  e.threshold = detail::get<double>(cfg, "eval", "threshold");
  if (e.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  if (e.n_outer < 2) throw ConfigError("eval.n_outer must be at least 2");
  if (e.split_mono_segments == 0) throw ConfigError("eval.split_mono_segments must be positive");
  return e;
}

inline std::vector<Variant> eval_variants(const Json& cfg) {
  std::vector<Variant> out;
  for (const auto& s : detail::get<std::vector<std::string>>(cfg, "eval", "variants")) out.push_back(parse_variant(s));
  if (out.empty()) throw ConfigError("eval.variants must not be empty");
  return out;
}

inline SynthConfig synth_config(const Json& cfg) {
  SynthConfig s;
  s.speakers_per_class = detail::non_negative(cfg, "synth", "speakers_per_class");
  s.utterances_per_speaker = detail::non_negative(cfg, "synth", "utterances_per_speaker");
  s.t_min = detail::non_negative(cfg, "synth", "t_min");
  s.t_max = detail::non_negative(cfg, "synth", "t_max");
  s.embedding_dim = detail::non_negative(cfg, "synth", "D");
  s.aspects.clear();
  try {
    for (const auto& a : cfg.at("synth").at("aspects"))
      s.aspects.push_back({a.at("name").get<std::string>(), a.at("features").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth.aspects: ") + e.what());
  }
  s.informative_aspect = detail::non_negative(cfg, "synth", "informative_aspect");
  s.signal_strength = detail::get<double>(cfg, "synth", "signal_strength");
  s.noise_std = detail::get<double>(cfg, "synth", "noise_std");
  s.couple_ssl = detail::get<bool>(cfg, "synth", "couple_ssl");
  s.ssl_signal = detail::get<double>(cfg, "synth", "ssl_signal");
  s.ssl_noise = detail::get<double>(cfg, "synth", "ssl_noise");
  s.ssl_offset = detail::get<double>(cfg, "synth", "ssl_offset");
  s.ssl_rank = detail::non_negative(cfg, "synth", "ssl_rank");
  s.tasks = detail::tasks(cfg, "synth", "tasks");
  s.seed = detail::get<std::uint64_t>(cfg, "synth", "seed");
  s.validate();
  return s;
}

}  // namespace recapd
