#pragma once

// Utterance-level dataset, its JSON-lines manifest, the feature manifest and
// the SSL embedding container.
//
// Embedding container (little-endian):
//   12 bytes  magic "RECAPDSSLEMB"
//   u32       version (1)
//   u32 T, u32 D
//   T*D f32   row-major values

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "recapd/aspect_encoder.hpp"
#include "recapd/binary_io.hpp"
#include "recapd/model.hpp"
#include "recapd/tensor.hpp"

namespace recapd {

enum class Task { kVowels, kWords, kDdk, kSentences, kRead, kMonologue };

inline constexpr std::array<Task, 6> kAllTasks{Task::kVowels, Task::kWords,     Task::kDdk,
                                               Task::kSentences, Task::kRead, Task::kMonologue};

inline std::string to_string(Task t) {
  switch (t) {
    case Task::kVowels: return "vowels";
    case Task::kWords: return "words";
    case Task::kDdk: return "ddk";
    case Task::kSentences: return "sentences";
    case Task::kRead: return "read";
    case Task::kMonologue: return "monologue";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : kAllTasks)
    if (to_string(t) == s) return t;
  throw ValueError("unknown task '" + s + "' (expected vowels, words, ddk, sentences, read or monologue)");
}

inline std::string label_name(std::size_t label) { return label == kLabelPD ? "PD" : "HC"; }

inline std::size_t parse_label(const std::string& s) {
  if (s == "PD") return kLabelPD;
  if (s == "HC") return kLabelHC;
  throw ValueError("label must be \"PD\" or \"HC\", got \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// Embedding container
// ---------------------------------------------------------------------------

inline constexpr char kSslMagic[12] = {'R', 'E', 'C', 'A', 'P', 'D', 'S', 'S', 'L', 'E', 'M', 'B'};
inline constexpr std::uint32_t kSslVersion = 1;

inline void save_ssl_embeddings(const std::filesystem::path& path, const Tensor& ssl) {
  ssl.require_rank(2);
  binary::Writer w;
  w.bytes(kSslMagic, sizeof kSslMagic);
  w.u32(kSslVersion);
  w.u32(static_cast<std::uint32_t>(ssl.rows()));
  w.u32(static_cast<std::uint32_t>(ssl.cols()));
  for (double v : ssl.data()) w.f32(static_cast<float>(v));
  w.save(path);
}

/// Reads a [T x D] matrix. `expected_dim` (when non-zero) is checked against
/// the header before the payload is touched.
inline Tensor load_ssl_embeddings(const std::filesystem::path& path, std::size_t expected_dim = 0) {
  binary::Reader r = binary::Reader::open(path);
  char magic[sizeof kSslMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kSslMagic, sizeof magic) != 0) r.fail("bad embedding magic");
  const std::uint32_t version = r.u32();
  if (version != kSslVersion) r.fail("unsupported embedding version " + std::to_string(version));
  const std::uint32_t t = r.u32();
  const std::uint32_t d = r.u32();
  if (t == 0 || d == 0) r.fail("header declares an empty matrix (T=" + std::to_string(t) + ", D=" + std::to_string(d) + ")");
  if (expected_dim && d != expected_dim) {
    throw DimensionError(path.string() + ": embedding dimension " + std::to_string(d) + " does not match model D=" +
                         std::to_string(expected_dim));
  }
  const std::uint64_t payload = std::uint64_t{t} * d * 4;
  if (r.remaining() != payload) {
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, header declares " + std::to_string(payload));
  }
  Tensor out({t, d});
  for (double& v : out.data()) v = r.f32();
  return out;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Utterance {
  std::string utterance_id;
  std::string speaker_id;
  Task task = Task::kVowels;
  /// As written in the manifest (relative paths resolve against the
  /// manifest directory).
  std::string ssl_path;
  AspectFeatureSet features;
  std::size_t label = kLabelHC;
  /// Loaded or generated embeddings.
  std::shared_ptr<const Tensor> ssl;

  const Tensor& embeddings() const {
    if (!ssl) throw ValueError("utterance '" + utterance_id + "': embeddings not loaded");
    return *ssl;
  }
};

struct Dataset {
  std::vector<Utterance> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  /// Sorted speaker ids.
  std::vector<std::string> speakers() const {
    std::set<std::string> s;
    for (const auto& u : samples) s.insert(u.speaker_id);
    return {s.begin(), s.end()};
  }

  std::map<std::string, std::size_t> speaker_labels() const {
    std::map<std::string, std::size_t> out;
    for (const auto& u : samples) {
      auto [it, inserted] = out.emplace(u.speaker_id, u.label);
      if (!inserted && it->second != u.label) {
        throw ValueError("speaker '" + u.speaker_id + "' has utterances with both labels");
      }
    }
    return out;
  }

  std::vector<Task> tasks() const {
    std::vector<Task> out;
    for (Task t : kAllTasks)
      if (std::any_of(samples.begin(), samples.end(), [t](const Utterance& u) { return u.task == t; }))
        out.push_back(t);
    return out;
  }

  Dataset filter_tasks(const std::vector<Task>& keep) const {
    Dataset out;
    for (const auto& u : samples)
      if (std::find(keep.begin(), keep.end(), u.task) != keep.end()) out.samples.push_back(u);
    return out;
  }

  Dataset filter_speakers(const std::set<std::string>& keep) const {
    Dataset out;
    for (const auto& u : samples)
      if (keep.count(u.speaker_id)) out.samples.push_back(u);
    return out;
  }

  /// Checks identifiers, labels, aspect layouts and speaker consistency.
  void validate() const {
    std::set<std::string> ids;
    for (const auto& u : samples) {
      if (u.utterance_id.empty() || u.speaker_id.empty()) throw ValueError("utterance with empty id or speaker id");
      if (!ids.insert(u.utterance_id).second) throw ValueError("duplicate utterance id '" + u.utterance_id + "'");
      if (u.label != kLabelHC && u.label != kLabelPD) throw ValueError("utterance '" + u.utterance_id + "': bad label");
      u.features.validate();
      if (u.features.names() != samples.front().features.names()) {
        throw ValueError("utterance '" + u.utterance_id + "': aspect layout differs from the first utterance");
      }
    }
    speaker_labels();
  }

  /// Loads every utterance's embeddings from disk; `expected_dim` is passed
  /// to the loader.
  void load_embeddings(const std::filesystem::path& root, std::size_t expected_dim = 0) {
    for (auto& u : samples) {
      if (u.ssl) continue;
      std::filesystem::path p(u.ssl_path);
      if (p.is_relative()) p = root / p;
      u.ssl = std::make_shared<const Tensor>(load_ssl_embeddings(p, expected_dim));
    }
  }
};

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct FeatureManifest {
  struct Group {
    std::string name;
    std::vector<std::string> feature_names;
  };
  std::vector<Group> aspects;
  std::size_t embedding_dim = 0;

  std::vector<AspectSpec> specs() const {
    std::vector<AspectSpec> out;
    for (const auto& g : aspects) out.push_back({g.name, g.feature_names.size()});
    return out;
  }
};

inline nlohmann::ordered_json to_json(const FeatureManifest& m) {
  nlohmann::ordered_json j;
  j["aspects"] = nlohmann::ordered_json::array();
  for (const auto& g : m.aspects) j["aspects"].push_back({{"name", g.name}, {"feature_names", g.feature_names}});
  j["D"] = m.embedding_dim;
  return j;
}

inline FeatureManifest feature_manifest_from_json(const nlohmann::json& j, const std::string& source) {
  FeatureManifest m;
  try {
    for (const auto& g : j.at("aspects")) {
      m.aspects.push_back({g.at("name").get<std::string>(), g.at("feature_names").get<std::vector<std::string>>()});
    }
    m.embedding_dim = j.at("D").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(source + ": invalid feature manifest: " + e.what());
  }
  if (m.aspects.empty()) throw ValueError(source + ": feature manifest lists no aspects");
  return m;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline FeatureManifest load_feature_manifest(const std::filesystem::path& path) {
  return feature_manifest_from_json(read_json_file(path), path.string());
}

inline void save_feature_manifest(const std::filesystem::path& path, const FeatureManifest& m) {
  write_text_file(path, to_json(m).dump(2) + "\n");
}

inline nlohmann::ordered_json to_json(const Utterance& u) {
  nlohmann::ordered_json j;
  j["utterance_id"] = u.utterance_id;
  j["speaker_id"] = u.speaker_id;
  j["task"] = to_string(u.task);
  j["ssl_path"] = u.ssl_path;
  nlohmann::ordered_json f = nlohmann::ordered_json::object();
  for (const auto& a : u.features.aspects) f[a.name] = a.values;
  j["features"] = f;
  j["label"] = label_name(u.label);
  return j;
}

inline Utterance utterance_from_json(const nlohmann::ordered_json& j, const std::vector<FeatureManifest::Group>& layout,
                                     const std::string& where) {
  Utterance u;
  try {
    u.utterance_id = j.at("utterance_id").get<std::string>();
    u.speaker_id = j.at("speaker_id").get<std::string>();
    u.task = parse_task(j.at("task").get<std::string>());
    u.ssl_path = j.at("ssl_path").get<std::string>();
    u.label = parse_label(j.at("label").get<std::string>());
    const auto& f = j.at("features");
    if (layout.empty()) {
      for (const auto& [name, vals] : f.items()) u.features.aspects.push_back({name, vals.get<std::vector<double>>()});
    } else {
      if (f.size() != layout.size()) throw ValueError("expected " + std::to_string(layout.size()) + " aspects");
      for (const auto& g : layout) {
        Aspect a{g.name, f.at(g.name).get<std::vector<double>>()};
        if (a.values.size() != g.feature_names.size()) {
          throw ValueError("aspect '" + g.name + "' has " + std::to_string(a.values.size()) + " features, manifest declares " +
                           std::to_string(g.feature_names.size()));
        }
        u.features.aspects.push_back(std::move(a));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(where + ": " + e.what());
  } catch (const ValueError& e) {
    throw ValueError(where + ": " + e.what());
  }
  for (const auto& a : u.features.aspects)
    for (double v : a.values)
      if (!std::isfinite(v)) throw ValueError(where + ": non-finite feature in aspect '" + a.name + "'");
  return u;
}

/// Reads a JSON-lines manifest. When a feature manifest layout is given the
/// aspects are ordered by it; otherwise the record's key order is kept.
inline Dataset load_manifest(const std::filesystem::path& path, const std::vector<FeatureManifest::Group>& layout = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValueError(where + ": " + e.what());
    }
    ds.samples.push_back(utterance_from_json(j, layout, where));
  }
  if (ds.empty()) throw ValueError(path.string() + ": manifest has no records");
  ds.validate();
  return ds;
}

inline void save_manifest(const std::filesystem::path& path, const Dataset& ds) {
  std::string text;
  for (const auto& u : ds.samples) text += to_json(u).dump() + "\n";
  write_text_file(path, text);
}

/// Dataset directory layout written by the generator and read by the CLI.
inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kFeatureManifestFile = "feature_manifest.json";

inline Dataset load_dataset_dir(const std::filesystem::path& dir, std::size_t expected_dim = 0) {
  const FeatureManifest fm = load_feature_manifest(dir / kFeatureManifestFile);
  Dataset ds = load_manifest(dir / kManifestFile, fm.aspects);
  ds.load_embeddings(dir, expected_dim ? expected_dim : fm.embedding_dim);
  return ds;
}

// ---------------------------------------------------------------------------
// Split-Mono
// ---------------------------------------------------------------------------

/// Contiguous, non-overlapping segments covering all frames; the first
/// T mod n segments are one frame longer.
inline std::vector<Tensor> segment_recording(const Tensor& ssl, std::size_t n_segments = 10) {
  ssl.require_rank(2);
  if (n_segments == 0) throw ValueError("segment_recording: n_segments must be positive");
  const std::size_t t = ssl.rows();
  if (t < n_segments) {
    throw ValueError("segment_recording: " + std::to_string(t) + " frames cannot form " + std::to_string(n_segments) +
                     " segments");
  }
  const std::size_t base = t / n_segments, extra = t % n_segments, d = ssl.cols();
  std::vector<Tensor> out;
  std::size_t start = 0;
  for (std::size_t s = 0; s < n_segments; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    Tensor seg({len, d});
    std::copy_n(ssl.data().begin() + static_cast<std::ptrdiff_t>(start * d), len * d, seg.data().begin());
    out.push_back(std::move(seg));
    start += len;
  }
  return out;
}

/// Replaces each monologue by `n_segments` clips named "<id>#seg<k>". Clips
/// inherit the utterance-level features; other tasks are dropped.
inline Dataset split_monologues(const Dataset& ds, std::size_t n_segments = 10) {
  Dataset out;
  for (const auto& u : ds.samples) {
    if (u.task != Task::kMonologue) continue;
    auto segs = segment_recording(u.embeddings(), n_segments);
    for (std::size_t k = 0; k < segs.size(); ++k) {
      Utterance c = u;
      c.utterance_id = u.utterance_id + "#seg" + std::to_string(k);
      c.ssl = std::make_shared<const Tensor>(std::move(segs[k]));
      out.samples.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace recapd
