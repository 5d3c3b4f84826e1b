#pragma once

// Per-aspect feature encoders. Each speech aspect (articulation, glottal,
// phonation, prosody by default) owns a disjoint three-layer encoder that
// maps its raw feature group to one D-dimensional token. Aspects never
// interact before the attention stage, so token k depends on aspect k only.

#include <array>
#include <cmath>
#include <concepts>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "recapd/autodiff.hpp"
#include "recapd/rng.hpp"
#include "recapd/tensor.hpp"

namespace recapd {

inline const std::vector<std::string>& default_aspect_names() {
  static const std::vector<std::string> names{"articulation", "glottal", "phonation", "prosody"};
  return names;
}

struct Aspect {
  std::string name;
  std::vector<double> values;
};

/// Raw interpretable features of one utterance, grouped by aspect.
struct AspectFeatureSet {
  std::vector<Aspect> aspects;

  std::size_t size() const noexcept { return aspects.size(); }

  std::size_t total_features() const noexcept {
    std::size_t n = 0;
    for (const auto& a : aspects) n += a.values.size();
    return n;
  }

  /// Concatenation of all aspect groups in aspect order.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_features());
    for (const auto& a : aspects) out.insert(out.end(), a.values.begin(), a.values.end());
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& a : aspects) out.push_back(a.name);
    return out;
  }

  void validate() const {
    if (aspects.empty()) throw ValueError("feature set has no aspects");
    std::set<std::string> seen;
    for (const auto& a : aspects) {
      if (!seen.insert(a.name).second) throw ValueError("duplicate aspect name '" + a.name + "'");
      if (a.values.empty()) throw ValueError("aspect '" + a.name + "' has no features");
    }
  }
};

struct EncoderDims {
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 512;
  std::size_t token_dim = 1024;
  double dropout = 0.1;
};

struct EncoderLayer {
  Parameter weight;
  Parameter bias;
  Parameter gamma;
  Parameter beta;
};

struct AspectEncoder {
  std::string aspect;
  std::size_t input_dim = 0;
  std::array<EncoderLayer, 3> layers;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
    return out;
  }

  std::size_t token_dim() const { return layers.back().weight.value.cols(); }
};

template <typename T>
concept EncoderRef = std::same_as<std::remove_const_t<T>, AspectEncoder>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

inline AspectEncoder make_aspect_encoder(const std::string& aspect, std::size_t input_dim, const EncoderDims& dims,
                                         Rng& rng) {
  if (input_dim == 0) throw ValueError("encoder for '" + aspect + "' needs at least one input feature");
  AspectEncoder enc;
  enc.aspect = aspect;
  enc.input_dim = input_dim;
  const std::array<std::size_t, 4> widths{input_dim, dims.hidden1, dims.hidden2, dims.token_dim};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string prefix = "encoder." + aspect + ".layer" + std::to_string(i) + ".";
    auto& l = enc.layers[i];
    l.weight = Parameter(prefix + "weight", uniform_fan_in({widths[i], widths[i + 1]}, widths[i], rng));
    l.bias = Parameter(prefix + "bias", uniform_fan_in({widths[i + 1]}, widths[i], rng));
    l.gamma = Parameter(prefix + "ln_gamma", Tensor({widths[i + 1]}, 1.0));
    l.beta = Parameter(prefix + "ln_beta", Tensor({widths[i + 1]}, 0.0));
  }
  return enc;
}

/// linear -> LayerNorm -> dropout, three times. Returns a [D] token.
template <EncoderRef Encoder>
Var encode_aspect(Tape& tape, std::span<const double> features, Encoder& enc, double dropout_rate, Rng& rng,
                  bool training) {
  if (features.size() != enc.input_dim) {
    throw DimensionError("encoder '" + enc.aspect + "' expects " + std::to_string(enc.input_dim) + " features, got " +
                         std::to_string(features.size()));
  }
  for (double v : features)
    if (!std::isfinite(v)) throw ValueError("encoder '" + enc.aspect + "': non-finite input feature");
  Var h = tape.constant(Tensor::vector({features.begin(), features.end()}));
  for (auto& layer : enc.layers) {
    h = linear(h, tape.param(layer.weight), tape.param(layer.bias));
    h = layer_norm(h, tape.param(layer.gamma), tape.param(layer.beta));
    h = dropout(h, dropout_rate, rng, training);
  }
  return h;
}

/// Encodes every aspect with its own encoder and stacks the tokens into [K x D].
template <EncoderRef Encoder>
Var encode_all(Tape& tape, const AspectFeatureSet& fs, std::span<Encoder> encoders, double dropout_rate, Rng& rng,
               bool training) {
  if (fs.size() != encoders.size()) {
    throw DimensionError("feature set has " + std::to_string(fs.size()) + " aspects but " +
                         std::to_string(encoders.size()) + " encoders were given");
  }
  std::vector<Var> tokens;
  tokens.reserve(fs.size());
  for (std::size_t k = 0; k < fs.size(); ++k) {
    if (fs.aspects[k].name != encoders[k].aspect) {
      throw ValueError("aspect " + std::to_string(k) + " is '" + fs.aspects[k].name + "' but encoder is for '" +
                       encoders[k].aspect + "'");
    }
    tokens.push_back(encode_aspect(tape, fs.aspects[k].values, encoders[k], dropout_rate, rng, training));
  }
  return stack_rows(tokens);
}

/// Materialized tokens, one row per aspect.
struct AspectTokenMatrix {
  Tensor tokens;
  std::vector<std::string> aspect_names;
};

inline AspectTokenMatrix encode_tokens(const AspectFeatureSet& fs, std::span<const AspectEncoder> encoders,
                                       double dropout_rate, Rng& rng, bool training) {
  Tape tape;
  Var t = encode_all(tape, fs, encoders, dropout_rate, rng, training);
  return {t.value(), fs.names()};
}

// ---------------------------------------------------------------------------
// Feature normalization
// ---------------------------------------------------------------------------

/// Per-feature z-score statistics. `provenance` lists the speakers whose
/// utterances contributed, so leakage checks can inspect it.
struct FeatureStats {
  std::vector<std::string> aspect_names;
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> stddev;
  std::set<std::string> provenance;
};

/// Population mean/std per feature over `samples`.
inline FeatureStats fit_feature_stats(std::span<const AspectFeatureSet* const> samples,
                                      std::set<std::string> provenance = {}) {
  if (samples.empty()) throw ValueError("fit_feature_stats: no samples");
  const AspectFeatureSet& first = *samples.front();
  FeatureStats st;
  st.aspect_names = first.names();
  st.provenance = std::move(provenance);
  for (const auto& a : first.aspects) {
    st.mean.emplace_back(a.values.size(), 0.0);
    st.stddev.emplace_back(a.values.size(), 0.0);
  }
  for (const AspectFeatureSet* s : samples) {
    if (s->size() != first.size()) throw DimensionError("fit_feature_stats: inconsistent aspect count");
    for (std::size_t k = 0; k < s->size(); ++k) {
      if (s->aspects[k].values.size() != st.mean[k].size())
        throw DimensionError("fit_feature_stats: inconsistent feature count in aspect '" + s->aspects[k].name + "'");
      for (std::size_t j = 0; j < st.mean[k].size(); ++j) st.mean[k][j] += s->aspects[k].values[j];
    }
  }
  const double n = static_cast<double>(samples.size());
  for (auto& m : st.mean)
    for (double& v : m) v /= n;
  for (const AspectFeatureSet* s : samples)
    for (std::size_t k = 0; k < s->size(); ++k)
      for (std::size_t j = 0; j < st.mean[k].size(); ++j) {
        const double d = s->aspects[k].values[j] - st.mean[k][j];
        st.stddev[k][j] += d * d;
      }
  for (auto& sd : st.stddev)
    for (double& v : sd) v = std::sqrt(v / n);
  return st;
}

/// Z-scores every feature; features with std below 1e-12 map to 0.
inline AspectFeatureSet normalize_features(const AspectFeatureSet& fs, const FeatureStats& stats) {
  if (fs.size() != stats.mean.size()) {
    throw DimensionError("normalize_features: " + std::to_string(fs.size()) + " aspects vs " +
                         std::to_string(stats.mean.size()) + " in statistics");
  }
  AspectFeatureSet out = fs;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    auto& vals = out.aspects[k].values;
    if (vals.size() != stats.mean[k].size()) {
      throw DimensionError("normalize_features: aspect '" + fs.aspects[k].name + "' has " +
                           std::to_string(vals.size()) + " features vs " + std::to_string(stats.mean[k].size()) +
                           " in statistics");
    }
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double sd = stats.stddev[k][j];
      vals[j] = sd < 1e-12 ? 0.0 : (vals[j] - stats.mean[k][j]) / sd;
    }
  }
  return out;
}

}  // namespace recapd
