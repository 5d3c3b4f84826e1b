#pragma once

// Classifier pipeline: attention variant -> mean pooling -> linear head over
// two classes (index 0 = HC, index 1 = PD).

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "recapd/aspect_encoder.hpp"
#include "recapd/attention.hpp"
#include "recapd/autodiff.hpp"

namespace recapd {

inline constexpr std::size_t kNumClasses = 2;
inline constexpr std::size_t kLabelHC = 0;
inline constexpr std::size_t kLabelPD = 1;

struct AspectSpec {
  std::string name;
  std::size_t features = 0;

  friend bool operator==(const AspectSpec&, const AspectSpec&) = default;
};

struct ModelConfig {
  Variant variant = Variant::kM4;
  /// D: SSL embedding dimension and token dimension.
  std::size_t embedding_dim = 1024;
  std::vector<AspectSpec> aspects;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 512;
  double dropout = 0.1;
  /// Longest accepted sequence; 0 disables the check.
  std::size_t max_frames = 0;
  std::uint64_t seed = 0;

  std::size_t num_aspects() const noexcept { return aspects.size(); }

  std::size_t total_features() const noexcept {
    std::size_t n = 0;
    for (const auto& a : aspects) n += a.features;
    return n;
  }

  /// M4 pools [D]; M1/M2 pool [F] from the embedding head and [D] from the
  /// temporal head; M3 pools [F] from each head.
  std::size_t classifier_input_dim() const noexcept {
    switch (variant) {
      case Variant::kM4: return embedding_dim;
      case Variant::kM3: return 2 * total_features();
      default: return total_features() + embedding_dim;
    }
  }

  EncoderDims encoder_dims() const { return {hidden1, hidden2, embedding_dim, dropout}; }

  void validate() const {
    if (embedding_dim == 0) throw ConfigError("model: embedding dimension D must be positive");
    if (aspects.empty()) throw ConfigError("model: at least one aspect is required");
    if (hidden1 == 0 || hidden2 == 0) throw ConfigError("model: hidden sizes must be positive");
    if (!(dropout >= 0.0) || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
    std::set<std::string> names;
    for (const auto& a : aspects) {
      if (a.features == 0) throw ConfigError("model: aspect '" + a.name + "' has no features");
      if (!names.insert(a.name).second) throw ConfigError("model: duplicate aspect '" + a.name + "'");
    }
  }

  /// Architecture fingerprint used by checkpoints.
  std::string architecture_string() const {
    std::ostringstream os;
    os << "variant=" << to_string(variant) << ";D=" << embedding_dim << ";H1=" << hidden1 << ";H2=" << hidden2
       << ";aspects=";
    for (const auto& a : aspects) os << a.name << ':' << a.features << ',';
    return os.str();
  }
};

struct ModelParams {
  /// One encoder per aspect; populated for M4 only.
  std::vector<AspectEncoder> encoders;
  /// Aligned with heads_of(variant).
  std::vector<AttentionParams> heads;
  Parameter classifier_weight;
  Parameter classifier_bias;

  /// Fixed, deterministic order used by the optimizer and checkpoints.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& e : encoders)
      for (Parameter* p : e.parameters()) out.push_back(p);
    for (auto& h : heads)
      for (Parameter* p : h.parameters()) out.push_back(p);
    out.push_back(&classifier_weight);
    out.push_back(&classifier_bias);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (Parameter* p : const_cast<ModelParams*>(this)->parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }
};

template <typename T>
concept ModelParamsRef = std::same_as<std::remove_const_t<T>, ModelParams>;

inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelParams p;
  if (cfg.variant == Variant::kM4) {
    for (const auto& a : cfg.aspects) p.encoders.push_back(make_aspect_encoder(a.name, a.features, cfg.encoder_dims(), rng));
  }
  for (Head h : heads_of(cfg.variant)) p.heads.push_back(make_attention_params(cfg.variant, h, cfg.embedding_dim, rng));
  const std::size_t in = cfg.classifier_input_dim();
  p.classifier_weight = Parameter("classifier.weight", uniform_fan_in({in, kNumClasses}, in, rng));
  p.classifier_bias = Parameter("classifier.bias", uniform_fan_in({kNumClasses}, in, rng));
  return p;
}

/// Checks every input against the configuration before any computation.
inline void validate_inputs(const Tensor& ssl, const AspectFeatureSet& features, const ModelConfig& cfg) {
  if (ssl.rank() != 2) throw DimensionError("forward: ssl must be [T x D], got " + shape_string(ssl.shape()));
  if (ssl.cols() != cfg.embedding_dim) {
    throw DimensionError("forward: ssl dimension " + std::to_string(ssl.cols()) + " does not match model D=" +
                         std::to_string(cfg.embedding_dim));
  }
  if (cfg.max_frames && ssl.rows() > cfg.max_frames) {
    throw DimensionError("forward: sequence of " + std::to_string(ssl.rows()) + " frames exceeds max_frames=" +
                         std::to_string(cfg.max_frames));
  }
  if (features.size() != cfg.num_aspects()) {
    throw DimensionError("forward: " + std::to_string(features.size()) + " aspects given, model expects " +
                         std::to_string(cfg.num_aspects()));
  }
  for (std::size_t k = 0; k < features.size(); ++k) {
    const auto& a = features.aspects[k];
    if (a.name != cfg.aspects[k].name || a.values.size() != cfg.aspects[k].features) {
      throw DimensionError("forward: aspect " + std::to_string(k) + " is '" + a.name + "' with " +
                           std::to_string(a.values.size()) + " features, model expects '" + cfg.aspects[k].name +
                           "' with " + std::to_string(cfg.aspects[k].features));
    }
  }
}

struct ForwardVars {
  Var logits;
  Var pooled;
  std::vector<AttentionVars> attention;
  /// M4 token matrix; invalid for the other variants.
  Var tokens;
};

template <ModelParamsRef Params>
ForwardVars forward(Tape& tape, const Tensor& ssl, const AspectFeatureSet& features, const ModelConfig& cfg,
                    Params& params, Rng& rng, bool training) {
  validate_inputs(ssl, features, cfg);
  const std::vector<Head> heads = heads_of(cfg.variant);
  if (params.heads.size() != heads.size()) throw ValueError("forward: parameters do not match the variant");
  Var x = tape.constant(ssl);
  ForwardVars out;
  if (cfg.variant == Variant::kM4) {
    using Enc = std::conditional_t<std::is_const_v<Params>, const AspectEncoder, AspectEncoder>;
    out.tokens = encode_all(tape, features, std::span<Enc>(params.encoders), cfg.dropout, rng, training);
    AttentionVars a = reca_attention(x, out.tokens, params.heads[0]);
    out.pooled = mean_pool_time(a.output);
    out.attention.push_back(a);
  } else {
    Var informed = tape.constant(Tensor::vector(features.flatten()));
    std::vector<Var> pooled;
    for (std::size_t h = 0; h < heads.size(); ++h) {
      auto& hp = params.heads[h];
      AttentionVars a;
      switch (cfg.variant) {
        case Variant::kM1:
          a = heads[h] == Head::kEmbedding ? m1_embedding_attention(x, informed, hp)
                                           : m1_temporal_attention(x, informed, hp);
          break;
        case Variant::kM2: a = m2_fixed_attention(x, informed, hp, heads[h]); break;
        default: a = m3_interpretable_value_attention(x, informed, hp, heads[h]); break;
      }
      // M1/M2 embedding output is [F x T]: average over time. Every other
      // head output is averaged over its rows.
      const bool over_time = heads[h] == Head::kEmbedding && cfg.variant != Variant::kM3;
      pooled.push_back(over_time ? mean_pool_time(transpose(a.output)) : mean_pool_time(a.output));
      out.attention.push_back(a);
    }
    out.pooled = concat(pooled);
  }
  out.logits = linear(out.pooled, tape.param(params.classifier_weight), tape.param(params.classifier_bias));
  return out;
}

struct PredictionOutput {
  Tensor logits;
  Tensor probabilities;
  std::vector<ScoreMatrix> scores;
  Tensor pooled;

  double pd_probability() const { return probabilities[kLabelPD]; }
};

inline Tensor softmax_probabilities(const Tensor& logits) {
  Tape tape;
  return softmax(tape.constant(logits), 0).value();
}

inline PredictionOutput predict(const Tensor& ssl, const AspectFeatureSet& features, const ModelConfig& cfg,
                                const ModelParams& params, Rng& rng, bool training = false) {
  Tape tape;
  ForwardVars f = forward(tape, ssl, features, cfg, params, rng, training);
  PredictionOutput out;
  out.logits = f.logits.value();
  out.probabilities = softmax_probabilities(out.logits);
  out.pooled = f.pooled.value();
  for (const auto& a : f.attention) out.scores.push_back(scores_of(a));
  return out;
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are aligned with the parameter order
/// passed to step(), which must not change between calls.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  const AdamOptions& options() const noexcept { return opts_; }
  std::size_t steps() const noexcept { return steps_; }

  void step(std::span<Parameter* const> params) {
    if (first_.empty()) {
      for (Parameter* p : params) {
        first_.emplace_back(p->value.shape());
        second_.emplace_back(p->value.shape());
      }
    }
    if (first_.size() != params.size()) throw ValueError("Adam: parameter list changed between steps");
    ++steps_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      Tensor& m = first_[i];
      Tensor& v = second_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
        p.value[j] -= opts_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts_.eps);
      }
    }
  }

 private:
  AdamOptions opts_;
  std::size_t steps_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

/// Non-owning view of one training utterance.
struct Example {
  const Tensor* ssl = nullptr;
  const AspectFeatureSet* features = nullptr;
  std::size_t label = 0;
};

inline std::string parameter_norms(ModelParams& params) {
  std::ostringstream os;
  for (Parameter* p : params.parameters()) os << p->name << "=" << p->value.norm() << " ";
  return os.str();
}

/// One optimizer step on the mean cross-entropy of `batch`. Utterances are
/// forwarded one at a time and their gradients accumulated, so sequences of
/// different lengths need no padding. Returns the mean loss.
inline double backward_step(std::span<const Example> batch, const ModelConfig& cfg, ModelParams& params, Adam& opt,
                            Rng& rng) {
  if (batch.empty()) throw ValueError("backward_step: empty batch");
  params.zero_grad();
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const Example& ex : batch) {
    Tape tape;
    ForwardVars f = forward(tape, *ex.ssl, *ex.features, cfg, params, rng, true);
    Var loss = cross_entropy(f.logits, ex.label);
    total += loss.value()[0];
    tape.backward(scale(loss, w));
  }
  const double mean = total * w;
  if (!std::isfinite(mean)) {
    throw NumericError("backward_step: non-finite loss; parameter norms: " + parameter_norms(params));
  }
  auto plist = params.parameters();
  opt.step(plist);
  return mean;
}

}  // namespace recapd
