#pragma once

// Cross-attention variants of the ablation ladder.
//
//   M1  base method: two heads (embedding, temporal) whose scores are
//       soft-maxed along the feature axis and transposed afterwards. The
//       transposed weights are not row-stochastic. Kept only as an ablation
//       baseline; do not use it for new models.
//   M2  M1 with the transpose moved before the softmax, which then runs
//       along D (embedding head) or T (temporal head).
//   M3  M2 with the Value replaced by the repeated raw informed features.
//   M4  single head: SSL frames query K aspect tokens, tokens are both Key
//       and Value (W_V = I), softmax along the aspect axis.
//
// Shapes: ssl is [T x D], informed features are [F], tokens are [K x D].

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <type_traits>

#include "recapd/aspect_encoder.hpp"
#include "recapd/autodiff.hpp"

namespace recapd {

enum class Variant { kM1, kM2, kM3, kM4 };
enum class Head { kEmbedding, kTemporal, kAspect };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kM1: return "m1";
    case Variant::kM2: return "m2";
    case Variant::kM3: return "m3";
    case Variant::kM4: return "m4";
  }
  return "?";
}

inline std::string to_string(Head h) {
  switch (h) {
    case Head::kEmbedding: return "embedding";
    case Head::kTemporal: return "temporal";
    case Head::kAspect: return "aspect";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "m1" || s == "M1") return Variant::kM1;
  if (s == "m2" || s == "M2") return Variant::kM2;
  if (s == "m3" || s == "M3") return Variant::kM3;
  if (s == "m4" || s == "M4") return Variant::kM4;
  throw ConfigError("unknown variant '" + s + "' (expected m1, m2, m3 or m4)");
}

/// Heads used by a variant: M1-M3 run embedding and temporal heads, M4 a
/// single aspect head.
inline std::vector<Head> heads_of(Variant v) {
  if (v == Variant::kM4) return {Head::kAspect};
  return {Head::kEmbedding, Head::kTemporal};
}

/// Projection weights of one attention head. An absent key or value
/// projection is the identity and carries no gradient.
struct AttentionParams {
  Parameter query;
  std::optional<Parameter> key;
  std::optional<Parameter> value;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&query};
    if (key) out.push_back(&*key);
    if (value) out.push_back(&*value);
    return out;
  }
};

template <typename T>
concept AttentionParamsRef = std::same_as<std::remove_const_t<T>, AttentionParams>;

/// W_Q always; W_K only for M4; W_V only for M1 and M2.
inline AttentionParams make_attention_params(Variant variant, Head head, std::size_t d, Rng& rng) {
  const std::string prefix = "attention." + to_string(head) + ".";
  AttentionParams p;
  p.query = Parameter(prefix + "w_query", uniform_fan_in({d, d}, d, rng));
  if (variant == Variant::kM4) p.key = Parameter(prefix + "w_key", uniform_fan_in({d, d}, d, rng));
  if (variant == Variant::kM1 || variant == Variant::kM2)
    p.value = Parameter(prefix + "w_value", uniform_fan_in({d, d}, d, rng));
  return p;
}

/// Attention output plus the weight matrix and the axis it was normalized on.
struct AttentionVars {
  Var output;
  Var weights;
  std::size_t axis = 1;
  Head head = Head::kAspect;
};

/// Materialized attention weights.
struct ScoreMatrix {
  Tensor weights;
  std::size_t axis = 1;
  Head head = Head::kAspect;
};

inline ScoreMatrix scores_of(const AttentionVars& a) { return {a.weights.value(), a.axis, a.head}; }

/// softmax(Q K^T / sqrt(d_k)) V with the softmax over each row.
inline AttentionVars scaled_dot_attention(const Var& q, const Var& k, const Var& v, std::size_t d_k) {
  if (d_k == 0) throw ValueError("scaled_dot_attention: d_k must be positive");
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2 || qv.cols() != kv.cols() || kv.rows() != vv.rows()) {
    throw DimensionError("scaled_dot_attention: incompatible Q" + shape_string(qv.shape()) + " K" +
                         shape_string(kv.shape()) + " V" + shape_string(vv.shape()));
  }
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_k)));
  Var w = softmax(scores, 1);
  return {matmul(w, v), w, 1, Head::kAspect};
}

namespace detail {

inline void check_ssl_informed(const Var& ssl, const Var& informed, const AttentionParams& p, const char* op) {
  const Tensor& s = ssl.value();
  if (s.rank() != 2) throw DimensionError(std::string(op) + ": ssl must be [T x D], got " + shape_string(s.shape()));
  if (informed.value().rank() != 1)
    throw DimensionError(std::string(op) + ": informed features must be [F], got " +
                         shape_string(informed.value().shape()));
  if (p.query.value.rank() != 2 || p.query.value.rows() != s.cols())
    throw DimensionError(std::string(op) + ": W_Q " + shape_string(p.query.value.shape()) +
                         " incompatible with ssl " + shape_string(s.shape()));
}

inline double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

// Embedding head scores: (ssl W_Q)^T [D x T] times informed tiled T times
// [T x F] gives [D x F]; the contraction runs over T, so d_k = T.
template <AttentionParamsRef P>
Var embedding_scores(const Var& ssl, const Var& informed, P& params) {
  Tape& tape = ssl.tape();
  const std::size_t steps = ssl.value().rows();
  Var q = matmul(ssl, tape.param(params.query));
  Var keys = tile_rows(informed, steps);
  return scale(matmul(transpose(q), keys), inv_sqrt(steps));
}

// Temporal head scores: ssl W_Q [T x D] times informed tiled D times
// [D x F] gives [T x F]; d_k = D.
template <AttentionParamsRef P>
Var temporal_scores(const Var& ssl, const Var& informed, P& params) {
  Tape& tape = ssl.tape();
  const std::size_t d = ssl.value().cols();
  Var q = matmul(ssl, tape.param(params.query));
  Var keys = tile_rows(informed, d);
  return scale(matmul(q, keys), inv_sqrt(d));
}

template <AttentionParamsRef P>
Var ssl_values(const Var& ssl, P& params, const char* op) {
  if (!params.value) throw ValueError(std::string(op) + ": variant requires a W_V projection");
  return matmul(ssl, ssl.tape().param(*params.value));
}

}  // namespace detail

/// M1 embedding head, reproduced with its flaw: softmax along F on the
/// [D x F] scores, then transpose, so Z = W^T V^T is a non-convex sum of D
/// value rows. Returns Z [F x T] and W [D x F] (axis 1).
template <AttentionParamsRef P>
AttentionVars m1_embedding_attention(const Var& ssl, const Var& informed, P& params) {
  detail::check_ssl_informed(ssl, informed, params, "m1_embedding_attention");
  Var w = softmax(detail::embedding_scores(ssl, informed, params), 1);
  Var v = detail::ssl_values(ssl, params, "m1_embedding_attention");
  Var z = matmul(transpose(w), transpose(v));
  return {z, w, 1, Head::kEmbedding};
}

/// M1 temporal head with the same flaw: softmax along F on [T x F], then
/// Z = W^T V sums T value rows, so its scale follows the utterance length.
/// Returns Z [F x D] and W [T x F] (axis 1).
template <AttentionParamsRef P>
AttentionVars m1_temporal_attention(const Var& ssl, const Var& informed, P& params) {
  detail::check_ssl_informed(ssl, informed, params, "m1_temporal_attention");
  Var w = softmax(detail::temporal_scores(ssl, informed, params), 1);
  Var v = detail::ssl_values(ssl, params, "m1_temporal_attention");
  Var z = matmul(transpose(w), v);
  return {z, w, 1, Head::kTemporal};
}

/// M2: transpose the scores first, then normalize along D (embedding head,
/// W [F x D], Z [F x T]) or T (temporal head, W [F x T], Z [F x D]).
template <AttentionParamsRef P>
AttentionVars m2_fixed_attention(const Var& ssl, const Var& informed, P& params, Head head) {
  detail::check_ssl_informed(ssl, informed, params, "m2_fixed_attention");
  Var v = detail::ssl_values(ssl, params, "m2_fixed_attention");
  if (head == Head::kEmbedding) {
    Var w = softmax(transpose(detail::embedding_scores(ssl, informed, params)), 1);
    return {matmul(w, transpose(v)), w, 1, head};
  }
  if (head == Head::kTemporal) {
    Var w = softmax(transpose(detail::temporal_scores(ssl, informed, params)), 1);
    return {matmul(w, v), w, 1, head};
  }
  throw ValueError("m2_fixed_attention: head must be embedding or temporal");
}

/// M3: M2 weights applied to the raw informed features repeated D times
/// (embedding head) or T times (temporal head). Z is [F x F].
template <AttentionParamsRef P>
AttentionVars m3_interpretable_value_attention(const Var& ssl, const Var& informed, P& params, Head head) {
  detail::check_ssl_informed(ssl, informed, params, "m3_interpretable_value_attention");
  const Tensor& s = ssl.value();
  if (head == Head::kEmbedding) {
    Var w = softmax(transpose(detail::embedding_scores(ssl, informed, params)), 1);
    return {matmul(w, tile_rows(informed, s.cols())), w, 1, head};
  }
  if (head == Head::kTemporal) {
    Var w = softmax(transpose(detail::temporal_scores(ssl, informed, params)), 1);
    return {matmul(w, tile_rows(informed, s.rows())), w, 1, head};
  }
  throw ValueError("m3_interpretable_value_attention: head must be embedding or temporal");
}

/// M4: Q = ssl W_Q [T x D], keys = tokens W_K [K x D], values = tokens.
/// W = softmax over the aspect axis of Q keys^T / sqrt(D), shape [T x K];
/// each row of Z = W tokens is a convex combination of the token rows.
template <AttentionParamsRef P>
AttentionVars reca_attention(const Var& ssl, const Var& tokens, P& params) {
  const Tensor& s = ssl.value();
  const Tensor& tk = tokens.value();
  if (s.rank() != 2 || tk.rank() != 2 || s.cols() != tk.cols()) {
    throw DimensionError("reca_attention: ssl " + shape_string(s.shape()) + " and tokens " + shape_string(tk.shape()) +
                         " must share the embedding dimension");
  }
  if (!params.key) throw ValueError("reca_attention: W_K projection missing");
  const std::size_t d = s.cols();
  if (params.query.value.shape() != Shape{d, d} || params.key->value.shape() != Shape{d, d}) {
    throw DimensionError("reca_attention: projections must be [" + std::to_string(d) + "x" + std::to_string(d) + "]");
  }
  Tape& tape = ssl.tape();
  Var q = matmul(ssl, tape.param(params.query));
  Var keys = matmul(tokens, tape.param(*params.key));
  AttentionVars a = scaled_dot_attention(q, keys, tokens, d);
  a.head = Head::kAspect;
  return a;
}

/// c[t, k, :] = W[t, k] * token_k. Summing over k reconstructs Z.
inline Tensor contribution_decomposition(const Tensor& weights, const Tensor& tokens) {
  if (weights.rank() != 2 || tokens.rank() != 2 || weights.cols() != tokens.rows()) {
    throw DimensionError("contribution_decomposition: weights " + shape_string(weights.shape()) + " and tokens " +
                         shape_string(tokens.shape()) + " do not align");
  }
  const std::size_t steps = weights.rows(), k = weights.cols(), d = tokens.cols();
  Tensor c({steps, k, d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < d; ++j) c(t, a, j) = weights(t, a) * tokens(a, j);
  return c;
}

/// Sums a [T x K x D] contribution tensor over the aspect axis.
inline Tensor reconstruct_from_contributions(const Tensor& contributions) {
  contributions.require_rank(3);
  const std::size_t steps = contributions.extent(0), k = contributions.extent(1), d = contributions.extent(2);
  Tensor z({steps, d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < d; ++j) z(t, j) += contributions(t, a, j);
  return z;
}

}  // namespace recapd
