#pragma once

// Randomized gradient checks over every primitive, every attention head and
// every full variant at tiny dimensions (T <= 4, D <= 8, K = 4). Shared by
// the `gradcheck` subcommand and the acceptance runner.

#include <string>
#include <vector>

#include "recapd/attention.hpp"
#include "recapd/grad_check.hpp"
#include "recapd/model.hpp"

namespace recapd {

struct GradSuiteCase {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteCase> cases;
  double max_rel_error = 0.0;
  std::size_t failures = 0;
  bool passed() const { return failures == 0 && !cases.empty(); }
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

inline std::vector<AspectSpec> tiny_aspects(Rng& rng) {
  std::vector<AspectSpec> out;
  for (const auto& name : default_aspect_names()) out.push_back({name, 1 + rng.below(3)});
  return out;
}

inline AspectFeatureSet tiny_features(const std::vector<AspectSpec>& specs, Rng& rng) {
  AspectFeatureSet fs;
  for (const auto& a : specs) {
    Aspect x{a.name, std::vector<double>(a.features)};
    for (double& v : x.values) v = rng.normal();
    fs.aspects.push_back(std::move(x));
  }
  return fs;
}

inline GradSuiteCase record(std::string name, std::uint64_t seed, const GradCheckReport& r) {
  return {std::move(name), seed, r.max_rel_error, r.passed};
}

inline AttentionVars apply_head(Variant v, Head h, const Var& ssl, const Var& other, AttentionParams& hp) {
  switch (v) {
    case Variant::kM1: return h == Head::kEmbedding ? m1_embedding_attention(ssl, other, hp) : m1_temporal_attention(ssl, other, hp);
    case Variant::kM2: return m2_fixed_attention(ssl, other, hp, h);
    case Variant::kM3: return m3_interpretable_value_attention(ssl, other, hp, h);
    case Variant::kM4: break;
  }
  return reca_attention(ssl, other, hp);
}

}  // namespace detail

/// One composite loss touching every tape primitive, dropout included (its
/// mask is redrawn from the same seed on each evaluation).
inline GradSuiteCase check_primitives(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t m = 1 + rng.below(4), p = 1 + rng.below(4), n = 2 + rng.below(3);
  Parameter a("a", detail::random_tensor({m, p}, rng)), b("b", detail::random_tensor({p, n}, rng));
  Parameter bias("bias", detail::random_tensor({n}, rng));
  Parameter gamma("gamma", detail::random_tensor({n}, rng)), beta("beta", detail::random_tensor({n}, rng));
  const Tensor proj = detail::random_tensor({m, n}, rng);
  const Tensor proj_t = detail::random_tensor({n, m}, rng);
  std::vector<std::size_t> labels(m);
  for (auto& l : labels) l = rng.below(n);
  const std::uint64_t mask_seed = rng.next();
  auto f = [&](Tape& t) {
    Rng mask(mask_seed);
    Var ab = matmul(t.param(a), t.param(b));
    Var lin = linear(t.param(a), t.param(b), t.param(bias));
    Var ln = layer_norm(add(ab, lin), t.param(gamma), t.param(beta));
    Var dropped = dropout(ln, 0.3, mask, true);
    Var loss1 = sum(mul(add(softmax(dropped, 0), softmax(ln, 1)), t.constant(proj)));
    Var loss2 = sum(mul(transpose(ln), t.constant(proj_t)));
    Var pooled = mean_pool_time(tile_rows(mean_pool_time(ln), 2));
    Var stacked = stack_rows(std::vector<Var>{pooled, t.param(bias)});
    Var loss3 = sum(mul(stacked, stacked));
    Var loss4 = cross_entropy(ln, labels);
    Var cat = concat(std::vector<Var>{pooled, t.param(gamma)});
    return add(add(add(loss1, loss2), add(loss3, loss4)), scale(sum(mul(cat, cat)), 0.5));
  };
  std::vector<Parameter*> ps{&a, &b, &bias, &gamma, &beta};
  return detail::record("primitives", seed, grad_check(f, ps));
}

/// Each attention head in isolation, with the SSL input and the informed
/// features (or tokens) treated as parameters so input gradients are checked.
inline std::vector<GradSuiteCase> check_attention_heads(std::uint64_t seed) {
  std::vector<GradSuiteCase> out;
  for (Variant v : {Variant::kM1, Variant::kM2, Variant::kM3, Variant::kM4}) {
    for (Head h : heads_of(v)) {
      Rng rng(Rng(seed).split(static_cast<std::uint64_t>(v) * 4 + static_cast<std::uint64_t>(h)).next());
      const std::size_t t = 2 + rng.below(3), d = 2 + rng.below(7), f = 2 + rng.below(5), k = 4;
      Parameter ssl("ssl", detail::random_tensor({t, d}, rng));
      Parameter other("informed", v == Variant::kM4 ? detail::random_tensor({k, d}, rng)
                                                    : detail::random_tensor({f}, rng));
      AttentionParams hp = make_attention_params(v, h, d, rng);
      Tensor proj;
      auto fn = [&](Tape& tape) {
        AttentionVars a = detail::apply_head(v, h, tape.param(ssl), tape.param(other), hp);
        return sum(mul(a.output, tape.constant(proj)));
      };
      {
        Tape probe;
        proj = detail::random_tensor(detail::apply_head(v, h, probe.param(ssl), probe.param(other), hp).output.value().shape(), rng);
      }
      std::vector<Parameter*> ps{&ssl, &other};
      for (Parameter* p : hp.parameters()) ps.push_back(p);
      out.push_back(detail::record(to_string(v) + "." + to_string(h), seed, grad_check(fn, ps)));
    }
  }
  return out;
}

/// Full forward pass and cross-entropy of one variant, dropout off.
inline GradSuiteCase check_variant(Variant variant, std::uint64_t seed) {
  Rng rng(Rng(seed).split(100 + static_cast<std::uint64_t>(variant)).next());
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.embedding_dim = 2 + rng.below(7);
  cfg.aspects = detail::tiny_aspects(rng);
  cfg.hidden1 = 1 + rng.below(4);
  cfg.hidden2 = 1 + rng.below(4);
  cfg.seed = rng.next();
  ModelParams params = init_params(cfg);
  const Tensor ssl = detail::random_tensor({1 + rng.below(4), cfg.embedding_dim}, rng);
  const AspectFeatureSet fs = detail::tiny_features(cfg.aspects, rng);
  const std::size_t label = rng.below(2);
  auto fn = [&](Tape& tape) {
    Rng unused(0);
    return cross_entropy(forward(tape, ssl, fs, cfg, params, unused, false).logits, label);
  };
  auto plist = params.parameters();
  return detail::record("model." + to_string(variant), seed, grad_check(fn, plist));
}

inline GradSuiteReport run_gradient_suite(std::size_t n_seeds, std::uint64_t first_seed = 0) {
  GradSuiteReport rep;
  auto push = [&rep](GradSuiteCase c) {
    rep.max_rel_error = std::max(rep.max_rel_error, c.max_rel_error);
    rep.failures += c.passed ? 0 : 1;
    rep.cases.push_back(std::move(c));
  };
  for (std::uint64_t s = first_seed; s < first_seed + n_seeds; ++s) {
    push(check_primitives(s));
    for (auto& c : check_attention_heads(s)) push(std::move(c));
    for (Variant v : {Variant::kM1, Variant::kM2, Variant::kM3, Variant::kM4}) push(check_variant(v, s));
  }
  return rep;
}

}  // namespace recapd
