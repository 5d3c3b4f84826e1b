#pragma once

// Reverse-mode differentiation over a recorded graph of tensor primitives.
//
// A Tape owns every intermediate value produced during one forward pass.
// Each primitive records its output together with a backward rule that
// maps the output gradient onto its inputs. Tape::backward walks the nodes
// in reverse creation order, which is a valid topological order because a
// node can only consume nodes created before it.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "recapd/error.hpp"
#include "recapd/rng.hpp"
#include "recapd/tensor.hpp"

namespace recapd {

/// A named trainable tensor. Gradients from every tape that references the
/// parameter are summed into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient of the last backward() target with respect to this node.
  /// Zero-filled when nothing flowed into it.
  Tensor grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Backward rule: receives the gradient and value of the node's output and
  /// adds the corresponding contributions into its inputs via grad_sink().
  using Backward = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    return Var(this, nodes_.size() - 1);
  }

  /// Differentiable input whose gradient is read back through Var::grad().
  Var leaf(Tensor value) {
    Var v = constant(std::move(value));
    nodes_.back().requires_grad = true;
    return v;
  }

  /// References `p.value` without copying; backward adds into `p.grad`.
  Var param(Parameter& p) {
    Node& n = nodes_.emplace_back();
    n.external = &p.value;
    n.requires_grad = true;
    n.sink = &p.grad;
    return Var(this, nodes_.size() - 1);
  }

  /// Frozen parameter: participates in the forward pass only.
  Var param(const Parameter& p) {
    Node& n = nodes_.emplace_back();
    n.external = &p.value;
    return Var(this, nodes_.size() - 1);
  }

  /// Records the output of a primitive. The node requires a gradient iff any
  /// input does; otherwise the backward rule is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value(); }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient accumulator of `v`, allocated on first use; nullptr when `v`
  /// does not require a gradient.
  Tensor* grad_sink(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad = Tensor::zeros(n.value().shape());
    return &*n.grad;
  }

  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    return n.grad ? *n.grad : Tensor::zeros(n.value().shape());
  }

  /// Propagates d(loss)/d(node) for every node that feeds `loss`.
  void backward(const Var& loss) {
    check_owned(loss);
    if (value(loss).size() != 1) {
      throw DimensionError("backward target must be a scalar, got " + shape_string(value(loss).shape()));
    }
    if (!requires_grad(loss)) return;
    grad_sink(loss)->fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.grad) continue;
      if (n.backward) n.backward(*this, *n.grad, n.value());
      if (n.sink) *n.sink += *n.grad;
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void check_owned(const Var& v) const {
    if (v.tape_ != this) throw ValueError("variable belongs to a different tape");
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    Backward backward;
    Tensor* sink = nullptr;

    const Tensor& value() const { return external ? *external : owned; }
  };

  // deque keeps node references stable while backward rules run.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }
inline Tensor Var::grad() const { return tape_->grad(*this); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ValueError("variables belong to different tapes");
}

// c = a(MxP) * b(PxN)
inline Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), p = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data().data() + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// da += dc(MxN) * b(PxN)^T
inline void add_matmul_nt(const Tensor& dc, const Tensor& b, Tensor& da) {
  const std::size_t m = dc.rows(), n = dc.cols(), p = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc.data().data() + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double* brow = b.data().data() + k * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += drow[j] * brow[j];
      da(i, k) += s;
    }
  }
}

// db += a(MxP)^T * dc(MxN)
inline void add_matmul_tn(const Tensor& a, const Tensor& dc, Tensor& db) {
  const std::size_t m = a.rows(), p = a.cols(), n = dc.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc.data().data() + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      double* brow = db.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += aik * drow[j];
    }
  }
}

struct AxisLayout {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  return a.tape().record(detail::matmul_kernel(av, bv), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_sink(a)) detail::add_matmul_nt(g, b.value(), *ga);
    if (Tensor* gb = t.grad_sink(b)) detail::add_matmul_tn(a.value(), g, *gb);
  });
}

inline Var transpose(const Var& a) {
  return a.tape().record(a.value().transposed(), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_sink(a)) *ga += g.transposed();
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_sink(a)) *ga += g;
    if (Tensor* gb = t.grad_sink(b)) *gb += g;
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (Tensor* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor({1}, s), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_sink(a))
      for (double& v : ga->data()) v += g[0];
  });
}

/// Repeats a vector [F] into an [n x F] matrix.
inline Var tile_rows(const Var& v, std::size_t n) {
  const Tensor& x = v.value();
  x.require_rank(1);
  if (n == 0) throw DimensionError("tile_rows: repeat count must be positive");
  const std::size_t f = x.size();
  Tensor out({n, f});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < f; ++j) out(r, j) = x[j];
  return v.tape().record(std::move(out), {v}, [v, n, f](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gv = t.grad_sink(v))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < f; ++j) (*gv)[j] += g(r, j);
  });
}

/// Stacks equal-length vectors into a [rows x D] matrix.
inline Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t d = rows.front().value().size();
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& x = rows[r].value();
    if (x.rank() != 1 || x.size() != d) {
      throw DimensionError("stack_rows: row " + std::to_string(r) + " has shape " + shape_string(x.shape()) +
                           ", expected [" + std::to_string(d) + "]");
    }
    std::copy(x.data().begin(), x.data().end(), out.row(r).begin());
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return rows.front().tape().record(std::move(out), std::span<const Var>(inputs), [inputs, d](Tape& t, const Tensor& g, const Tensor&) {
    for (std::size_t r = 0; r < inputs.size(); ++r)
      if (Tensor* gr = t.grad_sink(inputs[r]))
        for (std::size_t j = 0; j < d; ++j) (*gr)[j] += g(r, j);
  });
}

/// Concatenates rank-1 tensors.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> data;
  for (const Var& p : parts) {
    p.value().require_rank(1);
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(Tensor::vector(std::move(data)), std::span<const Var>(inputs),
                                     [inputs](Tape& t, const Tensor& g, const Tensor&) {
                                       std::size_t off = 0;
                                       for (const Var& p : inputs) {
                                         const std::size_t n = p.value().size();
                                         if (Tensor* gp = t.grad_sink(p))
                                           for (std::size_t j = 0; j < n; ++j) (*gp)[j] += g[off + j];
                                         off += n;
                                       }
                                     });
}

/// Exp-normalizes every slice along `axis`, subtracting the slice maximum first.
inline Var softmax(const Var& x, std::size_t axis) {
  const Tensor& in = x.value();
  if (axis >= in.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(in.shape()));
  }
  const auto l = detail::axis_layout(in.shape(), axis);
  Tensor out(in.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t k = 0; k < l.inner; ++k) {
      const std::size_t base = o * l.extent * l.inner + k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < l.extent; ++i) mx = std::max(mx, in[base + i * l.inner]);
      double s = 0.0;
      for (std::size_t i = 0; i < l.extent; ++i) {
        const double e = std::exp(in[base + i * l.inner] - mx);
        out[base + i * l.inner] = e;
        s += e;
      }
      for (std::size_t i = 0; i < l.extent; ++i) out[base + i * l.inner] /= s;
    }
  }
  return x.tape().record(std::move(out), {x}, [x, l](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    // dx = y * (dy - <dy, y>) along the normalized axis
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t k = 0; k < l.inner; ++k) {
        const std::size_t base = o * l.extent * l.inner + k;
        double dot = 0.0;
        for (std::size_t i = 0; i < l.extent; ++i) dot += g[base + i * l.inner] * y[base + i * l.inner];
        for (std::size_t i = 0; i < l.extent; ++i) {
          const std::size_t idx = base + i * l.inner;
          (*gx)[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

/// Normalizes each slice of the last axis to zero mean and unit population
/// variance, then applies the affine map gamma * xhat + beta.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  detail::require_same_tape(x, gamma);
  detail::require_same_tape(x, beta);
  const Tensor& in = x.value();
  const std::size_t n = in.shape().back();
  if (n == 0) throw DimensionError("layer_norm: zero-length row");
  if (!(eps > 0.0)) throw ValueError("layer_norm: eps must be positive");
  const Shape expect{n};
  if (gamma.value().shape() != expect || beta.value().shape() != expect) {
    throw DimensionError("layer_norm: gamma/beta shapes " + shape_string(gamma.value().shape()) + ", " +
                         shape_string(beta.value().shape()) + " do not match normalized extent " +
                         std::to_string(n));
  }
  const std::size_t rows = in.size() / n;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(in.shape());
  Tensor xhat(in.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mean) * rstd[r];
      xhat[r * n + j] = h;
      out[r * n + j] = gv[j] * h + bv[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, const Tensor& g,
                                                                                 const Tensor&) {
        const Tensor& gv = gamma.value();
        if (Tensor* gg = t.grad_sink(gamma))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += g[r * n + j] * xhat[r * n + j];
        if (Tensor* gb = t.grad_sink(beta))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[r * n + j];
        Tensor* gx = t.grad_sink(x);
        if (!gx) return;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_d = 0.0, sum_dh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[r * n + j] * gv[j];
            sum_d += d;
            sum_dh += d * xhat[r * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[r * n + j] * gv[j];
            (*gx)[r * n + j] += rstd[r] * inv_n * (static_cast<double>(n) * d - sum_d - xhat[r * n + j] * sum_dh);
          }
        }
      });
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate). In evaluation
/// mode (or at rate 0) the input is returned unchanged and no draws are made.
inline Var dropout(const Var& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) throw ValueError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.value().shape());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return x.tape().record(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

/// y = x W + b for x of shape [In] or [N x In], W [In x Out], b [Out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  detail::require_same_tape(x, w);
  detail::require_same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  const std::size_t in = xv.shape().back();
  if (xv.rank() > 2 || wv.rank() != 2 || wv.rows() != in || bv.rank() != 1 || bv.size() != wv.cols()) {
    throw DimensionError("linear: incompatible shapes x" + shape_string(xv.shape()) + " w" + shape_string(wv.shape()) +
                         " b" + shape_string(bv.shape()));
  }
  const std::size_t out_dim = wv.cols();
  const std::size_t rows = xv.size() / in;
  const Tensor x2 = xv.reshaped({rows, in});
  Tensor y = detail::matmul_kernel(x2, wv);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out_dim; ++j) y(r, j) += bv[j];
  Shape out_shape = xv.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  return x.tape().record(y.reshaped(out_shape), {x, w, b}, [x, w, b, rows, in, out_dim](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor g2 = g.reshaped({rows, out_dim});
    if (Tensor* gx = t.grad_sink(x)) {
      Tensor gx2({rows, in});
      detail::add_matmul_nt(g2, w.value(), gx2);
      for (std::size_t i = 0; i < gx2.size(); ++i) (*gx)[i] += gx2[i];
    }
    if (Tensor* gw = t.grad_sink(w)) detail::add_matmul_tn(x.value().reshaped({rows, in}), g2, *gw);
    if (Tensor* gb = t.grad_sink(b))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g2(r, j);
  });
}

/// Column means of a [T x D] sequence.
inline Var mean_pool_time(const Var& x) {
  const Tensor& xv = x.value();
  xv.require_rank(2);
  const std::size_t steps = xv.rows(), d = xv.cols();
  if (steps == 0) throw DimensionError("mean_pool_time: empty sequence");
  Tensor out({d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv(t, j);
  for (double& v : out.data()) v /= static_cast<double>(steps);
  return x.tape().record(std::move(out), {x}, [x, steps, d](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_sink(x)) {
      const double w = 1.0 / static_cast<double>(steps);
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t j = 0; j < d; ++j) (*gx)(s, j) += w * g[j];
    }
  });
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
/// Logits are [C] (one sample) or [B x C].
inline Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() > 2) throw DimensionError("cross_entropy: logits must be [C] or [B x C]");
  const std::size_t classes = lv.shape().back();
  const std::size_t batch = lv.size() / classes;
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  Tensor probs(lv.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw ValueError("cross_entropy: label " + std::to_string(labels[b]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    const double* row = lv.data().data() + b * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[labels[b]];
  }
  loss /= static_cast<double>(batch);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor({1}, loss), {logits},
      [logits, probs = std::move(probs), lab = std::move(lab), batch, classes](Tape& t, const Tensor& g, const Tensor&) {
        Tensor* gl = t.grad_sink(logits);
        if (!gl) return;
        const double w = g[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < classes; ++c)
            (*gl)[b * classes + c] += w * (probs[b * classes + c] - (c == lab[b] ? 1.0 : 0.0));
      });
}

inline Var cross_entropy(const Var& logits, std::size_t label) {
  const std::size_t labels[1] = {label};
  return cross_entropy(logits, std::span<const std::size_t>(labels, 1));
}

}  // namespace recapd
