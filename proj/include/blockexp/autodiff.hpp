// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over dense float tensors.
// A Tape records one forward pass; backward() walks it once in reverse and
// returns gradients for named leaves that were marked trainable.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blockexp/tensor.hpp"

namespace blockexp {

// Gradient of a scalar loss, keyed by parameter name. Absent keys mean zero.
using Grad = std::map<std::string, Tensor>;

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient flowing into this node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false, std::string name = {}) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr, std::move(name)});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. The closure is kept only when some input needs a
  // gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) {
      throw NonFiniteError(std::string(op) + ": non-finite value in output " +
                           shape_str(value.shape()));
    }
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw std::invalid_argument(std::string(op) + ": input from another tape");
      needs = needs || nodes_[v.id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(fn) : nullptr, {}});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }

  // Gradient accumulator for v, zero-allocated on first touch.
  std::span<float> grad_span(const Var& v) {
    Node& n = nodes_[v.id_];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad.mutable_data();
  }

  // Accumulated gradient of any node after backward(); empty if untouched.
  const Tensor& grad(const Var& v) const { return nodes_[v.id_].grad; }

  std::size_t size() const { return nodes_.size(); }

  Grad backward(const Var& root) {
    if (root.tape_ != this) throw std::invalid_argument("backward: root from another tape");
    const Node& r = nodes_[root.id_];
    if (r.value.numel() != 1) {
      throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                  shape_str(r.value.shape()));
    }
    Grad out;
    if (!r.requires_grad) return out;
    grad_span(root)[0] = 1.0f;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.backward) {
        n.backward(*this, n.grad);
      } else if (!n.name.empty()) {
        out.emplace(n.name, n.grad);
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    BackwardFn backward;
    std::string name;
  };
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(a.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  Tensor out({m, n});
  detail::MutMap(out.mutable_data().data(), m, n).noalias() =
      detail::ConstMap(a.value().data().data(), m, k) *
      detail::ConstMap(b.value().data().data(), k, n);
  return a.tape()->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    detail::ConstMap G(g.data().data(), m, n);
    if (a.requires_grad()) {
      detail::MutMap(t.grad_span(a).data(), m, k).noalias() +=
          G * detail::ConstMap(b.value().data().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      detail::MutMap(t.grad_span(b).data(), k, n).noalias() +=
          detail::ConstMap(a.value().data().data(), m, k).transpose() * G;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return a.tape()->record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    auto gd = g.data();
    for (const Var& v : {a, b}) {
      if (!v.requires_grad()) continue;
      auto gv = t.grad_span(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += gd[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return a.tape()->record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    auto gd = g.data();
    auto x = a.value().data(), y = b.value().data();
    if (a.requires_grad()) {
      auto ga = t.grad_span(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gd[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = t.grad_span(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gd[i] * x[i];
    }
  });
}

inline Var scale(const Var& a, float s) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
  return a.tape()->record("scale", std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    auto ga = t.grad_span(a);
    auto gd = g.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gd[i] * s;
  });
}

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// x * sigmoid(x)
inline Var silu(const Var& a) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * sigmoid(x[i]);
  return a.tape()->record("silu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    auto ga = t.grad_span(a);
    auto gd = g.data();
    auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const float s = sigmoid(x[i]);
      ga[i] += gd[i] * (s + x[i] * s * (1.0f - s));
    }
  });
}

// Sum of all elements, as a shape-[1] tensor.
inline Var sum(const Var& a) {
  double s = 0.0;
  for (float v : a.value().data()) s += v;
  return a.tape()->record("sum", Tensor::scalar(static_cast<float>(s)), {a},
                          [a](Tape& t, const Tensor& g) {
                            for (float& v : t.grad_span(a)) v += g[0];
                          });
}

// weights[0] * a + weights[1] * b, with weights a shape-[2] tensor.
inline Var mix2(const Var& a, const Var& b, const Var& weights) {
  detail::require_same_shape("mix2", a, b);
  if (weights.shape() != Shape{2}) {
    throw std::invalid_argument("mix2: weights must have shape [2], got " +
                                shape_str(weights.shape()));
  }
  const float w0 = weights.value()[0], w1 = weights.value()[1];
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = w0 * x[i] + w1 * y[i];
  return a.tape()->record("mix2", std::move(out), {a, b, weights},
                          [a, b, weights, w0, w1](Tape& t, const Tensor& g) {
                            auto gd = g.data();
                            auto x = a.value().data(), y = b.value().data();
                            if (a.requires_grad()) {
                              auto ga = t.grad_span(a);
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += w0 * gd[i];
                            }
                            if (b.requires_grad()) {
                              auto gb = t.grad_span(b);
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += w1 * gd[i];
                            }
                            if (weights.requires_grad()) {
                              double s0 = 0.0, s1 = 0.0;
                              for (std::size_t i = 0; i < gd.size(); ++i) {
                                s0 += static_cast<double>(gd[i]) * x[i];
                                s1 += static_cast<double>(gd[i]) * y[i];
                              }
                              auto gw = t.grad_span(weights);
                              gw[0] += static_cast<float>(s0);
                              gw[1] += static_cast<float>(s1);
                            }
                          });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Softmax along `axis`, computed with the per-slice maximum subtracted.
inline Var softmax(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out(s);
  auto o = out.mutable_data();
  auto x = a.value().data();
  for (std::size_t p = 0; p < outer; ++p) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = p * len * inner + q;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      float z = 0.0f;
      for (std::size_t j = 0; j < len; ++j) {
        const float e = std::exp(x[base + j * inner] - mx);
        o[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) o[base + j * inner] /= z;
    }
  }
  Tensor y = out;
  return a.tape()->record("softmax", std::move(out), {a},
                          [a, y, outer, inner, len](Tape& t, const Tensor& g) {
                            auto ga = t.grad_span(a);
                            auto gd = g.data();
                            auto yd = y.data();
                            for (std::size_t p = 0; p < outer; ++p) {
                              for (std::size_t q = 0; q < inner; ++q) {
                                const std::size_t base = p * len * inner + q;
                                float dot = 0.0f;
                                for (std::size_t j = 0; j < len; ++j) {
                                  dot += gd[base + j * inner] * yd[base + j * inner];
                                }
                                for (std::size_t j = 0; j < len; ++j) {
                                  const std::size_t k = base + j * inner;
                                  ga[k] += yd[k] * (gd[k] - dot);
                                }
                              }
                            }
                          });
}

// Row-wise RMSNorm: scale ⊙ x / sqrt(mean(x²) + eps), x is [n×d], scale is [d].
inline Var rms_norm(const Var& x, const Var& scale, float eps) {
  detail::require_rank("rms_norm", x, 2);
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (scale.shape() != Shape{d}) {
    throw std::invalid_argument("rms_norm: scale shape " + shape_str(scale.shape()) +
                                " does not match feature size of " + shape_str(x.shape()));
  }
  auto inv = std::make_shared<std::vector<float>>(n);
  Tensor out({n, d});
  auto o = out.mutable_data();
  auto xd = x.value().data();
  auto w = scale.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    float ss = 0.0f;
    for (std::size_t j = 0; j < d; ++j) ss += xd[i * d + j] * xd[i * d + j];
    const float r = 1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
    (*inv)[i] = r;
    for (std::size_t j = 0; j < d; ++j) o[i * d + j] = w[j] * (xd[i * d + j] * r);
  }
  return x.tape()->record("rms_norm", std::move(out), {x, scale},
                          [x, scale, inv, n, d](Tape& t, const Tensor& g) {
                            auto gd = g.data();
                            auto xd = x.value().data();
                            auto w = scale.value().data();
                            if (scale.requires_grad()) {
                              auto gw = t.grad_span(scale);
                              for (std::size_t i = 0; i < n; ++i) {
                                const float r = (*inv)[i];
                                for (std::size_t j = 0; j < d; ++j) {
                                  gw[j] += gd[i * d + j] * (xd[i * d + j] * r);
                                }
                              }
                            }
                            if (x.requires_grad()) {
                              auto gx = t.grad_span(x);
                              for (std::size_t i = 0; i < n; ++i) {
                                const float r = (*inv)[i];
                                float dot = 0.0f;
                                for (std::size_t j = 0; j < d; ++j) {
                                  dot += gd[i * d + j] * w[j] * xd[i * d + j];
                                }
                                const float c = r * r * r * dot / static_cast<float>(d);
                                for (std::size_t j = 0; j < d; ++j) {
                                  gx[i * d + j] += r * gd[i * d + j] * w[j] - c * xd[i * d + j];
                                }
                              }
                            }
                          });
}

// ---------------------------------------------------------------------------
// Sequence ops. Rows of a [B*n × d] activation are B sequences of n positions.
// ---------------------------------------------------------------------------

// Gathers rows of `table` ([V×d]) for each id.
inline Var embedding(const Var& table, std::span<const int> ids) {
  detail::require_rank("embedding", table, 2);
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw std::invalid_argument("embedding: empty id sequence");
  auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  Tensor out({ids.size(), d});
  auto o = out.mutable_data();
  auto td = table.value().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::invalid_argument("embedding: token id " + std::to_string(ids[i]) +
                                  " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, o.begin() + i * d);
  }
  return table.tape()->record("embedding", std::move(out), {table},
                              [table, idv, d](Tape& t, const Tensor& g) {
                                auto gt = t.grad_span(table);
                                auto gd = g.data();
                                for (std::size_t i = 0; i < idv->size(); ++i) {
                                  const std::size_t r = static_cast<std::size_t>((*idv)[i]);
                                  for (std::size_t j = 0; j < d; ++j) gt[r * d + j] += gd[i * d + j];
                                }
                              });
}

// Rotary position embedding on adjacent feature pairs within each head.
// Position of row r is r mod seq_len.
inline Var rope(const Var& x, std::size_t seq_len, std::size_t heads, float theta = 10000.0f) {
  detail::require_rank("rope", x, 2);
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  if (heads == 0 || d % heads != 0 || (d / heads) % 2 != 0 || seq_len == 0 || rows % seq_len != 0) {
    throw std::invalid_argument("rope: incompatible layout " + shape_str(x.shape()) + " with " +
                                std::to_string(heads) + " heads and sequence length " +
                                std::to_string(seq_len));
  }
  const std::size_t dk = d / heads, half = dk / 2;
  auto cs = std::make_shared<std::vector<float>>(seq_len * half * 2);
  for (std::size_t p = 0; p < seq_len; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / dk);
      const double ang = static_cast<double>(p) * freq;
      (*cs)[(p * half + i) * 2] = static_cast<float>(std::cos(ang));
      (*cs)[(p * half + i) * 2 + 1] = static_cast<float>(std::sin(ang));
    }
  }
  auto apply = [=](std::span<const float> in, std::span<float> out, float sign, bool accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t p = r % seq_len;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < half; ++i) {
          const float c = (*cs)[(p * half + i) * 2], s = sign * (*cs)[(p * half + i) * 2 + 1];
          const std::size_t k = r * d + h * dk + 2 * i;
          const float a = in[k], b = in[k + 1];
          const float ya = a * c - b * s, yb = a * s + b * c;
          if (accumulate) {
            out[k] += ya;
            out[k + 1] += yb;
          } else {
            out[k] = ya;
            out[k + 1] = yb;
          }
        }
      }
    }
  };
  Tensor out({rows, d});
  apply(x.value().data(), out.mutable_data(), 1.0f, false);
  return x.tape()->record("rope", std::move(out), {x}, [x, apply](Tape& t, const Tensor& g) {
    apply(g.data(), t.grad_span(x), -1.0f, true);
  });
}

// Causal multi-head scaled dot-product attention over [B*n × d] inputs split
// into `heads` contiguous column groups. Scores for keys after the query are
// masked with -inf before the softmax, so they contribute exp(-inf) = 0.
inline Var causal_attention(const Var& q, const Var& k, const Var& v, std::size_t seq_len,
                            std::size_t heads) {
  detail::require_same_shape("causal_attention", q, k);
  detail::require_same_shape("causal_attention", q, v);
  detail::require_rank("causal_attention", q, 2);
  const std::size_t rows = q.shape()[0], d = q.shape()[1];
  if (heads == 0 || d % heads != 0 || seq_len == 0 || rows % seq_len != 0) {
    throw std::invalid_argument("causal_attention: incompatible layout " + shape_str(q.shape()));
  }
  const std::size_t batch = rows / seq_len, dk = d / heads, n = seq_len;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dk));
  auto probs = std::make_shared<std::vector<float>>(batch * heads * n * n, 0.0f);
  Tensor out({rows, d});
  auto o = out.mutable_data();
  auto qd = q.value().data(), kd = k.value().data(), vd = v.value().data();
  std::vector<float> sc(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      float* P = probs->data() + (b * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const float* qi = qd.data() + (b * n + i) * d + h * dk;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const float* kj = kd.data() + (b * n + j) * d + h * dk;
          float s = 0.0f;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          sc[j] = s * inv_sqrt;
          mx = std::max(mx, sc[j]);
        }
        float z = 0.0f;
        for (std::size_t j = 0; j <= i; ++j) {
          sc[j] = std::exp(sc[j] - mx);
          z += sc[j];
        }
        float* oi = o.data() + (b * n + i) * d + h * dk;
        for (std::size_t j = 0; j <= i; ++j) {
          const float p = sc[j] / z;
          P[i * n + j] = p;
          const float* vj = vd.data() + (b * n + j) * d + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return q.tape()->record(
      "causal_attention", std::move(out), {q, k, v},
      [q, k, v, probs, batch, heads, n, d, dk, inv_sqrt](Tape& t, const Tensor& g) {
        auto gd = g.data();
        auto qd = q.value().data(), kd = k.value().data(), vd = v.value().data();
        const bool need_q = q.requires_grad(), need_k = k.requires_grad(),
                   need_v = v.requires_grad();
        std::span<float> gq, gk, gv;
        if (need_q) gq = t.grad_span(q);
        if (need_k) gk = t.grad_span(k);
        if (need_v) gv = t.grad_span(v);
        std::vector<float> gp(n);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const float* P = probs->data() + (b * heads + h) * n * n;
            for (std::size_t i = 0; i < n; ++i) {
              const float* goi = gd.data() + (b * n + i) * d + h * dk;
              float dot = 0.0f;
              for (std::size_t j = 0; j <= i; ++j) {
                const float* vj = vd.data() + (b * n + j) * d + h * dk;
                float s = 0.0f;
                for (std::size_t c = 0; c < dk; ++c) s += goi[c] * vj[c];
                gp[j] = s;
                dot += P[i * n + j] * s;
                if (need_v) {
                  float* gvj = gv.data() + (b * n + j) * d + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) gvj[c] += P[i * n + j] * goi[c];
                }
              }
              if (!need_q && !need_k) continue;
              const float* qi = qd.data() + (b * n + i) * d + h * dk;
              for (std::size_t j = 0; j <= i; ++j) {
                const float gs = P[i * n + j] * (gp[j] - dot) * inv_sqrt;
                const float* kj = kd.data() + (b * n + j) * d + h * dk;
                if (need_q) {
                  float* gqi = gq.data() + (b * n + i) * d + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) gqi[c] += gs * kj[c];
                }
                if (need_k) {
                  float* gkj = gk.data() + (b * n + j) * d + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) gkj[c] += gs * qi[c];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean token negative log-likelihood of `targets` under row-wise softmax of
// `logits` ([n×V]).
inline Var cross_entropy(const Var& logits, std::span<const int> targets) {
  detail::require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  }
  for (int tk : targets) {
    if (tk < 0 || static_cast<std::size_t>(tk) >= vocab) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(tk) +
                                  " outside vocabulary of " + std::to_string(vocab));
    }
  }
  auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  auto ld = logits.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = ld.data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    total += (mx + std::log(z)) - row[(*tg)[i]];
  }
  const float loss = static_cast<float>(total / static_cast<double>(n));
  return logits.tape()->record(
      "cross_entropy", Tensor::scalar(loss), {logits}, [logits, tg, n, vocab](Tape& t, const Tensor& g) {
        auto gl = t.grad_span(logits);
        auto ld = logits.value().data();
        const double coef = static_cast<double>(g[0]) / static_cast<double>(n);
        std::vector<double> e(vocab);
        for (std::size_t i = 0; i < n; ++i) {
          const float* row = ld.data() + i * vocab;
          const double mx = *std::max_element(row, row + vocab);
          double z = 0.0;
          for (std::size_t j = 0; j < vocab; ++j) z += (e[j] = std::exp(row[j] - mx));
          for (std::size_t j = 0; j < vocab; ++j) {
            const double p = e[j] / z - (static_cast<int>(j) == (*tg)[i] ? 1.0 : 0.0);
            gl[i * vocab + j] += static_cast<float>(coef * p);
          }
        }
      });
}

}  // namespace blockexp
