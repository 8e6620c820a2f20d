// SPDX-License-Identifier: Apache-2.0
//
// LLaMA-style decoder: token embedding, pre-norm blocks with causal
// multi-head attention (rotary positions) and a SwiGLU feed-forward network,
// final RMSNorm and an untied output head. All projections are bias-free.
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockexp/autodiff.hpp"
#include "blockexp/random.hpp"
#include "blockexp/tensor.hpp"

namespace blockexp {

struct ModelConfig {
  std::size_t vocab_size = 258;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ffn = 176;
  std::size_t blocks = 8;
  std::size_t max_seq_len = 64;
  float norm_eps = 1e-5f;

  std::size_t head_dim() const { return hidden / heads; }

  void validate() const {
    if (vocab_size == 0 || hidden == 0 || heads == 0 || ffn == 0 || max_seq_len == 0) {
      throw std::invalid_argument("ModelConfig: all extents must be positive");
    }
    if (hidden % heads != 0) {
      throw std::invalid_argument("ModelConfig: hidden size " + std::to_string(hidden) +
                                  " not divisible by head count " + std::to_string(heads));
    }
    if (head_dim() % 2 != 0) {
      throw std::invalid_argument("ModelConfig: head dimension must be even for rotary embedding");
    }
    if (!(norm_eps > 0.0f)) throw std::invalid_argument("ModelConfig: norm epsilon must be > 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Low-rank adapter for one [in×out] matrix: effective weight W + A·B.
struct LoraAdapter {
  Tensor a;  // [in×r]
  Tensor b;  // [r×out], zero at attach time
};

// Second down-projection mixed with the original by softmax(gate).
struct MoEBlockExtension {
  Tensor w3_hat;  // [f×d]
  Tensor gate;    // [2] logits
};

struct BlockWeights {
  Tensor attn_norm;  // [d]
  Tensor wq, wk, wv, wo;  // [d×d]
  Tensor ffn_norm;   // [d]
  Tensor w1, w2;     // [d×f]
  Tensor w3;         // [f×d]
  std::optional<MoEBlockExtension> moe;
  std::map<std::string, LoraAdapter> lora;  // keyed by matrix role
};

// Matrix roles that can carry a LoRA adapter.
inline const std::vector<std::string>& block_matrix_roles() {
  static const std::vector<std::string> roles{"wq", "wk", "wv", "wo", "w1", "w2", "w3"};
  return roles;
}

template <typename B>
auto& block_matrix(B& b, const std::string& role) {
  if (role == "wq") return b.wq;
  if (role == "wk") return b.wk;
  if (role == "wv") return b.wv;
  if (role == "wo") return b.wo;
  if (role == "w1") return b.w1;
  if (role == "w2") return b.w2;
  if (role == "w3") return b.w3;
  throw std::invalid_argument("unknown block matrix role '" + role + "'");
}

inline std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

// Visits every parameter tensor of a block as (suffix, tensor) in a fixed order.
template <typename B, typename Fn>
void for_each_block_param(B& b, Fn&& fn) {
  fn("attn_norm", b.attn_norm);
  fn("wq", b.wq);
  fn("wk", b.wk);
  fn("wv", b.wv);
  fn("wo", b.wo);
  fn("ffn_norm", b.ffn_norm);
  fn("w1", b.w1);
  fn("w2", b.w2);
  fn("w3", b.w3);
  for (auto& [role, ad] : b.lora) {
    fn(role + ".lora_a", ad.a);
    fn(role + ".lora_b", ad.b);
  }
  if (b.moe) {
    fn("w3_hat", b.moe->w3_hat);
    fn("gate", b.moe->gate);
  }
}

struct DecoderModel {
  ModelConfig config;
  Tensor embedding;  // [V×d]
  std::vector<BlockWeights> blocks;
  Tensor final_norm;  // [d]
  Tensor lm_head;     // [d×V]

  // Scaled-uniform initialization, bound 1/sqrt(fan_in). The embedding is a
  // one-hot lookup, so its fan-in is 1. Norm scales start at one.
  static DecoderModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DecoderModel m;
    m.config = cfg;
    const std::size_t d = cfg.hidden, f = cfg.ffn, v = cfg.vocab_size;
    auto uniform = [&](const std::string& name, Shape shape, std::size_t fan_in) {
      Rng rng(derive_seed(seed, name));
      return rng.uniform_tensor(std::move(shape), 1.0f / std::sqrt(static_cast<float>(fan_in)));
    };
    m.embedding = uniform("embedding", {v, d}, 1);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
      const std::string p = block_prefix(i);
      BlockWeights b;
      b.attn_norm = Tensor::ones({d});
      b.wq = uniform(p + "wq", {d, d}, d);
      b.wk = uniform(p + "wk", {d, d}, d);
      b.wv = uniform(p + "wv", {d, d}, d);
      b.wo = uniform(p + "wo", {d, d}, d);
      b.ffn_norm = Tensor::ones({d});
      b.w1 = uniform(p + "w1", {d, f}, d);
      b.w2 = uniform(p + "w2", {d, f}, d);
      b.w3 = uniform(p + "w3", {f, d}, f);
      m.blocks.push_back(std::move(b));
    }
    m.final_norm = Tensor::ones({d});
    m.lm_head = uniform("lm_head", {d, v}, d);
    return m;
  }

  // Checks every tensor against the config. Throws naming the first bad one.
  void validate() const {
    config.validate();
    if (blocks.size() != config.blocks) {
      throw std::invalid_argument("DecoderModel: " + std::to_string(blocks.size()) +
                                  " blocks but config says " + std::to_string(config.blocks));
    }
    const std::size_t d = config.hidden, f = config.ffn, v = config.vocab_size;
    auto expect = [](const std::string& name, const Tensor& t, const Shape& s) {
      if (t.shape() != s) {
        throw std::invalid_argument("DecoderModel: tensor " + name + " has shape " +
                                    shape_str(t.shape()) + ", expected " + shape_str(s));
      }
    };
    expect("embedding", embedding, {v, d});
    expect("final_norm", final_norm, {d});
    expect("lm_head", lm_head, {d, v});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      const std::string p = block_prefix(i);
      expect(p + "attn_norm", b.attn_norm, {d});
      expect(p + "ffn_norm", b.ffn_norm, {d});
      for (const char* r : {"wq", "wk", "wv", "wo"}) expect(p + r, block_matrix(b, r), {d, d});
      expect(p + "w1", b.w1, {d, f});
      expect(p + "w2", b.w2, {d, f});
      expect(p + "w3", b.w3, {f, d});
      for (const auto& [role, ad] : b.lora) {
        const Tensor& w = block_matrix(b, role);
        if (ad.a.rank() != 2 || ad.b.rank() != 2 || ad.a.dim(0) != w.dim(0) ||
            ad.b.dim(1) != w.dim(1) || ad.a.dim(1) != ad.b.dim(0)) {
          throw std::invalid_argument("DecoderModel: LoRA adapter " + p + role +
                                      " does not fit its matrix");
        }
      }
      if (b.moe) {
        expect(p + "w3_hat", b.moe->w3_hat, {f, d});
        expect(p + "gate", b.moe->gate, {2});
      }
    }
  }
};

// Visits every parameter of the model as (full name, tensor) in a fixed order.
template <typename M, typename Fn>
void for_each_param(M& m, Fn&& fn) {
  fn(std::string("embedding"), m.embedding);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string p = block_prefix(i);
    for_each_block_param(m.blocks[i], [&](const std::string& s, auto& t) { fn(p + s, t); });
  }
  fn(std::string("final_norm"), m.final_norm);
  fn(std::string("lm_head"), m.lm_head);
}

inline std::size_t parameter_count(const DecoderModel& m) {
  std::size_t n = 0;
  for_each_param(m, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

inline std::size_t block_parameter_count(const BlockWeights& b) {
  std::size_t n = 0;
  for_each_block_param(b, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

// Per-parameter trainable flags over a whole model.
struct FreezeMask {
  std::map<std::string, bool> trainable;

  static FreezeMask uniform(const DecoderModel& m, bool value) {
    FreezeMask mask;
    for_each_param(m, [&](const std::string& n, const Tensor&) { mask.trainable[n] = value; });
    return mask;
  }

  bool is_trainable(const std::string& name) const {
    auto it = trainable.find(name);
    return it != trainable.end() && it->second;
  }

  // Mask keys must be exactly the model's parameter names.
  void require_covers(const DecoderModel& m) const {
    std::size_t seen = 0;
    for_each_param(m, [&](const std::string& n, const Tensor&) {
      if (!trainable.count(n)) throw std::invalid_argument("FreezeMask: no flag for parameter " + n);
      ++seen;
    });
    if (seen != trainable.size()) {
      for (const auto& [n, _] : trainable) {
        bool found = false;
        for_each_param(m, [&](const std::string& pn, const Tensor&) { found = found || pn == n; });
        if (!found) throw std::invalid_argument("FreezeMask: flag for unknown parameter " + n);
      }
    }
  }

  std::size_t trainable_count(const DecoderModel& m) const {
    std::size_t c = 0;
    for_each_param(m, [&](const std::string& n, const Tensor& t) {
      if (is_trainable(n)) c += t.numel();
    });
    return c;
  }

  bool operator==(const FreezeMask&) const = default;
};

// ---------------------------------------------------------------------------
// Forward pass on a tape
// ---------------------------------------------------------------------------

// Creates leaves for parameters; trainable ones (per mask) get gradients.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape, const FreezeMask* mask = nullptr) : tape_(tape), mask_(mask) {}

  Var operator()(const std::string& name, const Tensor& t) {
    return tape_.leaf(t, mask_ != nullptr && mask_->is_trainable(name), name);
  }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  const FreezeMask* mask_;
};

struct LoraVars {
  Var a, b;
};

struct BlockVars {
  Var attn_norm, wq, wk, wv, wo, ffn_norm, w1, w2, w3;
  std::map<std::string, LoraVars> lora;
  std::optional<Var> w3_hat, gate;
};

inline BlockVars bind_block(ParamBinder& bind, const BlockWeights& b, std::size_t index) {
  const std::string p = block_prefix(index);
  BlockVars v;
  v.attn_norm = bind(p + "attn_norm", b.attn_norm);
  v.wq = bind(p + "wq", b.wq);
  v.wk = bind(p + "wk", b.wk);
  v.wv = bind(p + "wv", b.wv);
  v.wo = bind(p + "wo", b.wo);
  v.ffn_norm = bind(p + "ffn_norm", b.ffn_norm);
  v.w1 = bind(p + "w1", b.w1);
  v.w2 = bind(p + "w2", b.w2);
  v.w3 = bind(p + "w3", b.w3);
  for (const auto& [role, ad] : b.lora) {
    v.lora[role] = LoraVars{bind(p + role + ".lora_a", ad.a), bind(p + role + ".lora_b", ad.b)};
  }
  if (b.moe) {
    v.w3_hat = bind(p + "w3_hat", b.moe->w3_hat);
    v.gate = bind(p + "gate", b.moe->gate);
  }
  return v;
}

// x·W, plus (x·A)·B when the role carries an adapter.
inline Var linear(const Var& x, const Var& w, const BlockVars& b, const std::string& role) {
  Var y = matmul(x, w);
  if (auto it = b.lora.find(role); it != b.lora.end()) {
    y = add(y, matmul(matmul(x, it->second.a), it->second.b));
  }
  return y;
}

// Concat(head_1..head_h)·W^O over already-normalized input. Rows are
// sequences of `seq_len` positions.
inline Var mhsa(const Var& x, const BlockVars& b, const ModelConfig& cfg, std::size_t seq_len) {
  if (seq_len > cfg.max_seq_len) {
    throw std::invalid_argument("mhsa: sequence length " + std::to_string(seq_len) +
                                " exceeds maximum " + std::to_string(cfg.max_seq_len));
  }
  Var q = rope(linear(x, b.wq, b, "wq"), seq_len, cfg.heads);
  Var k = rope(linear(x, b.wk, b, "wk"), seq_len, cfg.heads);
  Var v = linear(x, b.wv, b, "wv");
  return linear(causal_attention(q, k, v, seq_len, cfg.heads), b.wo, b, "wo");
}

// SwiGLU(x, W1, W2)·W3, or its gated two-expert form when the block carries an
// MoE extension.
inline Var swiglu_ffn(const Var& x, const BlockVars& b) {
  Var h = mul(silu(linear(x, b.w1, b, "w1")), linear(x, b.w2, b, "w2"));
  Var down = linear(h, b.w3, b, "w3");
  if (b.w3_hat) down = mix2(down, matmul(h, *b.w3_hat), softmax(*b.gate, 0));
  return down;
}

inline Var block_forward(const Var& x, const BlockVars& b, const ModelConfig& cfg,
                         std::size_t seq_len) {
  Var mid = add(x, mhsa(rms_norm(x, b.attn_norm, cfg.norm_eps), b, cfg, seq_len));
  return add(mid, swiglu_ffn(rms_norm(mid, b.ffn_norm, cfg.norm_eps), b));
}

inline void check_tokens(const ModelConfig& cfg, std::span<const int> tokens, std::size_t seq_len) {
  if (seq_len == 0 || tokens.empty() || tokens.size() % seq_len != 0) {
    throw std::invalid_argument("forward: " + std::to_string(tokens.size()) +
                                " tokens do not form sequences of length " + std::to_string(seq_len));
  }
  if (seq_len > cfg.max_seq_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(seq_len) +
                                " exceeds maximum " + std::to_string(cfg.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(t) +
                                  " is outside the vocabulary of " + std::to_string(cfg.vocab_size));
    }
  }
}

// Logits [B*seq_len × V] for B sequences packed back to back in `tokens`.
inline Var forward_logits(ParamBinder& bind, const DecoderModel& m, std::span<const int> tokens,
                          std::size_t seq_len) {
  check_tokens(m.config, tokens, seq_len);
  Var x = embedding(bind("embedding", m.embedding), tokens);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    x = block_forward(x, bind_block(bind, m.blocks[i], i), m.config, seq_len);
  }
  x = rms_norm(x, bind("final_norm", m.final_norm), m.config.norm_eps);
  return matmul(x, bind("lm_head", m.lm_head));
}

// ---------------------------------------------------------------------------
// Value-level conveniences (no gradients)
// ---------------------------------------------------------------------------

inline Tensor logits(const DecoderModel& m, std::span<const int> tokens, std::size_t seq_len) {
  Tape tape;
  ParamBinder bind(tape);
  return forward_logits(bind, m, tokens, seq_len).value();
}

inline Tensor logits(const DecoderModel& m, std::span<const int> tokens) {
  return logits(m, tokens, tokens.size());
}

inline Tensor rms_norm(const Tensor& x, const Tensor& scale, float eps) {
  Tape tape;
  return rms_norm(tape.constant(x), tape.constant(scale), eps).value();
}

inline Tensor mhsa(const Tensor& x, const BlockWeights& b, const ModelConfig& cfg) {
  Tape tape;
  ParamBinder bind(tape);
  return mhsa(tape.constant(x), bind_block(bind, b, 0), cfg, x.dim(0)).value();
}

inline Tensor swiglu_ffn(const Tensor& x, const BlockWeights& b) {
  Tape tape;
  ParamBinder bind(tape);
  return swiglu_ffn(tape.constant(x), bind_block(bind, b, 0)).value();
}

inline Tensor block_forward(const Tensor& x, const BlockWeights& b, const ModelConfig& cfg) {
  Tape tape;
  ParamBinder bind(tape);
  return block_forward(tape.constant(x), bind_block(bind, b, 0), cfg, x.dim(0)).value();
}

// Greedy next-token choice from the last row of a logit matrix; ties go to the
// lowest id.
inline int argmax_last_row(const Tensor& logits) {
  const std::size_t v = logits.shape().back(), row = logits.dim(0) - 1;
  int best = 0;
  for (std::size_t j = 1; j < v; ++j) {
    if (logits.at(row, j) > logits.at(row, static_cast<std::size_t>(best))) best = static_cast<int>(j);
  }
  return best;
}

inline std::vector<int> greedy_decode(const DecoderModel& m, std::vector<int> context,
                                      std::size_t max_new_tokens) {
  std::vector<int> out;
  for (std::size_t s = 0; s < max_new_tokens; ++s) {
    std::span<const int> window(context);
    if (window.size() > m.config.max_seq_len) window = window.last(m.config.max_seq_len);
    const int next = argmax_last_row(logits(m, window));
    out.push_back(next);
    context.push_back(next);
  }
  return out;
}

}  // namespace blockexp
