// SPDX-License-Identifier: Apache-2.0
//
// Continued pretraining: warmup + cosine schedule, global-norm clipping,
// AdamW with decoupled weight decay, and the strategy setups compared in the
// ablations (block expansion, full fine-tuning, LoRA, two-expert FFN).
#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <string>
#include <vector>

#include "blockexp/data.hpp"
#include "blockexp/expansion.hpp"
#include "blockexp/model.hpp"

namespace blockexp {

enum class Strategy { block_expand, full_ft, lora, moe };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::block_expand: return "block_expand";
    case Strategy::full_ft: return "full_ft";
    case Strategy::lora: return "lora";
    case Strategy::moe: return "moe";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "block_expand") return Strategy::block_expand;
  if (s == "full_ft") return Strategy::full_ft;
  if (s == "lora") return Strategy::lora;
  if (s == "moe") return Strategy::moe;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

struct TrainConfig {
  double max_lr = 2e-4;
  double warmup_ratio = 0.06;
  std::size_t total_steps = 1000;
  std::size_t batch_size = 4;
  std::size_t seq_len = 64;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  Strategy strategy = Strategy::block_expand;
  std::size_t lora_rank = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
      throw std::invalid_argument("TrainConfig: warmup_ratio must be in [0, 1)");
    }
    if (batch_size == 0 || seq_len == 0 || lora_rank == 0) {
      throw std::invalid_argument("TrainConfig: batch_size, seq_len and lora_rank must be positive");
    }
    if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip_norm must be > 0");
    if (!(max_lr >= 0.0) || !(weight_decay >= 0.0)) {
      throw std::invalid_argument("TrainConfig: max_lr and weight_decay must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("TrainConfig: Adam betas must be in [0, 1)");
    }
  }
};

// Linear warmup from 0 to max_lr over warmup_ratio·total_steps, then cosine
// decay to 0 at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                                std::to_string(cfg.total_steps));
  }
  if (cfg.total_steps == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(cfg.total_steps);
  const double warm = cfg.warmup_ratio * total;
  if (s < warm) return cfg.max_lr * s / warm;
  const double progress = (s - warm) / (total - warm);
  return cfg.max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double global_norm(const Grad& g) {
  double s = 0.0;
  for (const auto& [_, t] : g) s += l2_norm_sq(t);
  return std::sqrt(s);
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_gradients(Grad& g, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be > 0");
  const double norm = global_norm(g);
  if (norm > max_norm) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& [_, t] : g) {
      for (float& v : t.mutable_data()) v *= factor;
    }
  }
  return norm;
}

// Norm scales and gate logits are exempt from weight decay.
inline bool decays(const std::string& name) {
  auto ends_with = [&](std::string_view suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return !(ends_with("norm") || ends_with("gate"));
}

// AdamW with decoupled weight decay; one bias-correction clock per optimizer.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  void begin_step() { ++t_; }
  std::size_t steps() const { return t_; }

  void update(const std::string& name, Tensor& param, const Tensor& grad, double lr) {
    if (!param.same_shape(grad)) {
      throw std::invalid_argument("optimizer: gradient for " + name + " has shape " +
                                  shape_str(grad.shape()) + ", parameter has " +
                                  shape_str(param.shape()));
    }
    auto [it, fresh] = m_.try_emplace(name, Tensor::zeros(param.shape()));
    if (fresh) v_.emplace(name, Tensor::zeros(param.shape()));
    auto m = it->second.mutable_data();
    auto v = v_.at(name).mutable_data();
    auto p = param.mutable_data();
    auto g = grad.data();
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double wd = decays(name) ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
      const double mh = m[i] / c1, vh = v[i] / c2;
      double x = p[i];
      x -= lr * wd * x;
      x -= lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
      p[i] = static_cast<float>(x);
    }
  }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

// Applies one AdamW step to the parameters named in g; all others are left
// untouched.
inline void optimizer_step(DecoderModel& model, const Grad& g, AdamW& opt, double lr) {
  std::size_t used = 0;
  opt.begin_step();
  for_each_param(model, [&](const std::string& name, Tensor& p) {
    if (auto it = g.find(name); it != g.end()) {
      opt.update(name, p, it->second, lr);
      ++used;
    }
  });
  if (used != g.size()) {
    for (const auto& [name, _] : g) {
      bool found = false;
      for_each_param(model, [&](const std::string& n, const Tensor&) { found = found || n == name; });
      if (!found) throw std::invalid_argument("optimizer: gradient for unknown parameter " + name);
    }
  }
}

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

using StepCallback = std::function<void(const StepRecord&, const DecoderModel&)>;

// Runs cfg.total_steps optimizer steps. Only mask-trainable parameters get
// gradients, so frozen tensors are never written.
inline std::vector<StepRecord> train(DecoderModel& model, const FreezeMask& mask,
                                     MixtureSampler& stream, const TrainConfig& cfg,
                                     const StepCallback& on_step = {}) {
  cfg.validate();
  mask.require_covers(model);
  if (stream.spec().seq_len != cfg.seq_len || stream.spec().batch_size != cfg.batch_size) {
    throw std::invalid_argument("train: data stream shape does not match TrainConfig");
  }
  AdamW opt(cfg);
  std::vector<StepRecord> history;
  history.reserve(cfg.total_steps);
  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    const Batch batch = stream.next();
    StepRecord rec{step, lr_at(step, cfg), 0.0, 0.0};
    Grad grads;
    try {
      Tape tape;
      ParamBinder bind(tape, &mask);
      Var loss = cross_entropy(forward_logits(bind, model, batch.inputs, cfg.seq_len), batch.targets);
      rec.loss = loss.value()[0];
      grads = tape.backward(loss);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(step, e.what());
    }
    if (!std::isfinite(rec.loss)) throw DivergenceError(step, "non-finite loss");
    rec.grad_norm = clip_gradients(grads, cfg.grad_clip_norm);
    if (!std::isfinite(rec.grad_norm)) throw DivergenceError(step, "non-finite gradient norm");
    optimizer_step(model, grads, opt, rec.lr);
    history.push_back(rec);
    if (on_step) on_step(rec, model);
  }
  return history;
}

inline void write_history_csv(const std::string& path, const std::vector<StepRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,lr,loss,grad_norm\n" << std::setprecision(9);
  for (const auto& r : history) out << r.step << ',' << r.lr << ',' << r.loss << ',' << r.grad_norm << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Strategy setup
// ---------------------------------------------------------------------------

// Adds A [in×r] (uniform ±1/sqrt(in)) and B = 0 [r×out] to each listed matrix
// role of every block. Only adapter tensors are trainable.
inline ExpandedModel attach_lora(const DecoderModel& m, std::size_t rank,
                                 const std::vector<std::string>& roles, std::uint64_t seed) {
  if (rank == 0) throw std::invalid_argument("attach_lora: rank must be >= 1");
  ExpandedModel out{m, {}};
  for (std::size_t i = 0; i < out.model.blocks.size(); ++i) {
    auto& b = out.model.blocks[i];
    for (const auto& role : roles) {
      const Tensor& w = block_matrix(b, role);
      Rng rng(derive_seed(seed, block_prefix(i) + role + ".lora_a"));
      b.lora[role] = LoraAdapter{
          rng.uniform_tensor({w.dim(0), rank}, 1.0f / std::sqrt(static_cast<float>(w.dim(0)))),
          Tensor::zeros({rank, w.dim(1)})};
    }
  }
  out.mask = FreezeMask::uniform(out.model, false);
  for (std::size_t i = 0; i < out.model.blocks.size(); ++i) {
    for (const auto& role : roles) {
      out.mask.trainable[block_prefix(i) + role + ".lora_a"] = true;
      out.mask.trainable[block_prefix(i) + role + ".lora_b"] = true;
    }
  }
  return out;
}

// Σ r·(in+out) over adapted matrices of all blocks.
inline std::size_t lora_parameter_count(const ModelConfig& cfg, std::size_t rank,
                                        const std::vector<std::string>& roles) {
  std::size_t per_rank = 0;
  for (const auto& role : roles) {
    const bool ffn_in = role == "w1" || role == "w2", ffn_out = role == "w3";
    const std::size_t in = ffn_out ? cfg.ffn : cfg.hidden;
    const std::size_t out = ffn_in ? cfg.ffn : cfg.hidden;
    per_rank += in + out;
  }
  return cfg.blocks * rank * per_rank;
}

// Rank whose adapter count is closest to `target` trainable parameters.
inline std::size_t matched_lora_rank(const ModelConfig& cfg, std::size_t target,
                                     const std::vector<std::string>& roles) {
  const std::size_t unit = lora_parameter_count(cfg, 1, roles);
  const std::size_t lo = std::max<std::size_t>(1, target / unit);
  const auto dist = [&](std::size_t r) {
    const auto c = lora_parameter_count(cfg, r, roles);
    return c > target ? c - target : target - c;
  };
  return dist(lo + 1) < dist(lo) ? lo + 1 : lo;
}

struct StrategySpec {
  Strategy kind = Strategy::block_expand;
  std::size_t added_blocks = 2;  // block_expand: N groups, one copy each
  Placement placement = Placement::interleaved;
  std::size_t lora_rank = 0;     // 0 = match the block_expand(+2) trainable count
  std::vector<std::string> lora_roles = block_matrix_roles();

  std::string label() const {
    std::string s = to_string(kind);
    if (kind == Strategy::block_expand) {
      s += "+" + std::to_string(added_blocks);
      if (placement != Placement::interleaved) s += "_" + to_string(placement);
    }
    return s;
  }
};

// Trainable parameter count of `added` interleaved identity copies.
inline std::size_t block_expand_trainable_count(const DecoderModel& base, std::size_t added) {
  const auto e = expand_model(base, plan_expansion(base.config.blocks, added, 1, Placement::interleaved));
  return e.mask.trainable_count(e.model);
}

inline ExpandedModel prepare_strategy(const DecoderModel& base, const StrategySpec& spec,
                                      std::uint64_t seed) {
  switch (spec.kind) {
    case Strategy::block_expand:
      return expand_model(base, plan_expansion(base.config.blocks, spec.added_blocks, 1, spec.placement));
    case Strategy::full_ft:
      return ExpandedModel{base, FreezeMask::uniform(base, true)};
    case Strategy::lora: {
      std::size_t rank = spec.lora_rank;
      if (rank == 0) {
        const std::size_t target = block_expand_trainable_count(base, 2);
        rank = matched_lora_rank(base.config, target, spec.lora_roles);
      }
      return attach_lora(base, rank, spec.lora_roles, seed);
    }
    case Strategy::moe:
      return moe_expand(base);
  }
  throw std::logic_error("prepare_strategy: unhandled strategy");
}

}  // namespace blockexp
