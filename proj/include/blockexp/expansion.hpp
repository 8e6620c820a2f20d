// SPDX-License-Identifier: Apache-2.0
//
// Depth expansion by identity copies. The L original blocks are split into N
// equal groups; the top P blocks of each group are copied with their attention
// output projection and FFN down projection zeroed, so every copy starts as
// an exact identity on the residual stream.
#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "blockexp/model.hpp"
#include "blockexp/random.hpp"

namespace blockexp {

enum class Placement { interleaved, prefix, suffix };

inline std::string to_string(Placement p) {
  switch (p) {
    case Placement::interleaved: return "interleaved";
    case Placement::prefix: return "prefix";
    case Placement::suffix: return "suffix";
  }
  return "?";
}

inline Placement parse_placement(const std::string& s) {
  if (s == "interleaved") return Placement::interleaved;
  if (s == "prefix") return Placement::prefix;
  if (s == "suffix") return Placement::suffix;
  throw std::invalid_argument("unknown placement '" + s + "' (expected interleaved, prefix or suffix)");
}

struct Insertion {
  int after;           // original index the copy follows; -1 = before block 0
  std::size_t source;  // original index being copied

  bool operator==(const Insertion&) const = default;
};

struct ExpansionPlan {
  std::size_t original_count = 0;
  std::size_t groups = 0;
  std::size_t copies_per_group = 0;
  Placement placement = Placement::interleaved;
  std::vector<Insertion> insertions;

  std::size_t group_size() const { return original_count / groups; }
  std::size_t expanded_count() const { return original_count + insertions.size(); }

  // One entry per expanded block: (is_copy, original index it comes from).
  std::vector<std::pair<bool, std::size_t>> layout() const {
    std::vector<std::pair<bool, std::size_t>> out;
    for (const auto& ins : insertions) {
      if (ins.after < 0) out.emplace_back(true, ins.source);
    }
    for (std::size_t i = 0; i < original_count; ++i) {
      out.emplace_back(false, i);
      for (const auto& ins : insertions) {
        if (ins.after == static_cast<int>(i)) out.emplace_back(true, ins.source);
      }
    }
    return out;
  }

  bool operator==(const ExpansionPlan&) const = default;
};

inline ExpansionPlan plan_expansion(std::size_t original_count, std::size_t groups,
                                    std::size_t copies, Placement placement) {
  if (original_count == 0 || groups == 0) {
    throw std::invalid_argument("plan_expansion: L and N must be positive");
  }
  if (original_count % groups != 0) {
    throw std::invalid_argument("plan_expansion: L mod N must be 0 (L=" +
                                std::to_string(original_count) + ", N=" + std::to_string(groups) +
                                ")");
  }
  const std::size_t m = original_count / groups;
  if (copies < 1 || copies > m) {
    throw std::invalid_argument("plan_expansion: P must satisfy 1 <= P <= L/N (P=" +
                                std::to_string(copies) + ", L/N=" + std::to_string(m) + ")");
  }
  ExpansionPlan plan{original_count, groups, copies, placement, {}};
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t last = g * m + m - 1;
    for (std::size_t c = 0; c < copies; ++c) {
      const std::size_t src = last + 1 - copies + c;
      int after = 0;
      switch (placement) {
        case Placement::interleaved: after = static_cast<int>(last); break;
        case Placement::prefix: after = -1; break;
        case Placement::suffix: after = static_cast<int>(original_count - 1); break;
      }
      plan.insertions.push_back({after, src});
    }
  }
  return plan;
}

inline nlohmann::json to_json(const ExpansionPlan& p) {
  nlohmann::json ins = nlohmann::json::array();
  for (const auto& i : p.insertions) ins.push_back({{"after", i.after}, {"source", i.source}});
  return {{"original_count", p.original_count},
          {"groups", p.groups},
          {"copies_per_group", p.copies_per_group},
          {"placement", to_string(p.placement)},
          {"expanded_count", p.expanded_count()},
          {"insertions", ins}};
}

inline ExpansionPlan plan_from_json(const nlohmann::json& j) {
  ExpansionPlan p = plan_expansion(j.at("original_count").get<std::size_t>(),
                                   j.at("groups").get<std::size_t>(),
                                   j.at("copies_per_group").get<std::size_t>(),
                                   parse_placement(j.at("placement").get<std::string>()));
  if (j.contains("insertions")) {
    std::vector<Insertion> ins;
    for (const auto& e : j.at("insertions")) ins.push_back({e.at("after").get<int>(), e.at("source").get<std::size_t>()});
    if (ins != p.insertions) throw std::invalid_argument("plan JSON: insertion list does not match its parameters");
  }
  return p;
}

// Copy of src with W^O and W3 zeroed. Adapters and MoE extensions are not
// carried over.
inline BlockWeights make_identity_copy(const BlockWeights& src) {
  BlockWeights b = src;
  b.lora.clear();
  b.moe.reset();
  b.wo = Tensor::zeros(src.wo.shape());
  b.w3 = Tensor::zeros(src.w3.shape());
  return b;
}

// Copy of src with both RMSNorm scales zeroed instead. Output-preserving, but
// the FFN norm scale then receives exactly zero gradient.
inline BlockWeights make_norm_zero_copy(const BlockWeights& src) {
  BlockWeights b = src;
  b.lora.clear();
  b.moe.reset();
  b.attn_norm = Tensor::zeros(src.attn_norm.shape());
  b.ffn_norm = Tensor::zeros(src.ffn_norm.shape());
  return b;
}

enum class CopyKind { identity, norm_zero };

struct ExpandedModel {
  DecoderModel model;
  FreezeMask mask;
};

// Inserts copies per the plan. Only the inserted blocks are trainable.
inline ExpandedModel expand_model(const DecoderModel& m, const ExpansionPlan& plan,
                                  CopyKind kind = CopyKind::identity) {
  if (plan.original_count != m.config.blocks || m.blocks.size() != m.config.blocks) {
    throw std::invalid_argument("expand_model: plan is for " + std::to_string(plan.original_count) +
                                " blocks but model has " + std::to_string(m.blocks.size()));
  }
  ExpandedModel out;
  out.model.config = m.config;
  out.model.embedding = m.embedding;
  out.model.final_norm = m.final_norm;
  out.model.lm_head = m.lm_head;
  std::vector<bool> is_copy;
  for (const auto& [copy, src] : plan.layout()) {
    const BlockWeights& s = m.blocks[src];
    out.model.blocks.push_back(!copy ? s
                               : kind == CopyKind::identity ? make_identity_copy(s)
                                                            : make_norm_zero_copy(s));
    is_copy.push_back(copy);
  }
  out.model.config.blocks = out.model.blocks.size();
  out.mask = FreezeMask::uniform(out.model, false);
  for (std::size_t i = 0; i < is_copy.size(); ++i) {
    if (!is_copy[i]) continue;
    const std::string p = block_prefix(i);
    for_each_block_param(out.model.blocks[i],
                         [&](const std::string& s, const Tensor&) { out.mask.trainable[p + s] = true; });
  }
  return out;
}

// Two-expert FFN on every block: W3 is kept, a zero Ŵ3 and gate logits
// (0, 0) are added, and only those are trainable. With equal gates the FFN
// output is halved at init, so this construction does not preserve outputs.
inline ExpandedModel moe_expand(const DecoderModel& m) {
  ExpandedModel out{m, {}};
  for (auto& b : out.model.blocks) {
    b.moe = MoEBlockExtension{Tensor::zeros(b.w3.shape()), Tensor::zeros({2})};
  }
  out.mask = FreezeMask::uniform(out.model, false);
  for (std::size_t i = 0; i < out.model.blocks.size(); ++i) {
    out.mask.trainable[block_prefix(i) + "w3_hat"] = true;
    out.mask.trainable[block_prefix(i) + "gate"] = true;
  }
  return out;
}

struct PreservationReport {
  std::size_t trials = 0;
  std::size_t seq_len = 0;
  float max_abs_diff = 0.0f;

  bool preserved() const { return max_abs_diff == 0.0f; }
};

// Largest absolute logit difference over random token sequences.
inline PreservationReport verify_preservation(const DecoderModel& base, const DecoderModel& expanded,
                                              std::size_t trials, std::size_t seq_len,
                                              std::uint64_t seed = 0) {
  if (base.config.vocab_size != expanded.config.vocab_size) {
    throw std::invalid_argument("verify_preservation: vocabularies differ");
  }
  PreservationReport r{trials, seq_len, 0.0f};
  Rng rng(derive_seed(seed, "verify_preservation"));
  std::vector<int> tokens(seq_len);
  for (std::size_t t = 0; t < trials; ++t) {
    for (int& tok : tokens) tok = static_cast<int>(rng.below(base.config.vocab_size));
    r.max_abs_diff = std::max(r.max_abs_diff, max_abs_diff(logits(base, tokens), logits(expanded, tokens)));
  }
  return r;
}

}  // namespace blockexp
