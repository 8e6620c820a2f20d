// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are a file pair: <prefix>.manifest.json describing the model
// config and a tensor directory, and <prefix>.blob holding every tensor as raw
// little-endian float32 in directory order.
#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "blockexp/expansion.hpp"
#include "blockexp/model.hpp"
#include "blockexp/training.hpp"

namespace blockexp {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"hidden", c.hidden},           {"heads", c.heads},
          {"ffn", c.ffn},               {"blocks", c.blocks},           {"max_seq_len", c.max_seq_len},
          {"norm_eps", c.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.blocks = j.value("blocks", c.blocks);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_lr", c.max_lr},
          {"warmup_ratio", c.warmup_ratio},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"seq_len", c.seq_len},
          {"grad_clip_norm", c.grad_clip_norm},
          {"betas", {c.beta1, c.beta2}},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"strategy", to_string(c.strategy)},
          {"lora_rank", c.lora_rank},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.max_lr = j.value("max_lr", c.max_lr);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  if (j.contains("betas")) {
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
  }
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

inline std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Provenance {
  std::string base_checkpoint_hash;  // blob hash of the checkpoint this one derives from
  std::optional<ExpansionPlan> plan;
  std::string train_config_hash;
};

struct TensorEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // bytes
  std::size_t length = 0;  // bytes
  std::optional<bool> trainable;
};

struct Checkpoint {
  DecoderModel model;
  std::optional<FreezeMask> mask;
  Provenance provenance;
  std::string blob_hash;
};

inline std::string manifest_path(const std::string& prefix) { return prefix + ".manifest.json"; }
inline std::string blob_path(const std::string& prefix) { return prefix + ".blob"; }

namespace detail {

inline void append_le(std::string& out, std::span<const float> v) {
  static_assert(sizeof(float) == 4);
  const std::size_t at = out.size();
  out.resize(at + v.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + at, v.data(), v.size() * 4);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(v[i]);
      for (int b = 0; b < 4; ++b) out[at + i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
  }
}

inline void read_le(const std::string& blob, std::size_t offset, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), blob.data() + offset, out.size() * 4);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i * 4 + b])) << (8 * b);
      }
      out[i] = std::bit_cast<float>(u);
    }
  }
}

// Writes via a temporary sibling and renames over the target.
inline void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Locates the tensor slot for a parameter name, creating adapter or MoE
// slots on demand. Throws for names that are not model parameters.
inline Tensor& slot_for(DecoderModel& m, const std::string& name) {
  if (name == "embedding") return m.embedding;
  if (name == "final_norm") return m.final_norm;
  if (name == "lm_head") return m.lm_head;
  const std::string pre = "blocks.";
  if (name.rfind(pre, 0) == 0) {
    const std::size_t dot = name.find('.', pre.size());
    if (dot != std::string::npos) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(name.substr(pre.size(), dot - pre.size()));
      } catch (const std::exception&) {
        throw CheckpointError("manifest: malformed tensor name " + name);
      }
      if (idx >= m.blocks.size()) throw CheckpointError("manifest: tensor " + name + " refers to a missing block");
      BlockWeights& b = m.blocks[idx];
      const std::string s = name.substr(dot + 1);
      if (s == "attn_norm") return b.attn_norm;
      if (s == "ffn_norm") return b.ffn_norm;
      if (s == "w3_hat" || s == "gate") {
        if (!b.moe) b.moe = MoEBlockExtension{};
        return s == "gate" ? b.moe->gate : b.moe->w3_hat;
      }
      for (const auto& role : block_matrix_roles()) {
        if (s == role) return block_matrix(b, role);
        if (s == role + ".lora_a") return b.lora[role].a;
        if (s == role + ".lora_b") return b.lora[role].b;
      }
    }
  }
  throw CheckpointError("manifest: unknown tensor name " + name);
}

}  // namespace detail

// Serializes model (and optional mask) to <prefix>.manifest.json + .blob.
// Output bytes depend only on the inputs. Returns the blob hash.
inline std::string save_checkpoint(const std::string& prefix, const DecoderModel& m,
                                   const FreezeMask* mask = nullptr, const Provenance& prov = {}) {
  m.validate();
  if (mask) mask->require_covers(m);
  std::string blob;
  nlohmann::json dir = nlohmann::json::array();
  for_each_param(m, [&](const std::string& name, const Tensor& t) {
    const std::size_t off = blob.size();
    detail::append_le(blob, t.data());
    nlohmann::json e{{"name", name}, {"shape", t.shape()}, {"offset", off}, {"length", blob.size() - off}};
    if (mask) e["trainable"] = mask->is_trainable(name);
    dir.push_back(std::move(e));
  });
  const std::string hash = hex64(fnv1a64(blob.data(), blob.size()));
  nlohmann::json man{
      {"format", "blockexp-checkpoint"},
      {"format_version", kCheckpointFormatVersion},
      {"config", to_json(m.config)},
      {"blob", std::filesystem::path(blob_path(prefix)).filename().string()},
      {"blob_bytes", blob.size()},
      {"has_mask", mask != nullptr},
      {"tensors", dir},
      {"provenance",
       {{"blob_hash", hash},
        {"base_checkpoint_hash", prov.base_checkpoint_hash},
        {"expansion_plan", prov.plan ? to_json(*prov.plan) : nlohmann::json(nullptr)},
        {"train_config_hash", prov.train_config_hash}}}};
  const auto parent = std::filesystem::path(prefix).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  detail::atomic_write(blob_path(prefix), blob);
  detail::atomic_write(manifest_path(prefix), man.dump(2) + "\n");
  return hash;
}

// Parses and fully validates a manifest against the blob size without
// reading any tensor data.
inline std::vector<TensorEntry> validate_manifest(const nlohmann::json& man, std::size_t blob_size) {
  if (!man.contains("format_version") || man.at("format_version") != kCheckpointFormatVersion) {
    throw CheckpointError("manifest: unsupported format_version " +
                          (man.contains("format_version") ? man.at("format_version").dump() : "(missing)"));
  }
  std::vector<TensorEntry> entries;
  std::set<std::string> names;
  const bool has_mask = man.value("has_mask", false);
  for (const auto& e : man.at("tensors")) {
    TensorEntry t;
    t.name = e.at("name").get<std::string>();
    t.shape = e.at("shape").get<Shape>();
    t.offset = e.at("offset").get<std::size_t>();
    t.length = e.at("length").get<std::size_t>();
    if (has_mask) {
      if (!e.contains("trainable")) throw CheckpointError("manifest: tensor " + t.name + " lacks a trainable flag");
      t.trainable = e.at("trainable").get<bool>();
    }
    if (!names.insert(t.name).second) throw CheckpointError("manifest: duplicate tensor name " + t.name);
    if (t.shape.empty() || std::find(t.shape.begin(), t.shape.end(), 0) != t.shape.end()) {
      throw CheckpointError("manifest: tensor " + t.name + " has an invalid shape");
    }
    if (shape_numel(t.shape) * 4 != t.length) {
      throw CheckpointError("manifest: tensor " + t.name + " length " + std::to_string(t.length) +
                            " disagrees with shape " + shape_str(t.shape));
    }
    if (t.offset > blob_size || t.length > blob_size - t.offset) {
      throw CheckpointError("manifest: tensor " + t.name + " [" + std::to_string(t.offset) + ", +" +
                            std::to_string(t.length) + ") lies outside the " + std::to_string(blob_size) +
                            "-byte blob");
    }
    entries.push_back(std::move(t));
  }
  std::vector<const TensorEntry*> by_off;
  for (const auto& t : entries) by_off.push_back(&t);
  std::sort(by_off.begin(), by_off.end(), [](auto a, auto b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_off.size(); ++i) {
    if (by_off[i - 1]->offset + by_off[i - 1]->length > by_off[i]->offset) {
      throw CheckpointError("manifest: tensor " + by_off[i]->name + " overlaps " + by_off[i - 1]->name);
    }
  }
  return entries;
}

inline Checkpoint load_checkpoint(const std::string& prefix) {
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(detail::read_file(manifest_path(prefix)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest " + manifest_path(prefix) + ": " + e.what());
  }
  const std::string blob = detail::read_file(blob_path(prefix));
  Checkpoint ck;
  std::vector<TensorEntry> entries;
  try {
    entries = validate_manifest(man, blob.size());
    ck.model.config = model_config_from_json(man.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest " + manifest_path(prefix) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("manifest " + manifest_path(prefix) + ": " + e.what());
  }
  ck.blob_hash = man.contains("provenance") ? man["provenance"].value("blob_hash", "") : "";
  if (ck.blob_hash != hex64(fnv1a64(blob.data(), blob.size()))) {
    throw CheckpointError("checkpoint: blob hash does not match manifest provenance.blob_hash");
  }
  ck.model.blocks.resize(ck.model.config.blocks);
  // Resolve every name before materializing tensors.
  for (const auto& t : entries) detail::slot_for(ck.model, t.name);
  std::size_t expected = 0;
  for_each_param(ck.model, [&](const std::string&, const Tensor&) { ++expected; });
  if (expected != entries.size()) {
    throw CheckpointError("manifest: " + std::to_string(entries.size()) + " tensors listed but the model has " +
                          std::to_string(expected) + " parameters");
  }
  if (man.value("has_mask", false)) ck.mask = FreezeMask{};
  for (const auto& t : entries) {
    Tensor v(t.shape);
    detail::read_le(blob, t.offset, v.mutable_data());
    detail::slot_for(ck.model, t.name) = std::move(v);
    if (ck.mask) ck.mask->trainable[t.name] = *t.trainable;
  }
  try {
    ck.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  const auto& prov = man.at("provenance");
  ck.provenance.base_checkpoint_hash = prov.value("base_checkpoint_hash", "");
  ck.provenance.train_config_hash = prov.value("train_config_hash", "");
  if (prov.contains("expansion_plan") && !prov.at("expansion_plan").is_null()) {
    ck.provenance.plan = plan_from_json(prov.at("expansion_plan"));
  }
  return ck;
}

}  // namespace blockexp
