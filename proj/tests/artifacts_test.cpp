// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "blockexp/artifacts.hpp"
#include "test_support.hpp"

using namespace blockexp;
using testkit::toy_config;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "blockexp_artifacts";
  fs::create_directories(dir);
  return (dir / name).string();
}

bool models_bitwise_equal(const DecoderModel& a, const DecoderModel& b) {
  std::vector<std::pair<std::string, const Tensor*>> ta, tb;
  for_each_param(a, [&](const std::string& n, const Tensor& t) { ta.emplace_back(n, &t); });
  for_each_param(b, [&](const std::string& n, const Tensor& t) { tb.emplace_back(n, &t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first || !ta[i].second->bitwise_equal(*tb[i].second)) return false;
  }
  return a.config.blocks == b.config.blocks && a.config.vocab_size == b.config.vocab_size;
}

std::string slurp(const std::string& path) { return detail::read_file(path); }

nlohmann::json manifest_of(const std::string& prefix) { return nlohmann::json::parse(slurp(manifest_path(prefix))); }

void write_manifest(const std::string& prefix, const nlohmann::json& j) {
  detail::atomic_write(manifest_path(prefix), j.dump(2));
}

std::string load_error(const std::string& prefix) {
  try {
    load_checkpoint(prefix);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Checkpoint, RoundTripEveryModelKind) {
  const auto base = DecoderModel::init(toy_config(4), 1);
  const auto expanded = expand_model(base, plan_expansion(4, 2, 1, Placement::suffix));
  const auto lora = attach_lora(base, 2, {"wq", "w3"}, 5);
  const auto moe = moe_expand(base);
  struct Case {
    std::string name;
    const DecoderModel* model;
    const FreezeMask* mask;
  };
  for (const auto& c : {Case{"base", &base, nullptr}, Case{"expanded", &expanded.model, &expanded.mask},
                        Case{"lora", &lora.model, &lora.mask}, Case{"moe", &moe.model, &moe.mask}}) {
    const auto prefix = scratch(c.name);
    save_checkpoint(prefix, *c.model, c.mask);
    const Checkpoint ck = load_checkpoint(prefix);
    EXPECT_TRUE(models_bitwise_equal(*c.model, ck.model)) << c.name;
    ASSERT_EQ(ck.mask.has_value(), c.mask != nullptr) << c.name;
    if (c.mask) EXPECT_EQ(*ck.mask, *c.mask) << c.name;
  }
}

TEST(Checkpoint, BlobIsFourBytesPerParameter) {
  const auto m = DecoderModel::init(toy_config(3), 1);
  const auto prefix = scratch("size");
  save_checkpoint(prefix, m);
  EXPECT_EQ(fs::file_size(blob_path(prefix)), 4 * parameter_count(m));
}

TEST(Checkpoint, SavesAreByteIdentical) {
  const auto m = DecoderModel::init(toy_config(2), 1);
  const auto a = scratch("same_a"), b = scratch("same_b");
  EXPECT_EQ(save_checkpoint(a, m), save_checkpoint(b, m));
  EXPECT_EQ(slurp(blob_path(a)), slurp(blob_path(b)));
  const std::string man = slurp(manifest_path(a)), blob = slurp(blob_path(a));
  save_checkpoint(a, m);
  EXPECT_EQ(slurp(manifest_path(a)), man);
  EXPECT_EQ(slurp(blob_path(a)), blob);
  // Manifests of different prefixes differ only in the blob file name.
  auto ma = manifest_of(a), mb = manifest_of(b);
  ma.erase("blob");
  mb.erase("blob");
  EXPECT_EQ(ma.dump(), mb.dump());
}

TEST(Checkpoint, ProvenanceSurvives) {
  const auto base = DecoderModel::init(toy_config(4), 1);
  const auto bp = scratch("prov_base");
  const auto base_hash = save_checkpoint(bp, base);
  const auto plan = plan_expansion(4, 4, 1, Placement::interleaved);
  const auto e = expand_model(base, plan);
  const auto ep = scratch("prov_exp");
  save_checkpoint(ep, e.model, &e.mask, Provenance{base_hash, plan, "abc"});
  const auto ck = load_checkpoint(ep);
  EXPECT_EQ(ck.provenance.base_checkpoint_hash, base_hash);
  ASSERT_TRUE(ck.provenance.plan.has_value());
  EXPECT_EQ(to_json(*ck.provenance.plan), to_json(plan));
  EXPECT_EQ(ck.provenance.train_config_hash, "abc");
}

TEST(Checkpoint, TruncatedBlobNamesFirstOutOfRangeTensor) {
  const auto m = DecoderModel::init(toy_config(2), 1);
  const auto prefix = scratch("trunc");
  save_checkpoint(prefix, m);
  const auto man = manifest_of(prefix);
  const std::size_t cut = man["tensors"][3]["offset"].get<std::size_t>() + 4;
  fs::resize_file(blob_path(prefix), cut);
  const auto err = load_error(prefix);
  EXPECT_NE(err.find(man["tensors"][3]["name"].get<std::string>()), std::string::npos) << err;
  EXPECT_NE(err.find("outside"), std::string::npos) << err;
}

TEST(Checkpoint, DuplicateNameRejected) {
  const auto m = DecoderModel::init(toy_config(1), 1);
  const auto prefix = scratch("dup");
  save_checkpoint(prefix, m);
  auto man = manifest_of(prefix);
  man["tensors"][2]["name"] = man["tensors"][1]["name"];
  write_manifest(prefix, man);
  EXPECT_NE(load_error(prefix).find("duplicate"), std::string::npos);
}

TEST(Checkpoint, VersionMismatchRejected) {
  const auto m = DecoderModel::init(toy_config(1), 1);
  const auto prefix = scratch("ver");
  save_checkpoint(prefix, m);
  auto man = manifest_of(prefix);
  man["format_version"] = 2;
  write_manifest(prefix, man);
  EXPECT_NE(load_error(prefix).find("format_version"), std::string::npos);
}

TEST(Checkpoint, OverlapRejected) {
  const auto m = DecoderModel::init(toy_config(1), 1);
  const auto prefix = scratch("overlap");
  save_checkpoint(prefix, m);
  auto man = manifest_of(prefix);
  man["tensors"][2]["offset"] = man["tensors"][1]["offset"].get<std::size_t>() + 4;
  write_manifest(prefix, man);
  EXPECT_NE(load_error(prefix).find("overlaps"), std::string::npos);
}

TEST(Checkpoint, ShapeLengthDisagreementRejected) {
  const auto m = DecoderModel::init(toy_config(1), 1);
  const auto prefix = scratch("shape");
  save_checkpoint(prefix, m);
  auto man = manifest_of(prefix);
  man["tensors"][0]["shape"] = {3, 3};
  write_manifest(prefix, man);
  const auto err = load_error(prefix);
  EXPECT_NE(err.find("disagrees"), std::string::npos) << err;
}

TEST(Checkpoint, MissingOrUnknownTensorsRejected) {
  const auto m = DecoderModel::init(toy_config(1), 1);
  const auto prefix = scratch("missing");
  save_checkpoint(prefix, m);
  auto man = manifest_of(prefix);
  auto dropped = man;
  dropped["tensors"].erase(dropped["tensors"].size() - 1);
  write_manifest(prefix, dropped);
  EXPECT_NE(load_error(prefix).find("parameters"), std::string::npos);
  auto renamed = man;
  renamed["tensors"][0]["name"] = "blocks.0.mystery";
  write_manifest(prefix, renamed);
  EXPECT_NE(load_error(prefix).find("unknown tensor"), std::string::npos);
}

TEST(Checkpoint, CorruptedBlobFailsHashCheck) {
  const auto m = DecoderModel::init(toy_config(1), 1);
  const auto prefix = scratch("corrupt");
  save_checkpoint(prefix, m);
  std::string blob = slurp(blob_path(prefix));
  blob[10] ^= 0x40;
  detail::atomic_write(blob_path(prefix), blob);
  EXPECT_NE(load_error(prefix).find("hash"), std::string::npos);
}

TEST(Checkpoint, MissingFilesSurfacePath) {
  const auto prefix = scratch("nowhere");
  EXPECT_NE(load_error(prefix).find(manifest_path(prefix)), std::string::npos);
}

TEST(Config, JsonRoundTrips) {
  ModelConfig mc = toy_config(3);
  const auto mc2 = model_config_from_json(to_json(mc));
  EXPECT_EQ(to_json(mc2), to_json(mc));
  TrainConfig tc;
  tc.strategy = Strategy::lora;
  tc.total_steps = 77;
  const auto tc2 = train_config_from_json(to_json(tc));
  EXPECT_EQ(to_json(tc2), to_json(tc));
  EXPECT_EQ(config_hash(to_json(tc)), config_hash(to_json(tc2)));
  nlohmann::json bad = to_json(mc);
  bad["heads"] = 5;
  EXPECT_THROW(model_config_from_json(bad), std::invalid_argument);
}
