// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "blockexp/expansion.hpp"
#include "blockexp/training.hpp"
#include "test_support.hpp"

using namespace blockexp;
using testkit::random_tokens;
using testkit::toy_config;

namespace {

std::vector<int> afters(const ExpansionPlan& p) {
  std::vector<int> out;
  for (const auto& i : p.insertions) out.push_back(i.after);
  return out;
}

std::string error_of(std::size_t l, std::size_t n, std::size_t p) {
  try {
    plan_expansion(l, n, p, Placement::interleaved);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Plan, ThirtyTwoBlocksEightGroups) {
  const auto p = plan_expansion(32, 8, 1, Placement::interleaved);
  EXPECT_EQ(p.expanded_count(), 40u);
  EXPECT_EQ(afters(p), (std::vector<int>{3, 7, 11, 15, 19, 23, 27, 31}));
  for (const auto& i : p.insertions) EXPECT_EQ(static_cast<int>(i.source), i.after);
}

TEST(Plan, SmallCasesPerPlacement) {
  EXPECT_EQ(afters(plan_expansion(4, 2, 1, Placement::interleaved)), (std::vector<int>{1, 3}));
  EXPECT_EQ(afters(plan_expansion(4, 2, 1, Placement::suffix)), (std::vector<int>{3, 3}));
  EXPECT_EQ(afters(plan_expansion(4, 2, 1, Placement::prefix)), (std::vector<int>{-1, -1}));
  EXPECT_EQ(plan_expansion(1, 1, 1, Placement::interleaved).expanded_count(), 2u);
}

TEST(Plan, CopiesTakeTopBlocksOfEachGroup) {
  const auto p = plan_expansion(8, 2, 2, Placement::interleaved);
  ASSERT_EQ(p.insertions.size(), 4u);
  EXPECT_EQ(p.insertions[0].source, 2u);
  EXPECT_EQ(p.insertions[1].source, 3u);
  EXPECT_EQ(p.insertions[2].source, 6u);
  EXPECT_EQ(p.insertions[3].source, 7u);
  // Layout: 0 1 2 3 c2 c3 4 5 6 7 c6 c7
  const auto lay = p.layout();
  ASSERT_EQ(lay.size(), 12u);
  EXPECT_TRUE(lay[4].first && lay[4].second == 2u);
  EXPECT_TRUE(lay[5].first && lay[5].second == 3u);
  EXPECT_FALSE(lay[6].first);
  EXPECT_EQ(lay[6].second, 4u);
}

TEST(Plan, ConstraintViolationsNameTheConstraint) {
  EXPECT_NE(error_of(10, 4, 1).find("L mod N"), std::string::npos);
  EXPECT_NE(error_of(8, 4, 3).find("P"), std::string::npos);
  EXPECT_NE(error_of(8, 4, 0).find("P"), std::string::npos);
  EXPECT_THROW(plan_expansion(0, 1, 1, Placement::interleaved), std::invalid_argument);
}

TEST(Plan, JsonRoundTripAndPlacementDiffers) {
  const auto a = plan_expansion(8, 4, 1, Placement::interleaved);
  const auto b = plan_expansion(8, 4, 1, Placement::suffix);
  EXPECT_EQ(to_json(plan_from_json(to_json(a))), to_json(a));
  EXPECT_NE(to_json(a)["insertions"], to_json(b)["insertions"]);
  EXPECT_EQ(a.expanded_count(), b.expanded_count());
  EXPECT_THROW(parse_placement("middle"), std::invalid_argument);
}

TEST(Copies, IdentityCopyZeroesOutputProjectionsOnly) {
  const auto base = DecoderModel::init(toy_config(1), 1);
  const BlockWeights c = make_identity_copy(base.blocks[0]);
  for (float v : c.wo.data()) EXPECT_EQ(v, 0.0f);
  for (float v : c.w3.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_TRUE(c.wq.bitwise_equal(base.blocks[0].wq));
  EXPECT_TRUE(c.attn_norm.bitwise_equal(base.blocks[0].attn_norm));
}

TEST(Copies, NormZeroCopyZeroesBothScales) {
  const auto base = DecoderModel::init(toy_config(1), 1);
  const BlockWeights c = make_norm_zero_copy(base.blocks[0]);
  for (float v : c.attn_norm.data()) EXPECT_EQ(v, 0.0f);
  for (float v : c.ffn_norm.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_TRUE(c.wo.bitwise_equal(base.blocks[0].wo));
}

TEST(Expand, PreservesLogitsBitwiseForEveryPlacement) {
  const auto base = DecoderModel::init(toy_config(4), 3);
  for (auto placement : {Placement::interleaved, Placement::prefix, Placement::suffix}) {
    for (auto [n, p] : {std::pair{1, 1}, {2, 1}, {2, 2}, {4, 1}}) {
      const auto e = expand_model(base, plan_expansion(4, n, p, placement));
      const auto r = verify_preservation(base, e.model, 100, 12, 17);
      EXPECT_EQ(r.max_abs_diff, 0.0f) << to_string(placement) << " N=" << n << " P=" << p;
    }
  }
}

TEST(Expand, NormZeroCopiesAlsoPreserve) {
  const auto base = DecoderModel::init(toy_config(4), 3);
  const auto e = expand_model(base, plan_expansion(4, 2, 1, Placement::interleaved), CopyKind::norm_zero);
  EXPECT_EQ(verify_preservation(base, e.model, 20, 10).max_abs_diff, 0.0f);
}

TEST(Expand, ExpandingTwiceStillPreserves) {
  const auto base = DecoderModel::init(toy_config(4), 3);
  const auto once = expand_model(base, plan_expansion(4, 2, 1, Placement::interleaved));
  const auto twice = expand_model(once.model, plan_expansion(6, 3, 1, Placement::suffix));
  EXPECT_EQ(twice.model.blocks.size(), 9u);
  EXPECT_EQ(verify_preservation(base, twice.model, 20, 12).max_abs_diff, 0.0f);
}

TEST(Expand, MaskCoversExactlyTheCopies) {
  const auto base = DecoderModel::init(toy_config(4), 3);
  const auto e = expand_model(base, plan_expansion(4, 2, 2, Placement::interleaved));
  e.mask.require_covers(e.model);
  EXPECT_EQ(e.model.config.blocks, 8u);
  EXPECT_EQ(e.mask.trainable_count(e.model), 2 * 2 * block_parameter_count(base.blocks[0]));
  // Layout: 0 1 c0 c1 2 3 c2 c3
  for (std::size_t i = 0; i < 8; ++i) {
    const bool copy = i == 2 || i == 3 || i == 6 || i == 7;
    EXPECT_EQ(e.mask.is_trainable(block_prefix(i) + "wo"), copy) << i;
  }
  EXPECT_FALSE(e.mask.is_trainable("embedding"));
  EXPECT_FALSE(e.mask.is_trainable("lm_head"));
}

TEST(Expand, RejectsMismatchedPlan) {
  const auto base = DecoderModel::init(toy_config(4), 3);
  EXPECT_THROW(expand_model(base, plan_expansion(8, 2, 1, Placement::interleaved)), std::invalid_argument);
}

TEST(Expand, OneTrainingStepBreaksIdentity) {
  Rng rng(12);
  const auto cfg = toy_config(2);
  const auto base = DecoderModel::init(cfg, 3);
  auto e = expand_model(base, plan_expansion(2, 1, 1, Placement::interleaved));
  const auto in = random_tokens(rng, 16, cfg.vocab_size), tgt = random_tokens(rng, 16, cfg.vocab_size);
  Tape t;
  ParamBinder bind(t, &e.mask);
  Grad g = t.backward(cross_entropy(forward_logits(bind, e.model, in, 8), tgt));
  TrainConfig tc;
  AdamW opt(tc);
  optimizer_step(e.model, g, opt, 1e-3);
  EXPECT_GT(verify_preservation(base, e.model, 5, 8).max_abs_diff, 0.0f);
}

TEST(MoE, HalvesFfnOutputAtInit) {
  Rng rng(13);
  const auto cfg = toy_config(1);
  const auto base = DecoderModel::init(cfg, 3);
  const auto e = moe_expand(base);
  const Tensor x = rng.uniform_tensor({4, cfg.hidden}, 1.0f);
  const Tensor a = swiglu_ffn(x, base.blocks[0]), b = swiglu_ffn(x, e.model.blocks[0]);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b[i], 0.5f * a[i], 1e-6f);
  EXPECT_GT(verify_preservation(base, e.model, 5, 8).max_abs_diff, 0.0f);
  std::size_t expect = 0;
  for (const auto& blk : e.model.blocks) expect += blk.moe->w3_hat.numel() + 2;
  EXPECT_EQ(e.mask.trainable_count(e.model), expect);
}
