// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "blockexp/data.hpp"

using namespace blockexp;

TEST(Tokenize, BytesMapToThemselves) {
  EXPECT_EQ(tokenize("abc"), (std::vector<int>{97, 98, 99}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(detokenize(std::vector<int>{}), "");
  EXPECT_EQ(tokenize("\xff")[0], 255);
}

TEST(Tokenize, RandomBlobsRoundTrip) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::string blob(1024, '\0');
    for (char& c : blob) c = static_cast<char>(rng.below(256));
    EXPECT_EQ(detokenize(tokenize(blob)), blob);
  }
}

TEST(Tokenize, SpecialsDroppedAndInvalidRejected) {
  EXPECT_EQ(detokenize(std::vector<int>{kBosId, 104, 105, kEosId}), "hi");
  EXPECT_THROW(detokenize(std::vector<int>{258}), std::invalid_argument);
  EXPECT_THROW(detokenize(std::vector<int>{-1}), std::invalid_argument);
}

TEST(Corpus, SplitOnBlankLines) {
  const auto docs = split_documents("one\ntwo\n\n\nthree\r\n \nfour");
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0], "one\ntwo");
  EXPECT_EQ(docs[1], "three");
  EXPECT_EQ(docs[2], "four");
}

TEST(Corpus, WriteThenLoad) {
  const std::string path = ::testing::TempDir() + "corpus.txt";
  const std::vector<std::string> docs{"alpha beta", "1+1=2\n2+2=4"};
  write_documents(path, docs);
  const Corpus c = load_corpus(path, "x", 1.5);
  ASSERT_EQ(c.documents.size(), 2u);
  EXPECT_EQ(detokenize(c.documents[1]), docs[1]);
  EXPECT_EQ(c.token_count(), docs[0].size() + docs[1].size());
  EXPECT_THROW(load_corpus(path + ".missing", "x"), std::runtime_error);
  EXPECT_THROW(make_corpus("bad", docs, 0.0), std::invalid_argument);
}

TEST(Generators, DeterministicAndWellFormed) {
  const auto g1 = generate_general_documents(3, 5), g2 = generate_general_documents(3, 5);
  EXPECT_EQ(g1, g2);
  EXPECT_NE(g1, generate_general_documents(4, 5));
  for (const auto& d : g1) {
    EXPECT_GE(d.size(), 300u);
    EXPECT_LE(d.size(), 700u);
    EXPECT_EQ(d.find_first_not_of("abcdefghijklmnopqrstuvwxyz ,."), std::string::npos);
    EXPECT_EQ(d.find("  "), std::string::npos);
  }
  for (const auto& d : generate_domain_documents(3, 10)) {
    std::size_t start = 0;
    while (start < d.size()) {
      std::size_t end = d.find('\n', start);
      if (end == std::string::npos) end = d.size();
      const std::string line = d.substr(start, end - start);
      const auto op = line.find_first_of("+-*"), eq = line.find('=');
      ASSERT_NE(op, std::string::npos) << line;
      const long x = std::stol(line.substr(0, op)), y = std::stol(line.substr(op + 1, eq - op - 1));
      const long r = std::stol(line.substr(eq + 1));
      const long expect = line[op] == '+' ? x + y : line[op] == '-' ? x - y : x * y;
      EXPECT_EQ(r, expect) << line;
      EXPECT_GE(r, 0);
      start = end + 1;
    }
  }
}

TEST(Sampler, SelectionProbabilitiesFollowTokensTimesWeight) {
  const std::string doc(100, 'a');
  MixtureSampler s({make_corpus("a", {doc}, 1.0), make_corpus("b", {doc}, 1.5)}, BatchSpec{8, 1, 0});
  EXPECT_NEAR(s.selection_probabilities()[0], 0.4, 1e-12);
  EXPECT_NEAR(s.selection_probabilities()[1], 0.6, 1e-12);
  MixtureSampler single({make_corpus("a", {doc})}, BatchSpec{8, 1, 0});
  EXPECT_EQ(single.selection_probabilities()[0], 1.0);
}

TEST(Sampler, EmpiricalFrequencyMatchesTarget) {
  const std::string doc(100, 'a');
  MixtureSampler s({make_corpus("a", {doc}, 1.0), make_corpus("b", {doc}, 1.5)}, BatchSpec{8, 100, 11});
  std::size_t hits = 0, total = 0;
  for (int i = 0; i < 100; ++i) {
    for (std::size_t c : s.next().corpus_index) {
      hits += c == 1;
      ++total;
    }
  }
  ASSERT_EQ(total, 10000u);
  EXPECT_NEAR(static_cast<double>(hits) / total, 0.6, 0.02);
}

TEST(Sampler, WindowsAreContiguousAndTargetsShifted) {
  std::string doc;
  for (int i = 0; i < 200; ++i) doc.push_back(static_cast<char>('a' + i % 26));
  MixtureSampler s({make_corpus("a", {doc})}, BatchSpec{16, 4, 2});
  for (int i = 0; i < 20; ++i) {
    const Batch b = s.next();
    ASSERT_EQ(b.inputs.size(), 64u);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t j = 0; j < 16; ++j) {
        const int x = b.inputs[r * 16 + j], y = b.targets[r * 16 + j];
        EXPECT_EQ((x - 'a' + 1) % 26, y - 'a');
        if (j) EXPECT_EQ(b.inputs[r * 16 + j - 1], ((x - 'a' + 25) % 26) + 'a');
      }
    }
  }
}

TEST(Sampler, DeterministicUnderSeed) {
  const auto docs = generate_general_documents(1, 10);
  MixtureSampler a({make_corpus("g", docs)}, BatchSpec{32, 4, 9}), b({make_corpus("g", docs)}, BatchSpec{32, 4, 9});
  MixtureSampler c({make_corpus("g", docs)}, BatchSpec{32, 4, 10});
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const auto x = a.next(), z = c.next();
    EXPECT_EQ(x.inputs, b.next().inputs);
    differs = differs || x.inputs != z.inputs;
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, RejectsUnusableInputs) {
  EXPECT_THROW(MixtureSampler({}, BatchSpec{8, 1, 0}), std::invalid_argument);
  EXPECT_THROW(MixtureSampler({make_corpus("short", {"abc"})}, BatchSpec{8, 1, 0}), std::invalid_argument);
  EXPECT_THROW(MixtureSampler({make_corpus("a", {std::string(20, 'a')})}, BatchSpec{0, 1, 0}),
               std::invalid_argument);
}
