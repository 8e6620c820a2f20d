// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "blockexp/random.hpp"

namespace blockexp {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by BOS and EOS.
inline constexpr int kBosId = 256;
inline constexpr int kEosId = 257;
inline constexpr std::size_t kByteVocabSize = 258;

inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) ids[i] = static_cast<unsigned char>(text[i]);
  return ids;
}

// Special tokens carry no bytes and are dropped.
inline std::string detokenize(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= kByteVocabSize) {
      throw std::invalid_argument("detokenize: id " + std::to_string(id) + " outside vocabulary");
    }
    if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

struct Corpus {
  std::string name;
  std::vector<std::vector<int>> documents;
  double mixture_weight = 1.0;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.size();
    return n;
  }
};

inline Corpus make_corpus(std::string name, const std::vector<std::string>& docs, double weight = 1.0) {
  if (!(weight > 0.0)) throw std::invalid_argument("corpus " + name + ": mixture weight must be > 0");
  Corpus c{std::move(name), {}, weight};
  for (const auto& d : docs) c.documents.push_back(tokenize(d));
  return c;
}

// Splits text into documents at blank lines. Lines inside a document keep
// their newline separators.
inline std::vector<std::string> split_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string cur;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (!cur.empty()) docs.push_back(std::move(cur));
      cur.clear();
    } else {
      if (!cur.empty()) cur.push_back('\n');
      cur.append(line);
    }
    pos = nl + 1;
  }
  if (!cur.empty()) docs.push_back(std::move(cur));
  return docs;
}

inline Corpus load_corpus(const std::string& path, std::string name, double weight = 1.0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return make_corpus(std::move(name), split_documents(ss.str()), weight);
}

inline void write_documents(const std::string& path, const std::vector<std::string>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path);
  for (std::size_t i = 0; i < docs.size(); ++i) out << (i ? "\n\n" : "") << docs[i];
  out << '\n';
  if (!out) throw std::runtime_error("write failed for corpus file " + path);
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

// Pseudo-natural text from a seeded sparse order-2 character Markov source
// over lowercase letters, space, comma and period.
inline std::vector<std::string> generate_general_documents(std::uint64_t seed, std::size_t count,
                                                           std::size_t min_chars = 300,
                                                           std::size_t max_chars = 700) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz ,.";
  const std::size_t a = kAlphabet.size();
  Rng table_rng(derive_seed(seed, "general.table"));
  // successors[ctx] = list of (symbol, weight)
  std::vector<std::vector<std::pair<std::size_t, double>>> succ(a * a);
  for (std::size_t ctx = 0; ctx < succ.size(); ++ctx) {
    // No break symbol directly after a space or punctuation.
    const bool after_break = ctx % a >= 26;
    const std::size_t k = 2 + table_rng.below(4);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t sym = table_rng.below(26);
      if (!after_break) {
        if (table_rng.uniform() < 0.22) sym = 26;
        else if (table_rng.uniform() < 0.03) sym = 27 + table_rng.below(2);
      }
      succ[ctx].emplace_back(sym, 1.0 / static_cast<double>(i + 1));
    }
  }
  Rng rng(derive_seed(seed, "general.text"));
  std::vector<std::string> docs;
  std::vector<double> w;
  for (std::size_t d = 0; d < count; ++d) {
    const std::size_t len = min_chars + rng.below(max_chars - min_chars + 1);
    std::string text;
    std::size_t c0 = rng.below(26), c1 = rng.below(26);
    text.push_back(kAlphabet[c0]);
    text.push_back(kAlphabet[c1]);
    while (text.size() < len) {
      const auto& s = succ[c0 * a + c1];
      w.clear();
      for (const auto& [sym, wt] : s) w.push_back(wt);
      const std::size_t next = s[rng.weighted_index(w)].first;
      text.push_back(kAlphabet[next]);
      c0 = c1;
      c1 = next;
    }
    docs.push_back(std::move(text));
  }
  return docs;
}

// Arithmetic facts, one per line: sums and differences of two-digit numbers
// and small products.
inline std::vector<std::string> generate_domain_documents(std::uint64_t seed, std::size_t count,
                                                          std::size_t min_lines = 20,
                                                          std::size_t max_lines = 40) {
  Rng rng(derive_seed(seed, "domain.text"));
  std::vector<std::string> docs;
  for (std::size_t d = 0; d < count; ++d) {
    const std::size_t lines = min_lines + rng.below(max_lines - min_lines + 1);
    std::string text;
    for (std::size_t l = 0; l < lines; ++l) {
      const std::uint64_t op = rng.below(3);
      long x = 0, y = 0, r = 0;
      char sym = '+';
      if (op == 0) {
        x = static_cast<long>(rng.below(100));
        y = static_cast<long>(rng.below(100));
        r = x + y;
      } else if (op == 1) {
        x = static_cast<long>(rng.below(100));
        y = static_cast<long>(rng.below(static_cast<std::uint64_t>(x) + 1));
        r = x - y;
        sym = '-';
      } else {
        x = static_cast<long>(rng.below(13));
        y = static_cast<long>(rng.below(13));
        r = x * y;
        sym = '*';
      }
      if (l) text.push_back('\n');
      text += std::to_string(x) + sym + std::to_string(y) + "=" + std::to_string(r);
    }
    docs.push_back(std::move(text));
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Mixture-weighted batch sampling
// ---------------------------------------------------------------------------

struct BatchSpec {
  std::size_t seq_len = 64;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
};

struct Batch {
  std::vector<int> inputs;   // batch_size × seq_len, packed
  std::vector<int> targets;  // inputs shifted by one position
  std::vector<std::size_t> corpus_index;  // source corpus per sequence
};

// Each sequence comes from one corpus drawn with probability proportional to
// token_count × mixture_weight. Within a corpus, windows of seq_len+1 tokens
// tile each document from a per-epoch random phase and are visited in a
// seeded shuffled order; a new epoch begins when they run out.
class MixtureSampler {
 public:
  MixtureSampler(std::vector<Corpus> corpora, BatchSpec spec)
      : corpora_(std::move(corpora)), spec_(spec), rng_(derive_seed(spec.seed, "mixture")) {
    if (corpora_.empty()) throw std::invalid_argument("MixtureSampler: at least one corpus required");
    if (spec_.seq_len == 0 || spec_.batch_size == 0) {
      throw std::invalid_argument("MixtureSampler: seq_len and batch_size must be positive");
    }
    double total = 0.0;
    for (const auto& c : corpora_) {
      if (!(c.mixture_weight > 0.0)) {
        throw std::invalid_argument("MixtureSampler: corpus " + c.name + " has non-positive weight");
      }
      bool any = false;
      for (const auto& d : c.documents) any = any || d.size() >= spec_.seq_len + 1;
      if (!any) {
        throw std::invalid_argument("MixtureSampler: seq_len " + std::to_string(spec_.seq_len) +
                                    " is longer than every document in corpus " + c.name);
      }
      probs_.push_back(static_cast<double>(c.token_count()) * c.mixture_weight);
      total += probs_.back();
    }
    for (double& p : probs_) p /= total;
    states_.resize(corpora_.size());
    for (std::size_t i = 0; i < corpora_.size(); ++i) {
      states_[i].rng = Rng(derive_seed(spec_.seed, "corpus." + std::to_string(i) + "." + corpora_[i].name));
    }
  }

  const std::vector<double>& selection_probabilities() const { return probs_; }
  const BatchSpec& spec() const { return spec_; }

  Batch next() {
    Batch b;
    const std::size_t n = spec_.seq_len;
    b.inputs.reserve(spec_.batch_size * n);
    b.targets.reserve(spec_.batch_size * n);
    for (std::size_t s = 0; s < spec_.batch_size; ++s) {
      const std::size_t ci = corpora_.size() == 1 ? 0 : rng_.weighted_index(probs_);
      const auto [doc, off] = next_window(ci);
      const auto& tokens = corpora_[ci].documents[doc];
      b.inputs.insert(b.inputs.end(), tokens.begin() + static_cast<std::ptrdiff_t>(off),
                      tokens.begin() + static_cast<std::ptrdiff_t>(off + n));
      b.targets.insert(b.targets.end(), tokens.begin() + static_cast<std::ptrdiff_t>(off + 1),
                       tokens.begin() + static_cast<std::ptrdiff_t>(off + n + 1));
      b.corpus_index.push_back(ci);
    }
    return b;
  }

 private:
  struct State {
    Rng rng{0};
    std::vector<std::pair<std::size_t, std::size_t>> windows;
    std::size_t cursor = 0;
  };

  std::pair<std::size_t, std::size_t> next_window(std::size_t ci) {
    State& st = states_[ci];
    if (st.cursor >= st.windows.size()) {
      st.windows.clear();
      const std::size_t n = spec_.seq_len;
      const auto& docs = corpora_[ci].documents;
      for (std::size_t d = 0; d < docs.size(); ++d) {
        if (docs[d].size() < n + 1) continue;
        const std::size_t slack = docs[d].size() - (n + 1);
        std::size_t off = st.rng.below(std::min(slack, n - 1) + 1);
        for (; off + n + 1 <= docs[d].size(); off += n) st.windows.emplace_back(d, off);
      }
      st.rng.shuffle(st.windows);
      st.cursor = 0;
    }
    return st.windows[st.cursor++];
  }

  std::vector<Corpus> corpora_;
  BatchSpec spec_;
  Rng rng_;
  std::vector<double> probs_;
  std::vector<State> states_;
};

}  // namespace blockexp
