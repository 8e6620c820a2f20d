// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <thread>

#include "blockexp/data.hpp"
#include "blockexp/model.hpp"
#include "blockexp/training.hpp"

namespace blockexp {

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

// Negative log-likelihood of the next token at each row but the last.
inline std::vector<double> next_token_nll(const Tensor& logits, std::span<const int> tokens) {
  const std::size_t v = logits.dim(1);
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(logits.at(i, j) - mx);
    out.push_back(mx + std::log(z) - logits.at(i, static_cast<std::size_t>(tokens[i + 1])));
  }
  return out;
}

struct PerplexityResult {
  double mean_nll = 0.0;
  std::size_t predictions = 0;
  std::size_t windows = 0;

  double perplexity() const { return std::exp(mean_nll); }
};

// Documents are cut into consecutive non-overlapping windows of seq_len
// tokens; a trailing partial window counts if it has at least 2 tokens. Each
// window predicts its own tokens 2..n. Window sums are added in sorted order,
// so the result does not depend on document order.
inline PerplexityResult evaluate_nll(const DecoderModel& m, const Corpus& corpus, std::size_t seq_len) {
  if (seq_len < 2) throw std::invalid_argument("perplexity: seq_len must be >= 2");
  if (seq_len > m.config.max_seq_len) {
    throw std::invalid_argument("perplexity: seq_len " + std::to_string(seq_len) +
                                " exceeds model maximum " + std::to_string(m.config.max_seq_len));
  }
  std::vector<double> sums;
  PerplexityResult r;
  for (const auto& doc : corpus.documents) {
    for (std::size_t off = 0; off + 2 <= doc.size(); off += seq_len) {
      std::span<const int> w(doc.data() + off, std::min(seq_len, doc.size() - off));
      double s = 0.0;
      for (double x : next_token_nll(logits(m, w), w)) s += x;
      sums.push_back(s);
      r.predictions += w.size() - 1;
    }
  }
  if (sums.empty()) throw std::invalid_argument("perplexity: corpus " + corpus.name + " has no tokens to score");
  std::sort(sums.begin(), sums.end());
  double total = 0.0;
  for (double s : sums) total += s;
  r.windows = sums.size();
  r.mean_nll = total / static_cast<double>(r.predictions);
  return r;
}

inline double perplexity(const DecoderModel& m, const Corpus& corpus, std::size_t seq_len) {
  return evaluate_nll(m, corpus, seq_len).perplexity();
}

// ---------------------------------------------------------------------------
// Token distribution shift
// ---------------------------------------------------------------------------

// 1-based rank of `observed` when the row is sorted descending; equal values
// are ordered by token id. Depends only on the ordering of the logits.
inline std::size_t rank_in_row(std::span<const float> row, int observed) {
  const float o = row[static_cast<std::size_t>(observed)];
  std::size_t r = 1;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] > o || (row[j] == o && static_cast<int>(j) < observed)) ++r;
  }
  return r;
}

// Base rank of the observed next token after `context` under `base`.
inline std::size_t base_rank(const DecoderModel& base, std::span<const int> context, int observed) {
  if (context.empty()) throw std::invalid_argument("base_rank: empty context");
  if (context.size() > base.config.max_seq_len) context = context.last(base.config.max_seq_len);
  const Tensor l = logits(base, context);
  const std::size_t v = l.dim(1);
  return rank_in_row(l.data().subspan((l.dim(0) - 1) * v, v), observed);
}

struct ShiftReport {
  std::vector<std::size_t> ranks;         // one per generated position
  std::vector<std::size_t> query_offsets; // start of each query's ranks
  double unshifted = 0.0;                 // η = 1
  double marginal = 0.0;                  // 1 < η ≤ 3
  double shifted = 0.0;                   // η > 3
  std::vector<std::pair<int, std::size_t>> frequent_shifted;  // (token, count)

  nlohmann::json to_json() const {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& [tok, cnt] : frequent_shifted) {
      top.push_back({{"token", tok}, {"text", tok < 256 ? std::string(1, static_cast<char>(tok)) : std::string()},
                     {"count", cnt}});
    }
    return {{"positions", ranks.size()}, {"unshifted", unshifted}, {"marginal", marginal},
            {"shifted", shifted},        {"ranks", ranks},         {"query_offsets", query_offsets},
            {"frequent_shifted", top}};
  }
};

// Greedy-decodes each query with `aligned` and ranks every generated token
// under `base` given the same context. An empty query starts from BOS. With
// no generated positions the report is all-unshifted.
inline ShiftReport shift_analysis(const DecoderModel& base, const DecoderModel& aligned,
                                  const std::vector<std::vector<int>>& queries,
                                  std::size_t max_new_tokens, std::size_t top_k = 10) {
  if (base.config.vocab_size != aligned.config.vocab_size) {
    throw std::invalid_argument("shift_analysis: models do not share a vocabulary");
  }
  ShiftReport rep;
  std::map<int, std::size_t> shifted_counts;
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& q0 : queries) {
    std::vector<int> q = q0.empty() ? std::vector<int>{kBosId} : q0;
    rep.query_offsets.push_back(rep.ranks.size());
    const std::vector<int> out = greedy_decode(aligned, q, max_new_tokens);
    std::vector<int> seq = q;
    seq.insert(seq.end(), out.begin(), out.end());
    const bool one_pass = seq.size() <= base.config.max_seq_len;
    Tensor full;
    if (one_pass && !out.empty()) full = logits(base, std::span<const int>(seq.data(), seq.size() - 1));
    for (std::size_t t = 0; t < out.size(); ++t) {
      const std::size_t ctx = q.size() + t;
      std::size_t eta;
      if (one_pass) {
        const std::size_t v = full.dim(1);
        eta = rank_in_row(full.data().subspan((ctx - 1) * v, v), out[t]);
      } else {
        eta = base_rank(base, std::span<const int>(seq.data(), ctx), out[t]);
      }
      rep.ranks.push_back(eta);
      if (eta == 1) {
        ++counts[0];
      } else if (eta <= 3) {
        ++counts[1];
      } else {
        ++counts[2];
        ++shifted_counts[out[t]];
      }
    }
  }
  const double total = static_cast<double>(rep.ranks.size());
  if (rep.ranks.empty()) {
    rep.unshifted = 1.0;
  } else {
    rep.unshifted = counts[0] / total;
    rep.marginal = counts[1] / total;
    rep.shifted = counts[2] / total;
  }
  std::vector<std::pair<int, std::size_t>> top(shifted_counts.begin(), shifted_counts.end());
  std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (top.size() > top_k) top.resize(top_k);
  rep.frequent_shifted = std::move(top);
  return rep;
}

// ---------------------------------------------------------------------------
// Strategy comparison
// ---------------------------------------------------------------------------

struct CompareRow {
  std::string strategy;
  std::uint64_t seed = 0;
  double domain_ppl = 0.0;
  double general_ppl = 0.0;
  std::size_t trainable_params = 0;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  double final_loss = 0.0;  // mean training loss over the last 100 steps
  bool failed = false;
  std::string error;
  std::vector<StepRecord> history;
};

struct CompareReport {
  double base_domain_ppl = 0.0;
  double base_general_ppl = 0.0;
  std::vector<CompareRow> rows;

  // Median over successful seeds of one strategy's rows.
  CompareRow median(const std::string& strategy) const {
    std::vector<const CompareRow*> sel;
    for (const auto& r : rows) {
      if (r.strategy == strategy && !r.failed) sel.push_back(&r);
    }
    CompareRow m;
    m.strategy = strategy;
    if (sel.empty()) {
      m.failed = true;
      m.error = "no successful runs";
      return m;
    }
    auto med = [&](auto field) {
      std::vector<double> v;
      for (const auto* r : sel) v.push_back(static_cast<double>(r->*field));
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    m.domain_ppl = med(&CompareRow::domain_ppl);
    m.general_ppl = med(&CompareRow::general_ppl);
    m.wall_seconds = med(&CompareRow::wall_seconds);
    m.final_loss = med(&CompareRow::final_loss);
    m.trainable_params = sel.front()->trainable_params;
    m.steps = sel.front()->steps;
    return m;
  }

  std::vector<std::string> strategies() const {
    std::vector<std::string> out;
    for (const auto& r : rows) {
      if (std::find(out.begin(), out.end(), r.strategy) == out.end()) out.push_back(r.strategy);
    }
    return out;
  }

  // Reports carry no timings so reruns are byte-identical; wall time is
  // available separately from timing_json().
  void write_csv(const std::string& path, bool medians) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << std::setprecision(9);
    out << "strategy,seed,domain_ppl,general_ppl,trainable_params,steps,final_loss,status\n";
    out << "base,," << base_domain_ppl << ',' << base_general_ppl << ",0,0,,ok\n";
    auto line = [&](const CompareRow& r, const std::string& seed) {
      out << r.strategy << ',' << seed << ',' << r.domain_ppl << ',' << r.general_ppl << ','
          << r.trainable_params << ',' << r.steps << ',' << r.final_loss << ','
          << (r.failed ? "failed: " + r.error : std::string("ok")) << '\n';
    };
    if (medians) {
      for (const auto& s : strategies()) line(median(s), "median");
    } else {
      for (const auto& r : rows) line(r, std::to_string(r.seed));
    }
    if (!out) throw std::runtime_error("write failed for " + path);
  }

  nlohmann::json timing_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) j.push_back({{"strategy", r.strategy}, {"seed", r.seed}, {"wall_seconds", r.wall_seconds}});
    return j;
  }

  nlohmann::json to_json() const {
    auto row = [](const CompareRow& r) {
      return nlohmann::json{{"strategy", r.strategy},       {"seed", r.seed},
                            {"domain_ppl", r.domain_ppl},   {"general_ppl", r.general_ppl},
                            {"trainable_params", r.trainable_params}, {"steps", r.steps},
                            {"final_loss", r.final_loss},   {"failed", r.failed},
                            {"error", r.error}};
    };
    nlohmann::json j{{"base", {{"domain_ppl", base_domain_ppl}, {"general_ppl", base_general_ppl}}}};
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) j["rows"].push_back(row(r));
    j["medians"] = nlohmann::json::array();
    for (const auto& s : strategies()) j["medians"].push_back(row(median(s)));
    return j;
  }
};

struct CompareInputs {
  const DecoderModel* base = nullptr;
  std::vector<Corpus> domain_train;
  Corpus general_eval;
  Corpus domain_eval;
  std::size_t eval_seq_len = 64;
  std::size_t workers = 1;
};

inline double tail_mean_loss(const std::vector<StepRecord>& h, std::size_t window = 100) {
  if (h.empty()) return 0.0;
  const std::size_t start = h.size() > window ? h.size() - window : 0;
  double s = 0.0;
  for (std::size_t i = start; i < h.size(); ++i) s += h[i].loss;
  return s / static_cast<double>(h.size() - start);
}

// One run: prepare the strategy from the base, train on the domain stream,
// then score both held-out corpora.
inline CompareRow run_strategy(const CompareInputs& in, const StrategySpec& spec, TrainConfig cfg,
                               std::uint64_t seed) {
  CompareRow row;
  row.strategy = spec.label();
  row.seed = seed;
  row.steps = cfg.total_steps;
  cfg.seed = seed;
  cfg.strategy = spec.kind;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ExpandedModel run = prepare_strategy(*in.base, spec, derive_seed(seed, "adapter"));
    row.trainable_params = run.mask.trainable_count(run.model);
    MixtureSampler stream(in.domain_train, BatchSpec{cfg.seq_len, cfg.batch_size, seed});
    row.history = train(run.model, run.mask, stream, cfg);
    row.final_loss = tail_mean_loss(row.history);
    row.domain_ppl = perplexity(run.model, in.domain_eval, in.eval_seq_len);
    row.general_ppl = perplexity(run.model, in.general_eval, in.eval_seq_len);
  } catch (const DivergenceError& e) {
    row.failed = true;
    row.error = e.what();
  } catch (const NonFiniteError& e) {
    row.failed = true;
    row.error = e.what();
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

// Every (strategy, seed) pair from the same base. Runs fan out over
// in.workers threads; rows come back in (strategy, seed) order regardless.
inline CompareReport compare_strategies(const CompareInputs& in, const std::vector<StrategySpec>& strategies,
                                        const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("compare_strategies: at least one seed required");
  if (in.base == nullptr) throw std::invalid_argument("compare_strategies: no base model");
  CompareReport rep;
  rep.base_domain_ppl = perplexity(*in.base, in.domain_eval, in.eval_seq_len);
  rep.base_general_ppl = perplexity(*in.base, in.general_eval, in.eval_seq_len);
  std::vector<std::pair<const StrategySpec*, std::uint64_t>> jobs;
  for (const auto& s : strategies) {
    for (auto seed : seeds) jobs.emplace_back(&s, seed);
  }
  rep.rows.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      rep.rows[i] = run_strategy(in, *jobs[i].first, cfg, jobs[i].second);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(in.workers, jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rep;
}

}  // namespace blockexp
