// SPDX-License-Identifier: Apache-2.0
//
// blockexp: pretrain a base decoder, expand it, continue pretraining, and
// evaluate or compare adaptation strategies.
//
// Exit codes: 0 success, 1 configuration or input error, 2 training
// divergence. Relative output paths are placed under $BLOCKEXP_OUTPUT_ROOT
// when it is set.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "blockexp/blockexp.hpp"

#ifndef BLOCKEXP_VERSION
#define BLOCKEXP_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace blockexp;

namespace {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Paths, config, records
// ---------------------------------------------------------------------------

fs::path output_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("BLOCKEXP_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

struct Experiment {
  json doc = json::object();
  fs::path dir;  // corpus paths resolve against the config file's directory
};

Experiment load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  Experiment e;
  try {
    e.doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path + ": " + ex.what());
  }
  e.dir = fs::path(path).parent_path();
  return e;
}

json section(const Experiment& e, const char* name) { return e.doc.value(name, json::object()); }

ModelConfig model_config(const Experiment& e) { return model_config_from_json(section(e, "model")); }

TrainConfig train_config(const Experiment& e, const char* name, std::optional<std::size_t> steps,
                         std::optional<std::uint64_t> seed) {
  TrainConfig c = train_config_from_json(section(e, name));
  if (steps) c.total_steps = *steps;
  if (seed) c.seed = *seed;
  return c;
}

Corpus corpus(const Experiment& e, const std::string& name) {
  const json reg = section(e, "corpora");
  if (!reg.contains(name)) throw ConfigError("config: corpus '" + name + "' is not in the corpora registry");
  const json& c = reg.at(name);
  fs::path p = c.at("path").get<std::string>();
  if (p.is_relative()) p = e.dir / p;
  return load_corpus(p.string(), name, c.value("weight", 1.0));
}

std::vector<Corpus> corpora(const Experiment& e, const json& names) {
  std::vector<Corpus> out;
  for (const auto& n : names) out.push_back(corpus(e, n.get<std::string>()));
  return out;
}

// Names of the corpora used for each role, with defaults.
std::string role(const Experiment& e, const char* key, const char* fallback) {
  return section(e, "roles").value(key, std::string(fallback));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Reproducibility record written beside every command's outputs.
void write_run_record(const fs::path& dir, const std::string& command, const json& config, std::uint64_t seed,
                      const json& inputs) {
  write_json(dir / "run.json", {{"command", command},
                                {"version", BLOCKEXP_VERSION},
                                {"seed", seed},
                                {"config", config},
                                {"inputs", inputs}});
}

std::string fixed(double x, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << std::fixed << x;
  return s.str();
}

// Saves a checkpoint every `every` steps under dir/checkpoints/step_N.
StepCallback periodic_saver(const fs::path& dir, std::size_t every, std::optional<FreezeMask> mask,
                            Provenance prov) {
  if (every == 0) return {};
  return [=](const StepRecord& r, const DecoderModel& m) {
    if (r.step % every == 0) {
      save_checkpoint((dir / "checkpoints" / ("step_" + std::to_string(r.step))).string(), m,
                      mask ? &*mask : nullptr, prov);
    }
  };
}

StepCallback progress_printer(std::size_t every) {
  return [every](const StepRecord& r, const DecoderModel&) {
    if (every && r.step % every == 0) {
      std::cerr << "step " << r.step << " loss " << fixed(r.loss, 4) << " lr " << r.lr << "\n";
    }
  };
}

StepCallback both(StepCallback a, StepCallback b) {
  return [a, b](const StepRecord& r, const DecoderModel& m) {
    if (a) a(r, m);
    if (b) b(r, m);
  };
}

StrategySpec strategy_from_json(const json& j) {
  StrategySpec s;
  s.kind = parse_strategy(j.at("kind").get<std::string>());
  s.added_blocks = j.value("added_blocks", s.added_blocks);
  if (j.contains("placement")) s.placement = parse_placement(j.at("placement").get<std::string>());
  s.lora_rank = j.value("lora_rank", s.lora_rank);
  if (j.contains("lora_roles")) s.lora_roles = j.at("lora_roles").get<std::vector<std::string>>();
  return s;
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string out = "data";
  std::uint64_t seed = 0;
  std::size_t general_train = 400, general_eval = 40, domain_train = 400, domain_eval = 40;
};

// Held-out documents are the tail of one longer draw from the same source.
void write_split(const fs::path& dir, const std::string& stem, std::vector<std::string> docs, std::size_t train) {
  std::vector<std::string> eval(docs.begin() + static_cast<std::ptrdiff_t>(train), docs.end());
  docs.resize(train);
  write_documents((dir / (stem + "_train.txt")).string(), docs);
  write_documents((dir / (stem + "_eval.txt")).string(), eval);
}

int cmd_gen_corpus(const GenCorpusArgs& a) {
  const fs::path dir = output_path(a.out);
  fs::create_directories(dir);
  write_split(dir, "general", generate_general_documents(a.seed, a.general_train + a.general_eval), a.general_train);
  write_split(dir, "domain", generate_domain_documents(a.seed, a.domain_train + a.domain_eval), a.domain_train);
  write_run_record(dir, "gen-corpus",
                   {{"general_train", a.general_train},
                    {"general_eval", a.general_eval},
                    {"domain_train", a.domain_train},
                    {"domain_eval", a.domain_eval}},
                   a.seed, json::object());
  std::cout << "wrote corpora to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain-base
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::size_t checkpoint_every = 0;
  std::size_t log_every = 0;
};

int cmd_pretrain(const CommonArgs& a) {
  const Experiment e = load_experiment(a.config);
  const ModelConfig mc = model_config(e);
  TrainConfig tc = train_config(e, "pretrain", a.steps, a.seed);
  tc.strategy = Strategy::full_ft;
  const fs::path dir = output_path(a.out);
  fs::create_directories(dir);
  const json names = section(e, "roles").value("pretrain", json::array({"general_train"}));
  MixtureSampler stream(corpora(e, names), BatchSpec{tc.seq_len, tc.batch_size, derive_seed(tc.seed, "pretrain.data")});
  DecoderModel m = DecoderModel::init(mc, derive_seed(tc.seed, "model.init"));
  const FreezeMask mask = FreezeMask::uniform(m, true);
  const Provenance prov{"", std::nullopt, config_hash(to_json(tc))};
  write_run_record(dir, "pretrain-base", {{"model", to_json(mc)}, {"pretrain", to_json(tc)}, {"corpora", names}},
                   tc.seed, {{"config", a.config}});
  const auto hist = train(m, mask, stream, tc,
                          both(periodic_saver(dir, a.checkpoint_every, std::nullopt, prov), progress_printer(a.log_every)));
  write_history_csv((dir / "history.csv").string(), hist);
  const std::string hash = save_checkpoint((dir / "base").string(), m, nullptr, prov);
  std::cout << "base checkpoint " << (dir / "base").string() << " blob_hash " << hash << " final_loss "
            << fixed(tail_mean_loss(hist), 6) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// expand
// ---------------------------------------------------------------------------

struct ExpandArgs {
  std::string base, out, placement = "interleaved", copy = "identity";
  std::size_t groups = 0, copies = 1, trials = 100, seq_len = 0;
  std::uint64_t seed = 0;
};

int cmd_expand(const ExpandArgs& a) {
  const Checkpoint base = load_checkpoint(a.base);
  const std::size_t l = base.model.config.blocks;
  const ExpansionPlan plan = plan_expansion(l, a.groups, a.copies, parse_placement(a.placement));
  CopyKind kind;
  if (a.copy == "identity") kind = CopyKind::identity;
  else if (a.copy == "norm_zero") kind = CopyKind::norm_zero;
  else throw ConfigError("unknown --copy '" + a.copy + "' (expected identity or norm_zero)");
  const ExpandedModel e = expand_model(base.model, plan, kind);
  const fs::path out = output_path(a.out);
  const Provenance prov{base.blob_hash, plan, ""};
  save_checkpoint(out.string(), e.model, &e.mask, prov);
  write_json(out.string() + ".plan.json", to_json(plan));
  const std::size_t n = a.seq_len ? a.seq_len : base.model.config.max_seq_len;
  const auto rep = verify_preservation(base.model, e.model, a.trials, n, a.seed);
  const fs::path dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
  write_run_record(dir, "expand",
                   {{"groups", a.groups}, {"copies", a.copies}, {"placement", a.placement}, {"copy", a.copy},
                    {"trials", a.trials}, {"seq_len", n}},
                   a.seed, {{"base", a.base}, {"base_blob_hash", base.blob_hash}});
  std::cout << "expanded " << l << " -> " << e.model.config.blocks << " blocks, trainable "
            << e.mask.trainable_count(e.model) << " of " << parameter_count(e.model) << "\n";
  std::cout << "max_abs_diff " << rep.max_abs_diff << " over " << rep.trials << " sequences\n";
  if (!rep.preserved()) {
    std::cerr << "error: expanded model does not preserve base logits\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs : CommonArgs {
  std::string checkpoint;
  std::string strategy;  // empty: use the checkpoint's freeze mask
  std::size_t added_blocks = 2;
  std::string placement = "interleaved";
  std::size_t lora_rank = 0;
};

int cmd_train(const TrainArgs& a) {
  const Experiment e = load_experiment(a.config);
  TrainConfig tc = train_config(e, "train", a.steps, a.seed);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  ExpandedModel run;
  if (a.strategy.empty()) {
    if (!ck.mask) throw ConfigError("checkpoint " + a.checkpoint + " has no freeze mask; pass --strategy");
    run = ExpandedModel{ck.model, *ck.mask};
  } else {
    StrategySpec spec;
    spec.kind = parse_strategy(a.strategy);
    spec.added_blocks = a.added_blocks;
    spec.placement = parse_placement(a.placement);
    spec.lora_rank = a.lora_rank;
    tc.strategy = spec.kind;
    run = prepare_strategy(ck.model, spec, derive_seed(tc.seed, "adapter"));
  }
  const fs::path dir = output_path(a.out);
  fs::create_directories(dir);
  const json names = section(e, "roles").value("train", json::array({"domain_train"}));
  MixtureSampler stream(corpora(e, names), BatchSpec{tc.seq_len, tc.batch_size, tc.seed});
  const Provenance prov{ck.blob_hash, ck.provenance.plan, config_hash(to_json(tc))};
  write_run_record(dir, "train",
                   {{"train", to_json(tc)}, {"strategy", a.strategy.empty() ? "checkpoint-mask" : a.strategy},
                    {"added_blocks", a.added_blocks}, {"placement", a.placement}, {"lora_rank", a.lora_rank},
                    {"corpora", names}},
                   tc.seed, {{"checkpoint", a.checkpoint}, {"checkpoint_blob_hash", ck.blob_hash}});
  const auto hist = train(run.model, run.mask, stream, tc,
                          both(periodic_saver(dir, a.checkpoint_every, run.mask, prov), progress_printer(a.log_every)));
  write_history_csv((dir / "history.csv").string(), hist);
  save_checkpoint((dir / "final").string(), run.model, &run.mask, prov);
  std::cout << "trained " << hist.size() << " steps, trainable " << run.mask.trainable_count(run.model)
            << ", final 100-step mean loss " << fixed(tail_mean_loss(hist)) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config, checkpoint, out;
  std::vector<std::string> corpora;
  std::size_t seq_len = 0;
};

int cmd_eval(const EvalArgs& a) {
  const Experiment e = load_experiment(a.config);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  std::vector<std::string> names = a.corpora;
  if (names.empty()) names = {role(e, "general_eval", "general_eval"), role(e, "domain_eval", "domain_eval")};
  const std::size_t n = a.seq_len ? a.seq_len : section(e, "compare").value("eval_seq_len", ck.model.config.max_seq_len);
  json rows = json::array();
  std::ostringstream csv;
  csv << std::setprecision(12) << "corpus,perplexity,mean_nll,predictions,windows\n";
  for (const auto& name : names) {
    const auto r = evaluate_nll(ck.model, corpus(e, name), n);
    rows.push_back({{"corpus", name}, {"perplexity", r.perplexity()}, {"mean_nll", r.mean_nll},
                    {"predictions", r.predictions}, {"windows", r.windows}});
    csv << name << ',' << r.perplexity() << ',' << r.mean_nll << ',' << r.predictions << ',' << r.windows << "\n";
    std::cout << name << " perplexity " << std::setprecision(12) << r.perplexity() << "\n";
  }
  if (!a.out.empty()) {
    const fs::path dir = output_path(a.out);
    write_json(dir / "eval.json", {{"checkpoint_blob_hash", ck.blob_hash}, {"seq_len", n}, {"results", rows}});
    write_text(dir / "eval.csv", csv.str());
    write_run_record(dir, "eval", {{"corpora", names}, {"seq_len", n}}, 0,
                     {{"checkpoint", a.checkpoint}, {"checkpoint_blob_hash", ck.blob_hash}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// shift
// ---------------------------------------------------------------------------

struct ShiftArgs {
  std::string config, base, aligned, out;
  std::size_t max_new_tokens = 0;
};

int cmd_shift(const ShiftArgs& a) {
  const Experiment e = load_experiment(a.config);
  const Checkpoint base = load_checkpoint(a.base), aligned = load_checkpoint(a.aligned);
  const json sc = section(e, "shift");
  std::vector<std::vector<int>> queries;
  for (const auto& q : sc.value("queries", json::array())) queries.push_back(tokenize(q.get<std::string>()));
  const std::size_t max_new = a.max_new_tokens ? a.max_new_tokens : sc.value("max_new_tokens", std::size_t{32});
  const ShiftReport rep = shift_analysis(base.model, aligned.model, queries, max_new);
  std::cout << "unshifted " << rep.unshifted << " marginal " << rep.marginal << " shifted " << rep.shifted
            << " over " << rep.ranks.size() << " positions\n";
  if (!a.out.empty()) {
    const fs::path dir = output_path(a.out);
    write_json(dir / "shift.json", rep.to_json());
    write_run_record(dir, "shift", {{"queries", sc.value("queries", json::array())}, {"max_new_tokens", max_new}}, 0,
                     {{"base", a.base}, {"aligned", a.aligned}, {"base_blob_hash", base.blob_hash},
                      {"aligned_blob_hash", aligned.blob_hash}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareArgs : CommonArgs {
  std::string base;
  std::vector<std::uint64_t> seeds;
  std::size_t workers = 0;
};

int cmd_compare(const CompareArgs& a) {
  const Experiment e = load_experiment(a.config);
  const json cc = section(e, "compare");
  TrainConfig tc = train_config(e, "train", a.steps, std::nullopt);
  const Checkpoint base = load_checkpoint(a.base);
  CompareInputs in;
  in.base = &base.model;
  in.domain_train = corpora(e, section(e, "roles").value("train", json::array({"domain_train"})));
  in.general_eval = corpus(e, role(e, "general_eval", "general_eval"));
  in.domain_eval = corpus(e, role(e, "domain_eval", "domain_eval"));
  in.eval_seq_len = cc.value("eval_seq_len", base.model.config.max_seq_len);
  in.workers = a.workers ? a.workers : cc.value("workers", std::size_t{1});
  std::vector<StrategySpec> specs;
  for (const auto& s : cc.value("strategies", json::array())) specs.push_back(strategy_from_json(s));
  if (specs.empty()) throw ConfigError("config: compare.strategies is empty");
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds = cc.value("seeds", std::vector<std::uint64_t>{0});
  const fs::path dir = output_path(a.out);
  fs::create_directories(dir);
  write_run_record(dir, "compare", {{"train", to_json(tc)}, {"compare", cc}, {"seeds", seeds}}, seeds.front(),
                   {{"base", a.base}, {"base_blob_hash", base.blob_hash}});
  const CompareReport rep = compare_strategies(in, specs, tc, seeds);
  rep.write_csv((dir / "compare.csv").string(), false);
  rep.write_csv((dir / "compare_medians.csv").string(), true);
  write_json(dir / "compare.json", rep.to_json());
  write_json(dir / "timing.json", rep.timing_json());
  for (const auto& r : rep.rows) {
    if (!r.failed) write_history_csv((dir / (r.strategy + "_seed" + std::to_string(r.seed) + "_history.csv")).string(), r.history);
  }
  std::cout << "base: domain_ppl " << fixed(rep.base_domain_ppl, 4) << " general_ppl "
            << fixed(rep.base_general_ppl, 4) << "\n";
  bool any_failed = false;
  for (const auto& s : rep.strategies()) {
    const CompareRow m = rep.median(s);
    any_failed = any_failed || m.failed;
    std::cout << s << ": domain_ppl " << fixed(m.domain_ppl, 4) << " general_ppl " << fixed(m.general_ppl, 4)
              << " final_loss " << fixed(m.final_loss, 4) << " trainable " << m.trainable_params
              << (m.failed ? " FAILED" : "") << "\n";
  }
  return any_failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block expansion laboratory: pretrain, expand, train, evaluate and compare decoder models"};
  app.set_version_flag("--version", std::string(BLOCKEXP_VERSION));
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Write the synthetic general and arithmetic corpora");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--general-train", gen.general_train, "General training documents")->capture_default_str();
  g->add_option("--general-eval", gen.general_eval, "General held-out documents")->capture_default_str();
  g->add_option("--domain-train", gen.domain_train, "Domain training documents")->capture_default_str();
  g->add_option("--domain-eval", gen.domain_eval, "Domain held-out documents")->capture_default_str();

  auto add_common = [](CLI::App* s, CommonArgs& c) {
    s->add_option("--config", c.config, "Experiment JSON config")->required()->check(CLI::ExistingFile);
    s->add_option("--out", c.out, "Output directory")->required();
    s->add_option("--seed", c.seed, "Seed overriding the config");
    s->add_option("--steps", c.steps, "Step count overriding the config");
    s->add_option("--checkpoint-every", c.checkpoint_every, "Save a checkpoint every K steps (0 = never)");
    s->add_option("--log-every", c.log_every, "Print the loss every K steps (0 = never)");
  };

  CommonArgs pre;
  auto* p = app.add_subcommand("pretrain-base", "Train a base model from scratch on the general corpus");
  add_common(p, pre);

  ExpandArgs ex;
  auto* x = app.add_subcommand("expand", "Insert identity copies of blocks into a base checkpoint");
  x->add_option("--base", ex.base, "Base checkpoint prefix")->required();
  x->add_option("--groups,-N", ex.groups, "Number of groups N (must divide the block count)")->required();
  x->add_option("--copies,-P", ex.copies, "Copies per group P")->capture_default_str();
  x->add_option("--placement", ex.placement, "interleaved | prefix | suffix")->capture_default_str();
  x->add_option("--copy", ex.copy, "identity | norm_zero")->capture_default_str();
  x->add_option("--out", ex.out, "Output checkpoint prefix")->required();
  x->add_option("--trials", ex.trials, "Random sequences for the preservation check")->capture_default_str();
  x->add_option("--seq-len", ex.seq_len, "Sequence length for the check (0 = model maximum)");
  x->add_option("--seed", ex.seed, "Seed for the check")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Continue pretraining on the domain corpus");
  add_common(t, tr);
  t->add_option("--checkpoint", tr.checkpoint, "Input checkpoint prefix")->required();
  t->add_option("--strategy", tr.strategy, "block_expand | full_ft | lora | moe (default: checkpoint mask)");
  t->add_option("--added-blocks", tr.added_blocks, "Blocks added by block_expand")->capture_default_str();
  t->add_option("--placement", tr.placement, "Placement for block_expand")->capture_default_str();
  t->add_option("--lora-rank", tr.lora_rank, "LoRA rank (0 = match block_expand+2)")->capture_default_str();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Perplexity of a checkpoint on registry corpora");
  v->add_option("--config", ev.config, "Experiment JSON config")->required()->check(CLI::ExistingFile);
  v->add_option("--checkpoint", ev.checkpoint, "Checkpoint prefix")->required();
  v->add_option("--corpus", ev.corpora, "Corpus names (default: general and domain eval)");
  v->add_option("--seq-len", ev.seq_len, "Window length (default: compare.eval_seq_len)");
  v->add_option("--out", ev.out, "Output directory for eval.json / eval.csv");

  ShiftArgs sh;
  auto* s = app.add_subcommand("shift", "Token distribution shift between a base and an aligned model");
  s->add_option("--config", sh.config, "Experiment JSON config")->required()->check(CLI::ExistingFile);
  s->add_option("--base", sh.base, "Base checkpoint prefix")->required();
  s->add_option("--aligned", sh.aligned, "Aligned checkpoint prefix")->required();
  s->add_option("--max-new-tokens", sh.max_new_tokens, "Greedy tokens per query (default: config)");
  s->add_option("--out", sh.out, "Output directory for shift.json");

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Run every strategy and seed from one base and tabulate");
  add_common(c, cmp);
  c->add_option("--base", cmp.base, "Base checkpoint prefix")->required();
  c->add_option("--seeds", cmp.seeds, "Seeds (default: compare.seeds)");
  c->add_option("--workers", cmp.workers, "Parallel runs (default: compare.workers)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_gen_corpus(gen);
    if (*p) return cmd_pretrain(pre);
    if (*x) return cmd_expand(ex);
    if (*t) return cmd_train(tr);
    if (*v) return cmd_eval(ev);
    if (*s) return cmd_shift(sh);
    if (*c) return cmd_compare(cmp);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
