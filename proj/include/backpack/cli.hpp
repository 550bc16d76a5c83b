#pragma once
// Command-line surface: flat --key value options with an optional key=value
// config file, per-command key allowlists, deterministic CSV output, and a
// fully resolved configuration echoed ahead of every run.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "backpack/checkpoint.hpp"
#include "backpack/control.hpp"
#include "backpack/corpus_gen.hpp"
#include "backpack/evaluation.hpp"
#include "backpack/training.hpp"
#include "backpack/verify.hpp"

namespace backpack {

struct RunConfig {
  std::string command;
  std::map<std::string, std::string> options;

  bool has(const std::string& key) const { return options.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = options.find(key);
    return it == options.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = options.find(key);
    if (it == options.end())
      throw UsageError(command + ": missing required option --" + key);
    return it->second;
  }

  long get_long(const std::string& key, long fallback) const {
    auto it = options.find(key);
    if (it == options.end()) return fallback;
    try {
      size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw UsageError("option --" + key + " expects an integer, got '" + it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = options.find(key);
    if (it == options.end()) return fallback;
    try {
      size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw UsageError("option --" + key + " expects a number, got '" + it->second + "'");
    }
  }

  uint64_t seed() const { return static_cast<uint64_t>(get_long("seed", 0)); }
};

namespace detail {

struct OptionSpec {
  std::set<std::string> value_keys;
  std::set<std::string> flag_keys;

  bool knows(const std::string& k) const { return value_keys.count(k) || flag_keys.count(k); }
};

inline const std::map<std::string, OptionSpec>& command_specs() {
  static const std::map<std::string, OptionSpec> specs = {
      {"train",
       {{"config", "corpus", "out", "steps", "warmup", "lr", "batch-tokens", "seq-len", "dim",
         "senses", "layers", "heads", "ff-mult", "min-freq", "max-vocab", "tokenizer", "seed",
         "loss-csv", "heldout-fraction", "eval-interval", "eval-max-tokens", "clip-norm",
         "weight-decay"},
        {}}},
      {"eval", {{"config", "checkpoint", "corpus", "max-tokens", "seed"}, {}}},
      {"wordsim", {{"config", "checkpoint", "dataset", "oov", "method", "out", "seed"}, {}}},
      {"senses", {{"config", "checkpoint", "word", "sense", "top", "bottom", "seed"}, {}}},
      {"generate", {{"config", "checkpoint", "prompt", "max-new", "seed"}, {}}},
      {"topic",
       {{"config", "checkpoint", "bag", "bag-words", "strength", "prompt", "max-new", "samples",
         "seed", "normalizer"},
        {}}},
      {"debias",
       {{"config", "checkpoint", "profession", "sense", "factor", "fraction", "seed"},
        {"auto", "baseline"}}},
      {"edit",
       {{"config", "checkpoint", "target", "removed", "added", "mode", "seed"}, {}}},
      {"verify", {{"config", "seed"}, {}}},
      {"make-corpus",
       {{"config", "out", "chars", "topics", "seed", "pronoun-rate", "shared-rate",
         "bigram-rate"},
        {}}},
  };
  return specs;
}

inline void load_config_file(const std::string& path, const OptionSpec& spec,
                             std::map<std::string, std::string>& into) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t a = line.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t");
    line = line.substr(a, b - a + 1);
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    size_t v = value.find_first_not_of(" \t");
    value = v == std::string::npos ? "" : value.substr(v);
    if (key == "config")
      throw UsageError(path + ": config files cannot nest other config files");
    if (!spec.knows(key))
      throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    into[key] = value;  // file entries round earlier ones; flags still win
  }
}

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void echo_resolved(const RunConfig& cfg, std::ostream& out) {
  out << "resolved_config,command," << cfg.command << "\n";
  for (const auto& [k, v] : cfg.options)  // std::map: sorted, deterministic
    out << "resolved_config," << k << "," << csv_quote(v) << "\n";
}

inline int word_id(const Vocabulary& vocab, const std::string& word, const std::string& what) {
  if (!vocab.contains(word)) throw DataError(what + " '" + word + "' is not in the vocabulary");
  return vocab.id(word);
}

inline std::vector<int> prompt_ids(const Vocabulary& vocab, const std::string& prompt) {
  std::vector<int> ids{Vocabulary::kBos};
  if (!prompt.empty()) {
    std::vector<int> rest = vocab.encode(prompt);
    ids.insert(ids.end(), rest.begin(), rest.end());
  }
  return ids;
}

}  // namespace detail

inline const char* cli_help() {
  return
      "backpack — train, inspect and steer a sense-factored language model\n"
      "\n"
      "usage: backpack <command> [--key value | --key=value]... [--config FILE]\n"
      "\n"
      "commands:\n"
      "  train        --corpus F --out CKPT [--steps N --lr X --dim N --senses N\n"
      "               --layers N --heads N --seq-len N --batch-tokens N --warmup N\n"
      "               --tokenizer word|byte --min-freq N --max-vocab N --seed S\n"
      "               --loss-csv F --heldout-fraction X --eval-interval N\n"
      "               --eval-max-tokens N --clip-norm X --weight-decay X --ff-mult N]\n"
      "  eval         --checkpoint CKPT --corpus F [--max-tokens N]\n"
      "  wordsim      --checkpoint CKPT --dataset TSV [--method all|embedding|min|senseK]\n"
      "               [--oov average-subwords|first-subword|skip] [--out F]\n"
      "  senses       --checkpoint CKPT --word W --sense L [--top N] [--bottom N]\n"
      "  generate     --checkpoint CKPT [--prompt TEXT] [--max-new N] [--seed S]\n"
      "  topic        --checkpoint CKPT (--bag LABEL | --bag-words \"w1 w2\") --strength 0..3\n"
      "               [--prompt TEXT] [--max-new N] [--samples N] [--seed S]\n"
      "               [--normalizer abs|signed]\n"
      "  debias       --checkpoint CKPT --auto [--profession W]\n"
      "               | --profession W --sense L --factor X\n"
      "               | --baseline --profession W [--fraction X]\n"
      "  edit         --checkpoint CKPT --target W --removed W [--added W]\n"
      "               [--mode corrected|faithful]\n"
      "  make-corpus  --out F [--chars N] [--topics N] [--seed S]\n"
      "  verify       run the invariant suite; exit 0 only if every check passes\n"
      "\n"
      "A --config FILE holds key=value lines ('#' comments); explicit flags override\n"
      "file values. Unknown keys are rejected. Exit codes: 0 ok, 1 usage, 2 data,\n"
      "3 numeric.\n";
}

inline RunConfig parse_config(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("no command given");
  RunConfig cfg;
  cfg.command = args[0];
  auto specs = detail::command_specs();
  auto sit = specs.find(cfg.command);
  if (sit == specs.end()) throw UsageError("unknown command '" + cfg.command + "'");
  const detail::OptionSpec& spec = sit->second;

  std::map<std::string, std::string> flags;
  for (size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0)
      throw UsageError("expected an option starting with --, got '" + a + "'");
    std::string key, value;
    bool has_value = false;
    size_t eq = a.find('=');
    if (eq != std::string::npos) {
      key = a.substr(2, eq - 2);
      value = a.substr(eq + 1);
      has_value = true;
    } else {
      key = a.substr(2);
    }
    if (!spec.knows(key))
      throw UsageError(cfg.command + ": unknown option --" + key);
    if (spec.flag_keys.count(key)) {
      if (has_value) throw UsageError("option --" + key + " takes no value");
      flags[key] = "1";
      continue;
    }
    if (!has_value) {
      if (i + 1 >= args.size()) throw UsageError("option --" + key + " expects a value");
      value = args[++i];
    }
    flags[key] = value;
  }

  auto fit = flags.find("config");
  if (fit != flags.end()) {
    detail::load_config_file(fit->second, spec, cfg.options);
    cfg.options["config"] = fit->second;
  }
  for (const auto& [k, v] : flags) cfg.options[k] = v;  // flags override the file
  return cfg;
}

namespace detail {

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  std::string corpus = read_text_file(cfg.require("corpus"));
  std::string ckpt_path = cfg.require("out");

  TokenizerMode mode = TokenizerMode::Word;
  std::string tok = cfg.get("tokenizer", "word");
  if (tok == "byte")
    mode = TokenizerMode::Byte;
  else if (tok != "word")
    throw UsageError("--tokenizer must be 'word' or 'byte'");
  long max_vocab = cfg.get_long("max-vocab", 0);
  Vocabulary vocab = Vocabulary::build(corpus, static_cast<int>(cfg.get_long("min-freq", 1)),
                                       max_vocab > 0 ? static_cast<int>(max_vocab) : (1 << 30),
                                       mode);

  TrainConfig tc;
  tc.model.vocab_size = vocab.size();
  tc.model.model_dim = static_cast<int>(cfg.get_long("dim", 64));
  tc.model.num_senses = static_cast<int>(cfg.get_long("senses", 4));
  tc.model.layers = static_cast<int>(cfg.get_long("layers", 2));
  tc.model.heads = static_cast<int>(cfg.get_long("heads", 4));
  tc.model.ff_mult = static_cast<int>(cfg.get_long("ff-mult", 4));
  tc.model.seq_len = static_cast<int>(cfg.get_long("seq-len", 64));
  tc.seq_len = tc.model.seq_len;
  tc.batch_tokens = static_cast<int>(cfg.get_long("batch-tokens", 1024));
  tc.total_steps = cfg.get_long("steps", 200);
  tc.warmup_steps = cfg.get_long("warmup", tc.total_steps / 10);
  tc.peak_lr = cfg.get_double("lr", 3e-4);
  tc.weight_decay = cfg.get_double("weight-decay", 0.01);
  tc.clip_norm = cfg.get_double("clip-norm", 1.0);
  tc.seed = cfg.seed();
  tc.eval_interval = static_cast<int>(cfg.get_long("eval-interval", 50));
  tc.heldout_fraction = cfg.get_double("heldout-fraction", 0.1);
  tc.eval_max_tokens = static_cast<int>(cfg.get_long("eval-max-tokens", 8192));
  try {
    tc.validate();
  } catch (const DimensionError& e) {
    throw UsageError(e.what());  // bad shape flags are a usage problem
  }

  TrainResult tr = train(tc, corpus, vocab);
  save_checkpoint(ckpt_path, tr.model, tr.vocab, tr.step, tr.rng_state, &tr.opt);

  std::string loss_csv = cfg.get("loss-csv");
  if (!loss_csv.empty()) {
    std::ofstream ls(loss_csv);
    if (!ls) throw DataError("cannot open " + loss_csv);
    ls << "step,lr,train_loss,eval_loss\n";
    for (const TrainLogRow& row : tr.log) {
      ls << row.step << ',' << fmt_g(row.lr) << ',' << fmt_g(row.train_loss) << ',';
      if (row.has_eval) ls << fmt_g(row.eval_loss);
      ls << '\n';
    }
  }
  out << "train,vocab_size," << vocab.size() << "\n";
  out << "train,final_step," << tr.step << "\n";
  if (tr.has_final_eval) {
    out << "train,final_eval_nll," << fmt_g(tr.final_eval_loss) << "\n";
    out << "train,final_eval_ppl," << fmt_g(std::exp(tr.final_eval_loss)) << "\n";
  }
  out << "train,checkpoint," << csv_quote(ckpt_path) << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  std::string text = read_text_file(cfg.require("corpus"));
  std::vector<int> ids = prompt_ids(ck.vocab, text);
  long max_tokens = cfg.get_long("max-tokens", 0);
  if (max_tokens > 0 && static_cast<long>(ids.size()) > max_tokens)
    ids.resize(static_cast<size_t>(max_tokens));
  double ppl = perplexity(ModelView(model), ids);
  out << "eval,tokens," << (ids.size() - 1) << "\n";
  out << "eval,perplexity," << fmt_g(ppl) << "\n";
  return 0;
}

inline int cmd_wordsim(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  WordPairDataset ds = WordPairDataset::load(cfg.require("dataset"));
  OovPolicy policy = oov_policy_from(cfg.get("oov", "average-subwords"));

  std::vector<SimilarityMethod> methods;
  std::string method = cfg.get("method", "all");
  int k = model.config().num_senses;
  if (method == "all") {
    for (int l = 0; l < k; ++l) methods.push_back({SimVariant::PerSense, l, policy});
    methods.push_back({SimVariant::MinOverSenses, 0, policy});
    methods.push_back({SimVariant::EmbeddingRow, 0, policy});
  } else if (method == "embedding") {
    methods.push_back({SimVariant::EmbeddingRow, 0, policy});
  } else if (method == "min") {
    methods.push_back({SimVariant::MinOverSenses, 0, policy});
  } else if (method.rfind("sense", 0) == 0) {
    long l = 0;
    try {
      size_t pos = 0;
      l = std::stol(method.substr(5), &pos);
      if (pos != method.size() - 5) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError("--method senseK needs an integer K, got '" + method + "'");
    }
    if (l < 0 || l >= k) throw UsageError("--method " + method + " is out of range for this model");
    methods.push_back({SimVariant::PerSense, static_cast<int>(l), policy});
  } else {
    throw UsageError("--method must be all, embedding, min or senseK");
  }

  std::vector<WordsimRow> rows;
  for (const SimilarityMethod& sm : methods) {
    WordsimResult r = evaluate_wordsim(ModelView(model), ck.vocab, ds, sm);
    rows.push_back({ds.name, sm.name(), r.rho, r.coverage});
  }
  std::string csv = wordsim_report_csv(rows);
  std::string out_path = cfg.get("out");
  if (out_path.empty()) {
    out << csv;
  } else {
    std::ofstream os(out_path);
    if (!os) throw DataError("cannot open " + out_path);
    os << csv;
    out << "wordsim,report," << csv_quote(out_path) << "\n";
  }
  return 0;
}

inline int cmd_senses(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  ModelView view(model);
  int word = word_id(ck.vocab, cfg.require("word"), "word");
  int sense = static_cast<int>(cfg.get_long("sense", 0));
  int top = static_cast<int>(cfg.get_long("top", 10));
  int bottom = static_cast<int>(cfg.get_long("bottom", 0));
  out << "direction,rank,word,score\n";
  auto rows = sense_projection_topk(view, word, sense, top);
  for (size_t i = 0; i < rows.size(); ++i)
    out << "top," << (i + 1) << ',' << csv_quote(ck.vocab.word(rows[i].word)) << ','
        << fmt_g(rows[i].score) << "\n";
  if (bottom > 0) {
    auto brows = sense_projection_topk(view, word, sense, bottom, /*bottom=*/true);
    for (size_t i = 0; i < brows.size(); ++i)
      out << "bottom," << (i + 1) << ',' << csv_quote(ck.vocab.word(brows[i].word)) << ','
          << fmt_g(brows[i].score) << "\n";
  }
  return 0;
}

inline int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  std::vector<int> prompt = prompt_ids(ck.vocab, cfg.get("prompt"));
  int max_new = static_cast<int>(cfg.get_long("max-new", 32));
  std::vector<int> ids = generate(ModelView(model), prompt, max_new, cfg.seed());
  std::vector<int> fresh(ids.begin() + static_cast<long>(prompt.size()), ids.end());
  out << "sample_id,text\n";
  out << "0," << csv_quote(ck.vocab.decode(fresh)) << "\n";
  return 0;
}

inline int cmd_topic(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  ModelView view(model);

  if (cfg.has("bag") == cfg.has("bag-words"))
    throw UsageError("topic: give exactly one of --bag or --bag-words");
  std::vector<std::string> words;
  if (cfg.has("bag")) {
    words = topic_bag(cfg.get("bag"));
  } else {
    std::istringstream ss(cfg.get("bag-words"));
    std::string w;
    while (ss >> w) words.push_back(w);
    if (words.empty()) throw UsageError("topic: --bag-words is empty");
  }
  BagOfWords bag = BagOfWords::from_words(ck.vocab, words);

  ControlStrength strength(static_cast<int>(cfg.get_long("strength", -1)));
  std::string norm = cfg.get("normalizer", "abs");
  if (norm != "abs" && norm != "signed")
    throw UsageError("--normalizer must be 'abs' or 'signed'");
  std::vector<int> prompt = prompt_ids(ck.vocab, cfg.get("prompt"));
  int max_new = static_cast<int>(cfg.get_long("max-new", 32));
  long samples = cfg.get_long("samples", 1);
  if (samples < 1) throw UsageError("topic: --samples must be >= 1");

  out << "strength,sample_id,text\n";
  for (long s = 0; s < samples; ++s) {
    TopicGeneration tg = topic_generate(view, bag, strength, prompt, max_new,
                                        cfg.seed() + static_cast<uint64_t>(s), norm == "abs");
    std::vector<int> fresh(tg.ids.begin() + static_cast<long>(prompt.size()), tg.ids.end());
    out << strength.level << ',' << s << ',' << csv_quote(ck.vocab.decode(fresh)) << "\n";
  }
  return 0;
}

inline int cmd_debias(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  ModelView view(model);
  BiasEvalSuite suite = default_bias_suite();
  suite.check();

  auto eval_ratio = [&](const ModelView& v, const std::string& profession) {
    std::vector<std::string> prompts = instantiate_prompts(suite.eval_templates, profession);
    return bias_ratio(v, ck.vocab, prompts, suite.pronoun_a, suite.pronoun_b);
  };

  if (cfg.has("baseline")) {
    std::string profession = cfg.require("profession");
    int x = word_id(ck.vocab, profession, "profession");
    double fraction = cfg.get_double("fraction", 1.0);
    int he = word_id(ck.vocab, suite.pronoun_a, "pronoun");
    int she = word_id(ck.vocab, suite.pronoun_b, "pronoun");
    double before = eval_ratio(view, profession);
    BackpackModel debiased = nullspace_debias_baseline(model, x, he, she, fraction);
    double after = eval_ratio(ModelView(debiased), profession);
    out << "method,profession,fraction,eval_before,eval_after\n";
    out << "nullspace-baseline," << csv_quote(profession) << ',' << fmt_g(fraction) << ','
        << fmt_g(before) << ',' << fmt_g(after) << "\n";
    return 0;
  }

  if (cfg.has("auto")) {
    int sense = find_bias_sense(view, ck.vocab, suite);
    out << "debias,bias_sense," << sense << "\n";
    std::vector<std::string> professions;
    if (cfg.has("profession")) {
      professions.push_back(cfg.require("profession"));
    } else {
      int skipped = 0;
      for (const std::string& p : suite.professions)
        if (ck.vocab.contains(p))
          professions.push_back(p);
        else
          ++skipped;
      out << "debias,skipped_professions," << skipped << "\n";
      if (professions.empty()) throw DataError("debias: no profession is in the vocabulary");
    }
    out << "profession,sense,factor,estimation_before,estimation_after,eval_before,eval_after\n";
    for (const std::string& p : professions) {
      ScaleSearchResult r = optimize_sense_scale(view, ck.vocab, suite, p, sense);
      ModelView scaled = scale_sense(view, word_id(ck.vocab, p, "profession"), sense, r.factor);
      out << csv_quote(p) << ',' << sense << ',' << fmt_g(r.factor) << ',' << fmt_g(r.unmodified)
          << ',' << fmt_g(r.ratio) << ',' << fmt_g(eval_ratio(view, p)) << ','
          << fmt_g(eval_ratio(scaled, p)) << "\n";
    }
    return 0;
  }

  std::string profession = cfg.require("profession");
  int x = word_id(ck.vocab, profession, "profession");
  int sense = static_cast<int>(cfg.get_long("sense", 0));
  double factor = cfg.get_double("factor", 0.0);
  ModelView scaled = scale_sense(view, x, sense, factor);
  out << "profession,sense,factor,eval_before,eval_after\n";
  out << csv_quote(profession) << ',' << sense << ',' << fmt_g(factor) << ','
      << fmt_g(eval_ratio(view, profession)) << ',' << fmt_g(eval_ratio(scaled, profession))
      << "\n";
  return 0;
}

inline int cmd_edit(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  BackpackModel model = model_from_checkpoint(ck);
  ModelView base(model);

  EditSpec spec;
  spec.target = word_id(ck.vocab, cfg.require("target"), "target");
  spec.removed = word_id(ck.vocab, cfg.require("removed"), "removed");
  spec.added = cfg.has("added") ? word_id(ck.vocab, cfg.get("added"), "added") : -1;
  std::string mode = cfg.get("mode", "corrected");
  if (mode == "faithful")
    spec.mode = EditMode::Faithful;
  else if (mode == "corrected")
    spec.mode = EditMode::Corrected;
  else
    throw UsageError("--mode must be 'corrected' or 'faithful'");

  ModelView edited = knowledge_edit(base, spec);
  Matrix e = detail::embedding_matrix(model);
  Matrix before = sense_vectors(base, spec.target);
  Matrix after = sense_vectors(edited, spec.target);
  out << "sense,removed_before,removed_after";
  if (spec.added >= 0) out << ",added_before,added_after";
  out << "\n";
  for (int l = 0; l < model.config().num_senses; ++l) {
    out << l << ',' << fmt_g(dot(e.row(spec.removed), before.row(l))) << ','
        << fmt_g(dot(e.row(spec.removed), after.row(l)));
    if (spec.added >= 0)
      out << ',' << fmt_g(dot(e.row(spec.added), before.row(l))) << ','
          << fmt_g(dot(e.row(spec.added), after.row(l)));
    out << "\n";
  }
  return 0;
}

inline int cmd_make_corpus(const RunConfig& cfg, std::ostream& out) {
  CorpusSpec spec;
  spec.seed = cfg.seed();
  long chars = cfg.get_long("chars", 1 << 20);
  if (chars < 1) throw UsageError("make-corpus: --chars must be >= 1");
  spec.min_chars = static_cast<std::size_t>(chars);
  spec.topics = static_cast<int>(cfg.get_long("topics", spec.topics));
  spec.pronoun_sentence_rate = cfg.get_double("pronoun-rate", spec.pronoun_sentence_rate);
  spec.shared_noun_rate = cfg.get_double("shared-rate", spec.shared_noun_rate);
  spec.bigram_verb_rate = cfg.get_double("bigram-rate", spec.bigram_verb_rate);
  std::string text = generate_corpus(spec);
  std::string path = cfg.require("out");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path);
  os << text;
  out << "make-corpus,chars," << text.size() << "\n";
  out << "make-corpus,out," << csv_quote(path) << "\n";
  return 0;
}

inline int cmd_verify(std::ostream& out) {
  bool all = true;
  for (const CheckResult& r : run_verify_suite()) {
    out << "verify," << r.name << ',' << (r.pass ? "ok" : "FAIL") << ',' << csv_quote(r.detail)
        << "\n";
    all = all && r.pass;
  }
  if (!all) throw NumericError("verification failed");
  return 0;
}

}  // namespace detail

inline int dispatch(const RunConfig& cfg, std::ostream& out) {
  detail::echo_resolved(cfg, out);
  if (cfg.command == "train") return detail::cmd_train(cfg, out);
  if (cfg.command == "eval") return detail::cmd_eval(cfg, out);
  if (cfg.command == "wordsim") return detail::cmd_wordsim(cfg, out);
  if (cfg.command == "senses") return detail::cmd_senses(cfg, out);
  if (cfg.command == "generate") return detail::cmd_generate(cfg, out);
  if (cfg.command == "topic") return detail::cmd_topic(cfg, out);
  if (cfg.command == "debias") return detail::cmd_debias(cfg, out);
  if (cfg.command == "edit") return detail::cmd_edit(cfg, out);
  if (cfg.command == "make-corpus") return detail::cmd_make_corpus(cfg, out);
  if (cfg.command == "verify") return detail::cmd_verify(out);
  throw UsageError("unknown command '" + cfg.command + "'");
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "help" || args[0] == "--help" || args[0] == "-h") {
    out << cli_help();
    return 0;
  }
  try {
    return dispatch(parse_config(args), out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace backpack
