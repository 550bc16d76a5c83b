// End-to-end acceptance gate. Each numbered criterion prints exactly one
// PASS/FAIL line; the process exits nonzero if any criterion fails.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "backpack/checkpoint.hpp"
#include "backpack/control.hpp"
#include "backpack/corpus_gen.hpp"
#include "backpack/evaluation.hpp"
#include "backpack/training.hpp"
#include "backpack/verify.hpp"

using namespace backpack;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& title, bool pass, const std::string& detail) {
  std::printf("%s  criterion %2d  %-24s  %s\n", pass ? "PASS" : "FAIL", criterion, title.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void from_check(int criterion, const std::string& title, const CheckResult& r) {
  report(criterion, title, r.pass, r.detail);
}

// --- criterion 5: held-out perplexity strictly improves with more senses ---

void run_sense_ablation() {
  CorpusSpec spec;
  spec.seed = 0;
  spec.min_chars = 2u << 20;  // two million characters of topical text
  std::string corpus = generate_corpus(spec);
  if (corpus.size() < (1u << 20)) {
    report(5, "sense-count ablation", false, "corpus generator undershot one million characters");
    return;
  }
  Vocabulary vocab = Vocabulary::build(corpus);
  double ppl[3] = {0, 0, 0};
  const int ks[3] = {1, 4, 16};
  for (int i = 0; i < 3; ++i) {
    TrainConfig tc;
    tc.model.vocab_size = vocab.size();
    tc.model.model_dim = 64;
    tc.model.num_senses = ks[i];
    tc.model.layers = 2;
    tc.model.heads = 4;
    tc.model.seq_len = 128;
    tc.seq_len = 128;
    tc.batch_tokens = 1024;
    tc.total_steps = 250;
    tc.warmup_steps = 25;
    tc.peak_lr = 3e-3;
    tc.seed = 7;  // same seed and step budget for every sense count
    tc.eval_interval = tc.total_steps;
    TrainResult tr = train(tc, corpus, vocab);
    ppl[i] = std::exp(tr.final_eval_loss);
  }
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "held-out PPL k=1: %.3f > k=4: %.3f > k=16: %.3f (equal steps and seed)", ppl[0],
                ppl[1], ppl[2]);
  report(5, "sense-count ablation", ppl[0] > ppl[1] && ppl[1] > ppl[2], detail);
}

// --- criterion 9: bias-ratio mechanics on constructed models ---

void run_bias_mechanics() {
  std::vector<std::pair<double, double>> balanced{{0.5, 0.5}, {0.25, 0.25}};
  std::vector<std::pair<double, double>> single{{0.2, 0.1}};
  std::vector<std::pair<double, double>> twop{{0.2, 0.1}, {0.1, 0.4}};
  bool reducer_ok = ratio_from_probs(balanced) == 1.0 && ratio_from_probs(single) == 2.0 &&
                    ratio_from_probs(twop) == 3.0;

  // pronoun-balanced model: identical embedding rows for the two pronouns
  Vocabulary vocab = Vocabulary::from_tokens(
      {"<unk>", "<bos>", "he", "she", "nurse", "developer", "my", "said"}, TokenizerMode::Word);
  BackpackConfig c;
  c.vocab_size = vocab.size();
  c.model_dim = 8;
  c.num_senses = 2;
  c.layers = 1;
  c.heads = 2;
  c.seq_len = 16;
  BackpackModel m(c, 311);
  {
    Tensor e = m.param("emb.E");
    int d = c.model_dim;
    for (int t = 0; t < d; ++t)
      e.data()[static_cast<size_t>(vocab.id("she")) * d + t] =
          e.data()[static_cast<size_t>(vocab.id("he")) * d + t];
  }
  BiasEvalSuite suite;
  suite.professions = {"nurse", "developer"};
  suite.eval_templates = {"my PROFESSION said"};
  suite.estimation_templates = {"my PROFESSION said", "my PROFESSION"};
  bool balanced_ok = suite_bias_ratio(ModelView(m), vocab, suite) == 1.0;

  // a planted pronoun gap in one sense: the searched factor can only help
  BackpackModel planted(c, 313);
  std::vector<double> he_row(8), she_row(8);
  {
    const auto& e = planted.param("emb.E").data();
    int d = c.model_dim;
    for (int t = 0; t < d; ++t) {
      he_row[static_cast<size_t>(t)] = e[static_cast<size_t>(vocab.id("he")) * d + t];
      she_row[static_cast<size_t>(t)] = e[static_cast<size_t>(vocab.id("she")) * d + t];
    }
  }
  ModelView pview(planted);
  Matrix s = sense_vectors(pview, vocab.id("nurse"));
  for (int t = 0; t < 8; ++t)
    s.at(0, t) += 3.0 * (he_row[static_cast<size_t>(t)] - she_row[static_cast<size_t>(t)]);
  pview.override_senses(vocab.id("nurse"), s);
  ScaleSearchResult r = optimize_sense_scale(pview, vocab, suite, "nurse", 0);
  bool search_ok = r.ratio <= r.unmodified;

  char detail[200];
  std::snprintf(detail, sizeof detail,
                "reducer 1.0/2.0/3.0 exact: %s; balanced model ratio == 1: %s; "
                "searched factor %.2f never above factor-1 ratio: %s",
                reducer_ok ? "yes" : "no", balanced_ok ? "yes" : "no", r.factor,
                search_ok ? "yes" : "no");
  report(9, "bias-ratio mechanics", reducer_ok && balanced_ok && search_ok, detail);
}

// --- criterion 10: evaluation and persistence plumbing ---

void run_eval_plumbing() {
  std::vector<double> inc{1, 2, 3}, tens{10, 20, 30}, dec{30, 20, 10};
  std::vector<double> a{1, 2, 3, 5, 4}, b{1, 2, 3, 4, 5};
  bool rho1 = spearman(inc, tens) == 1.0;
  bool rhom1 = spearman(inc, dec) == -1.0;
  // brute-force oracle: both lists are tie-free permutations of 1..5, so
  // Pearson on the ranks themselves is the answer
  auto rank_of = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i)
      for (size_t j = 0; j < v.size(); ++j)
        if (v[j] < v[i]) r[i] += 1.0;
    return r;  // 0-based ranks, no ties by construction
  };
  auto pearson = [](const std::vector<double>& x, const std::vector<double>& y) {
    long double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= static_cast<long double>(x.size());
    my /= static_cast<long double>(y.size());
    long double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    return static_cast<double>(sxy / std::sqrt(sxx * syy));
  };
  double oracle = pearson(rank_of(a), rank_of(b));
  double got = spearman(a, b);
  bool rho09 = std::fabs(got - oracle) <= 1e-12 && std::fabs(got - 0.9) <= 1e-12;

  BackpackConfig c;
  c.vocab_size = 11;
  c.model_dim = 8;
  c.num_senses = 2;
  c.layers = 1;
  c.heads = 2;
  c.seq_len = 16;
  BackpackModel uniform(c, 401);
  {
    Tensor e = uniform.param("emb.E");
    std::fill(e.data().begin(), e.data().end(), 0.0);  // logits vanish: uniform model
  }
  std::vector<int> ids{1, 4, 9, 2, 2, 7};
  double ppl = perplexity(ModelView(uniform), ids);
  bool uniform_ok = std::fabs(ppl - 11.0) <= 11.0 * 1e-12;

  BackpackModel m(c, 409);
  Vocabulary vocab = Vocabulary::from_tokens(
      {"<unk>", "<bos>", "a", "b", "c", "d", "e", "f", "g", "h", "i"}, TokenizerMode::Word);
  std::filesystem::path tmp =
      std::filesystem::temp_directory_path() / "backpack_acceptance_roundtrip.bin";
  save_checkpoint(tmp.string(), m, vocab, 3, 99);
  Checkpoint ck = load_checkpoint(tmp.string());
  BackpackModel loaded = model_from_checkpoint(ck);
  std::filesystem::remove(tmp);
  bool bits = true;
  for (const auto& [name, t] : m.parameters())
    bits = bits && loaded.param(name).data() == t.data();
  ForwardValues before = forward_values(ModelView(m), ids);
  ForwardValues after = forward_values(ModelView(loaded), ids);
  bool forward_ok = before.logits.a == after.logits.a;

  char detail[200];
  std::snprintf(detail, sizeof detail,
                "spearman 1/-1 exact: %s; 0.9 case vs oracle: %s; uniform PPL == |V|: %s; "
                "checkpoint roundtrip bitwise: %s",
                rho1 && rhom1 ? "yes" : "no", rho09 ? "yes" : "no", uniform_ok ? "yes" : "no",
                bits && forward_ok ? "yes" : "no");
  report(10, "evaluation plumbing", rho1 && rhom1 && rho09 && uniform_ok && bits && forward_ok,
         detail);
}

// --- criterion 11: the CLI gate ---

void run_cli_gate() {
#ifdef BACKPACK_CLI_PATH
  std::string cmd = std::string("'") + BACKPACK_CLI_PATH + "' verify > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  bool ok = rc == 0;
  report(11, "cli verify gate", ok,
         ok ? "`verify` ran the invariant suite and exited 0"
            : "`verify` exited nonzero (code " + std::to_string(rc) + ")");
#else
  report(11, "cli verify gate", false, "BACKPACK_CLI_PATH was not provided at build time");
#endif
}

}  // namespace

int main() {
  from_check(1, "reduction equivalence", check_reduction_equivalence());
  from_check(2, "gradient fidelity", check_gradient_fidelity());
  from_check(3, "simplex and causality", check_simplex_causality());
  from_check(4, "intervention exactness", check_intervention_exactness());
  run_sense_ablation();
  from_check(6, "delta schedule", check_delta_table());
  from_check(7, "annealing contract", check_annealing_contract());
  from_check(8, "knowledge-edit contracts", check_knowledge_edit_contracts());
  run_bias_mechanics();
  run_eval_plumbing();
  run_cli_gate();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all 11 criteria passed\n");
  return 0;
}
