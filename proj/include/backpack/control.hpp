#pragma once
// Sense-vector interpretability and control: projection tables, topic-steered
// generation with annealed sense re-weighting, pronoun bias measurement and
// mitigation, and nullspace-style knowledge edits. All interventions go
// through ModelView sense overrides, so the contextualization weights are
// untouched by construction.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "backpack/common.hpp"
#include "backpack/control_data.hpp"
#include "backpack/model.hpp"
#include "backpack/vocab.hpp"

namespace backpack {

// ---------------------------------------------------------------------------
// Sense projection tables
// ---------------------------------------------------------------------------

struct WordScore {
  int word = 0;
  double score = 0.0;
};

// The m words whose embeddings align most (or, with bottom=true, least) with
// sense l of a word: scores are E^T C(x)_l, m is clamped to the vocabulary.
inline std::vector<WordScore> sense_projection_topk(const ModelView& view, int word, int l, int m,
                                                    bool bottom = false) {
  const auto& c = view.config();
  if (word < 0 || word >= c.vocab_size)
    throw DimensionError("sense_projection_topk: word out of range");
  if (l < 0 || l >= c.num_senses)
    throw DimensionError("sense_projection_topk: sense index out of range");
  if (m < 0) throw UsageError("sense_projection_topk: m must be non-negative");
  Matrix e = detail::embedding_matrix(view.base());
  Matrix s = sense_vectors(view, word);
  std::vector<double> scores = matvec(e, s.row(l));
  std::vector<int> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return bottom ? scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)]
                    : scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  size_t take = std::min(static_cast<size_t>(m), scores.size());
  std::vector<WordScore> out(take);
  for (size_t i = 0; i < take; ++i)
    out[i] = {order[i], scores[static_cast<size_t>(order[i])]};
  return out;
}

// ---------------------------------------------------------------------------
// Topic control
// ---------------------------------------------------------------------------

// Many-hot indicator over the vocabulary built from a word list.
struct BagOfWords {
  std::vector<int> ids;            // in-vocabulary word ids, sorted unique
  std::vector<double> indicator;   // size |V|, entries 0 or 1

  static BagOfWords from_ids(int vocab_size, std::span<const int> word_ids) {
    BagOfWords b;
    b.indicator.assign(static_cast<size_t>(vocab_size), 0.0);
    for (int id : word_ids) {
      if (id < 0 || id >= vocab_size) throw DimensionError("bag of words: id out of range");
      if (b.indicator[static_cast<size_t>(id)] == 0.0) b.ids.push_back(id);
      b.indicator[static_cast<size_t>(id)] = 1.0;
    }
    if (b.ids.empty()) throw DataError("bag of words: no words given");
    std::sort(b.ids.begin(), b.ids.end());
    return b;
  }

  // Words missing from the vocabulary are dropped; an all-missing bag errors.
  static BagOfWords from_words(const Vocabulary& vocab, std::span<const std::string> words) {
    std::vector<int> ids;
    for (const std::string& w : words)
      if (vocab.contains(w)) ids.push_back(vocab.id(w));
    if (ids.empty()) throw DataError("bag of words: no word is in the vocabulary");
    return from_ids(vocab.size(), ids);
  }
};

struct TopicScore {
  int word = 0;
  int sense = 0;
  double score = 0.0;
};

// Bag alignment of every (word, sense) pair: the bag mass of E^T C(x)_l,
// normalized by the largest projection magnitude; sorted descending. The
// normalizer uses |.| by default; abs_normalizer=false keeps the raw maximum.
inline std::vector<TopicScore> topic_scores(const ModelView& view, const BagOfWords& bag,
                                            bool abs_normalizer = true) {
  const auto& c = view.config();
  if (static_cast<int>(bag.indicator.size()) != c.vocab_size)
    throw DimensionError("topic_scores: bag size does not match vocabulary");
  Matrix e = detail::embedding_matrix(view.base());
  SenseTable table = SenseTable::build(view);
  std::vector<TopicScore> out;
  out.reserve(static_cast<size_t>(c.vocab_size) * c.num_senses);
  for (int x = 0; x < c.vocab_size; ++x)
    for (int l = 0; l < c.num_senses; ++l) {
      std::span<const double> cs = table.sense(x, l);
      double num = 0.0, den = 0.0;
      bool first = true;
      for (int w = 0; w < c.vocab_size; ++w) {
        double p = dot(e.row(w), cs);
        if (bag.indicator[static_cast<size_t>(w)] != 0.0) num += p;
        double cand = abs_normalizer ? std::fabs(p) : p;
        if (first || cand > den) den = cand;
        first = false;
      }
      out.push_back({x, l, den == 0.0 ? 0.0 : num / den});
    }
  std::sort(out.begin(), out.end(), [](const TopicScore& a, const TopicScore& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.word != b.word) return a.word < b.word;
    return a.sense < b.sense;
  });
  return out;
}

// Control strength level with its fixed per-quantile starting multipliers.
struct ControlStrength {
  int level = 0;

  ControlStrength() = default;
  explicit ControlStrength(int lv) : level(lv) {
    if (lv < 0 || lv > 3) throw UsageError("control strength must be between 0 and 3");
  }

  static constexpr std::array<double, 3> kQuantiles{0.95, 0.80, 0.60};

  std::array<double, 4> delta0() const {
    static constexpr std::array<std::array<double, 4>, 4> kTable{{{1.0, 1.0, 1.0, 1.0},
                                                                  {1.5, 1.5, 1.3, 1.0},
                                                                  {2.2, 2.2, 1.5, 1.0},
                                                                  {3.3, 3.3, 3.0, 1.0}}};
    return kTable[static_cast<size_t>(level)];
  }

  double max_delta0() const {
    std::array<double, 4> d = delta0();
    return *std::max_element(d.begin(), d.end());
  }
};

namespace detail {

// Nearest-rank quantile of the score list (p in (0, 1]).
inline double nearest_rank_quantile(const std::vector<double>& ascending, double p) {
  size_t n = ascending.size();
  double r = std::ceil(p * static_cast<double>(n));
  size_t i = r < 1.0 ? 0 : std::min(n - 1, static_cast<size_t>(r) - 1);
  return ascending[i];
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// Scalar annealing rule: convex combination b*delta0 + (1-b)*1 with
// b = sigmoid(-a*f + 6) * min(1, (1+j)/100). `a` is the expressed topic mass
// so far, `f` the decay rate, `j` the zero-based source position.
inline double annealed_delta(double a, double f, int j, double delta0) {
  if (j < 0) throw UsageError("annealed_delta: position must be non-negative");
  double recency = std::min(1.0, (1.0 + static_cast<double>(j)) / 100.0);
  double b = detail::sigmoid(-a * f + 6.0) * recency;
  return b * delta0 + (1.0 - b) * 1.0;
}

// Starting multiplier per (word, sense): the 0.95 / 0.80 / 0.60 score
// quantiles split the pairs into four bands, each band getting the
// strength-specific value.
inline std::map<std::pair<int, int>, double> assign_deltas(const std::vector<TopicScore>& scores,
                                                           const ControlStrength& strength) {
  if (scores.empty()) throw DataError("assign_deltas: empty score list");
  std::vector<double> asc;
  asc.reserve(scores.size());
  for (const TopicScore& t : scores) asc.push_back(t.score);
  std::sort(asc.begin(), asc.end());
  const double q95 = detail::nearest_rank_quantile(asc, ControlStrength::kQuantiles[0]);
  const double q80 = detail::nearest_rank_quantile(asc, ControlStrength::kQuantiles[1]);
  const double q60 = detail::nearest_rank_quantile(asc, ControlStrength::kQuantiles[2]);
  const std::array<double, 4> d0 = strength.delta0();
  std::map<std::pair<int, int>, double> out;
  for (const TopicScore& t : scores) {
    double v = t.score >= q95 ? d0[0] : t.score >= q80 ? d0[1] : t.score >= q60 ? d0[2] : d0[3];
    out[{t.word, t.sense}] = v;
  }
  return out;
}

// Annealed multiplier for every (source position j, sense): each sense decays
// from its starting value back to 1 once the already-generated words have
// absorbed enough of the sense's mass. a is the clipped-positive projection
// of the sense onto the generated words, b = sigmoid(-a*f + 6) * (1+j)/100
// (clamped to 1) with f = 7.5 / max starting multiplier, and the result is
// the convex combination b*delta0 + (1-b)*1.
inline Matrix anneal_position_sense(const ModelView& view, std::span<const int> tokens,
                                    size_t generated_begin,
                                    const std::map<std::pair<int, int>, double>& delta0,
                                    double max_delta0) {
  const auto& c = view.config();
  detail::check_tokens(c, tokens);
  if (generated_begin > tokens.size())
    throw UsageError("anneal: generation boundary beyond sequence end");
  if (!(max_delta0 > 0.0)) throw UsageError("anneal: max starting multiplier must be positive");
  const double f = 7.5 / max_delta0;
  const int n = static_cast<int>(tokens.size());
  const int k = c.num_senses;
  Matrix e = detail::embedding_matrix(view.base());
  std::map<int, Matrix> senses = detail::gather_senses(view, tokens);
  Matrix ps(n, k);
  for (int j = 0; j < n; ++j) {
    const Matrix& s = senses.at(tokens[static_cast<size_t>(j)]);
    for (int l = 0; l < k; ++l) {
      auto it = delta0.find({tokens[static_cast<size_t>(j)], l});
      double d0 = it == delta0.end() ? 1.0 : it->second;
      double a = 0.0;
      for (size_t i = generated_begin; i < tokens.size(); ++i) {
        double p = dot(e.row(tokens[i]), s.row(l));
        if (p > 0.0) a += p;
      }
      ps.at(j, l) = annealed_delta(a, f, j, d0);
    }
  }
  return ps;
}

inline DeltaSchedule anneal_deltas(const ModelView& view, std::span<const int> tokens,
                                   size_t generated_begin,
                                   const std::map<std::pair<int, int>, double>& delta0,
                                   double max_delta0) {
  return DeltaSchedule::from_position_sense(
      anneal_position_sense(view, tokens, generated_begin, delta0, max_delta0));
}

struct TopicGeneration {
  std::vector<int> ids;
  std::vector<Matrix> delta_trace;  // per step: (source position, sense) multipliers
};

// Ancestral sampling with topic-aligned senses upweighted and annealed back
// to 1 as the topic is expressed. Scores are computed once up front; only the
// multipliers change between steps.
inline TopicGeneration topic_generate(const ModelView& view, const BagOfWords& bag,
                                      const ControlStrength& strength,
                                      std::span<const int> prompt, int max_new, uint64_t seed,
                                      bool abs_normalizer = true) {
  std::vector<TopicScore> scores = topic_scores(view, bag, abs_normalizer);
  std::map<std::pair<int, int>, double> delta0 = assign_deltas(scores, strength);
  const double maxd = strength.max_delta0();
  const size_t prompt_len = prompt.size();
  TopicGeneration out;
  DeltaHook hook = [&](int, const std::vector<int>& ids) -> std::optional<DeltaSchedule> {
    Matrix ps = anneal_position_sense(view, ids, prompt_len, delta0, maxd);
    out.delta_trace.push_back(ps);
    return DeltaSchedule::from_position_sense(ps);
  };
  out.ids = generate(view, prompt, max_new, seed, hook);
  return out;
}

// ---------------------------------------------------------------------------
// Pronoun bias measurement and mitigation
// ---------------------------------------------------------------------------

inline constexpr const char* kProfessionSlot = "PROFESSION";

struct BiasEvalSuite {
  std::vector<std::string> professions;
  std::vector<std::string> eval_templates;        // reporting split
  std::vector<std::string> estimation_templates;  // fraction-fitting split
  std::string pronoun_a = "he";
  std::string pronoun_b = "she";

  void check() const {
    if (professions.empty()) throw DataError("bias suite: no professions");
    if (eval_templates.empty() || estimation_templates.empty())
      throw DataError("bias suite: missing prompt templates");
    auto one_slot = [](const std::string& t) {
      size_t first = t.find(kProfessionSlot);
      if (first == std::string::npos) return false;
      return t.find(kProfessionSlot, first + 1) == std::string::npos;
    };
    for (const std::string& t : eval_templates)
      if (!one_slot(t)) throw DataError("bias suite: template needs exactly one PROFESSION slot");
    for (const std::string& t : estimation_templates)
      if (!one_slot(t)) throw DataError("bias suite: template needs exactly one PROFESSION slot");
    if (pronoun_a.empty() || pronoun_b.empty() || pronoun_a == pronoun_b)
      throw DataError("bias suite: need two distinct pronouns");
  }
};

inline BiasEvalSuite default_bias_suite() {
  BiasEvalSuite s;
  s.professions = profession_words();
  s.eval_templates = bias_eval_templates();
  s.estimation_templates = bias_estimation_templates();
  s.check();
  return s;
}

inline std::string instantiate_prompt(const std::string& tmpl, const std::string& profession) {
  size_t pos = tmpl.find(kProfessionSlot);
  if (pos == std::string::npos) throw DataError("prompt template lacks a PROFESSION slot");
  std::string out = tmpl;
  out.replace(pos, std::string(kProfessionSlot).size(), profession);
  return out;
}

inline std::vector<std::string> instantiate_prompts(std::span<const std::string> templates,
                                                    const std::string& profession) {
  std::vector<std::string> out;
  out.reserve(templates.size());
  for (const std::string& t : templates) out.push_back(instantiate_prompt(t, profession));
  return out;
}

// Mean over prompts of max(p/q, q/p); always >= 1, exactly 1 when balanced.
inline double ratio_from_probs(std::span<const std::pair<double, double>> probs) {
  if (probs.empty()) throw DataError("bias ratio: no prompts");
  double sum = 0.0;
  for (auto [pa, pb] : probs) {
    if (!(pa > 0.0) || !(pb > 0.0))
      throw NumericError("bias ratio: zero pronoun probability");
    sum += std::max(pa / pb, pb / pa);
  }
  return sum / static_cast<double>(probs.size());
}

// Next-token probabilities of the two pronouns after a BOS-prefixed prompt.
inline std::pair<double, double> pronoun_probs(const ModelView& view, const Vocabulary& vocab,
                                               const std::string& prompt, int id_a, int id_b) {
  std::vector<int> ids{Vocabulary::kBos};
  for (int t : vocab.encode(prompt)) ids.push_back(t);
  std::vector<double> lp = next_token_log_probs(view, ids);
  return {std::exp(lp[static_cast<size_t>(id_a)]), std::exp(lp[static_cast<size_t>(id_b)])};
}

inline double bias_ratio(const ModelView& view, const Vocabulary& vocab,
                         std::span<const std::string> prompts, const std::string& pronoun_a = "he",
                         const std::string& pronoun_b = "she") {
  if (!vocab.contains(pronoun_a) || !vocab.contains(pronoun_b))
    throw DataError("bias ratio: pronoun not in vocabulary");
  int ia = vocab.id(pronoun_a), ib = vocab.id(pronoun_b);
  std::vector<std::pair<double, double>> probs;
  probs.reserve(prompts.size());
  for (const std::string& p : prompts) probs.push_back(pronoun_probs(view, vocab, p, ia, ib));
  return ratio_from_probs(probs);
}

// Bias over every (template, profession) instantiation of the chosen split.
inline double suite_bias_ratio(const ModelView& view, const Vocabulary& vocab,
                               const BiasEvalSuite& suite, bool estimation_split = false) {
  suite.check();
  const auto& templates = estimation_split ? suite.estimation_templates : suite.eval_templates;
  std::vector<std::string> prompts;
  for (const std::string& p : suite.professions)
    for (const std::string& t : templates) prompts.push_back(instantiate_prompt(t, p));
  return bias_ratio(view, vocab, prompts, suite.pronoun_a, suite.pronoun_b);
}

// Multiplies sense l of one word by a non-negative factor, as a view.
inline ModelView scale_sense(const ModelView& base, int word, int l, double factor) {
  const auto& c = base.config();
  if (!(factor >= 0.0)) throw UsageError("scale_sense: factor must be non-negative");
  if (l < 0 || l >= c.num_senses) throw DimensionError("scale_sense: sense index out of range");
  Matrix s = sense_vectors(base, word);  // word range is checked here
  for (int t = 0; t < c.model_dim; ++t) s.at(l, t) *= factor;
  ModelView out = base;
  out.override_senses(word, std::move(s));
  return out;
}

// The sense carrying the most pronoun polarity: argmax over l of the mean
// absolute (E_he - E_she)^T C(x)_l over the in-vocabulary profession words.
inline int find_bias_sense(const ModelView& view, const Vocabulary& vocab,
                           const BiasEvalSuite& suite) {
  suite.check();
  const auto& c = view.config();
  if (!vocab.contains(suite.pronoun_a) || !vocab.contains(suite.pronoun_b))
    throw DataError("find_bias_sense: pronoun not in vocabulary");
  Matrix e = detail::embedding_matrix(view.base());
  std::span<const double> ea = e.row(vocab.id(suite.pronoun_a));
  std::span<const double> eb = e.row(vocab.id(suite.pronoun_b));
  std::vector<double> gap(static_cast<size_t>(c.model_dim));
  for (int t = 0; t < c.model_dim; ++t)
    gap[static_cast<size_t>(t)] = ea[static_cast<size_t>(t)] - eb[static_cast<size_t>(t)];
  std::vector<double> acc(static_cast<size_t>(c.num_senses), 0.0);
  int used = 0;
  for (const std::string& p : suite.professions) {
    if (!vocab.contains(p)) continue;
    Matrix s = sense_vectors(view, vocab.id(p));
    for (int l = 0; l < c.num_senses; ++l)
      acc[static_cast<size_t>(l)] += std::fabs(dot(gap, s.row(l)));
    ++used;
  }
  if (used == 0) throw DataError("find_bias_sense: no profession word is in the vocabulary");
  int best = 0;
  for (int l = 1; l < c.num_senses; ++l)
    if (acc[static_cast<size_t>(l)] > acc[static_cast<size_t>(best)]) best = l;
  return best;
}

struct ScaleSearchResult {
  double factor = 1.0;       // grid argmin on the estimation prompts
  double ratio = 0.0;        // bias ratio at that factor
  double unmodified = 0.0;   // bias ratio at factor 1
};

// Grid search (0, 0.01, ..., 1) for the sense multiplier minimizing the bias
// ratio of one profession on the estimation prompts; ties keep the smaller
// factor. The grid contains 1.0, so the optimum never exceeds the unmodified
// ratio.
inline ScaleSearchResult optimize_sense_scale(const ModelView& view, const Vocabulary& vocab,
                                              const BiasEvalSuite& suite,
                                              const std::string& profession, int l) {
  suite.check();
  if (!vocab.contains(profession))
    throw DataError("optimize_sense_scale: profession not in vocabulary");
  const int word = vocab.id(profession);
  std::vector<std::string> prompts = instantiate_prompts(suite.estimation_templates, profession);
  ScaleSearchResult out;
  bool have = false;
  for (int i = 0; i <= 100; ++i) {
    double factor = static_cast<double>(i) / 100.0;
    ModelView v = scale_sense(view, word, l, factor);
    double r = bias_ratio(v, vocab, prompts, suite.pronoun_a, suite.pronoun_b);
    if (i == 100) out.unmodified = r;
    if (!have || r < out.ratio) {
      out.factor = factor;
      out.ratio = r;
      have = true;
    }
  }
  return out;
}

// Embedding-space debiasing baseline: removes a fraction of the component of
// one word's embedding row along the he-she direction. Returns a deep copy;
// unlike sense edits this changes the contextualization inputs.
inline BackpackModel nullspace_debias_baseline(const BackpackModel& m, int word, int he, int she,
                                               double fraction) {
  const auto& c = m.config();
  for (int id : {word, he, she})
    if (id < 0 || id >= c.vocab_size)
      throw DimensionError("nullspace baseline: word out of range");
  if (!std::isfinite(fraction)) throw UsageError("nullspace baseline: fraction must be finite");
  BackpackModel out = m.clone();
  Tensor e = out.param("emb.E");
  auto& d = e.data();
  const int dim = c.model_dim;
  std::vector<double> g(static_cast<size_t>(dim));
  double g2 = 0.0;
  for (int t = 0; t < dim; ++t) {
    g[static_cast<size_t>(t)] = d[static_cast<size_t>(he) * dim + t] -
                                d[static_cast<size_t>(she) * dim + t];
    g2 += g[static_cast<size_t>(t)] * g[static_cast<size_t>(t)];
  }
  if (g2 == 0.0) throw NumericError("nullspace baseline: pronoun embeddings coincide");
  double proj = 0.0;
  for (int t = 0; t < dim; ++t)
    proj += d[static_cast<size_t>(word) * dim + t] * g[static_cast<size_t>(t)];
  const double coef = fraction * proj / g2;
  for (int t = 0; t < dim; ++t)
    d[static_cast<size_t>(word) * dim + t] -= coef * g[static_cast<size_t>(t)];
  return out;
}

// ---------------------------------------------------------------------------
// Knowledge editing
// ---------------------------------------------------------------------------

enum class EditMode { Faithful, Corrected };

// Removes the association of `target` with `removed` and optionally transfers
// it to `added` (added < 0 means pure removal). Faithful mode divides by the
// removed word's own sense norms; corrected mode divides by ||E x_r||^2,
// which makes the added-free edit an exact nullspace projection.
struct EditSpec {
  int target = -1;
  int removed = -1;
  int added = -1;
  EditMode mode = EditMode::Corrected;
};

inline ModelView knowledge_edit(const ModelView& base, const EditSpec& spec) {
  const auto& c = base.config();
  if (spec.target < 0 || spec.target >= c.vocab_size)
    throw DimensionError("knowledge_edit: target out of range");
  if (spec.removed < 0 || spec.removed >= c.vocab_size)
    throw DimensionError("knowledge_edit: removed word out of range");
  if (spec.added >= c.vocab_size) throw DimensionError("knowledge_edit: added word out of range");
  if (spec.added >= 0 && spec.added == spec.removed)
    throw UsageError("knowledge_edit: added and removed words must differ");
  Matrix e = detail::embedding_matrix(base.base());
  std::span<const double> er = e.row(spec.removed);
  const double er2 = norm2_sq(er);
  if (er2 == 0.0) throw NumericError("knowledge_edit: removed word has a zero embedding");
  const int dim = c.model_dim;
  std::vector<double> dir(static_cast<size_t>(dim));
  if (spec.added >= 0) {
    std::span<const double> ea = e.row(spec.added);
    const double ea2 = norm2_sq(ea);
    if (ea2 == 0.0) throw NumericError("knowledge_edit: added word has a zero embedding");
    const double phi = ea2 / er2;
    for (int t = 0; t < dim; ++t)
      dir[static_cast<size_t>(t)] = ea[static_cast<size_t>(t)] / phi - er[static_cast<size_t>(t)];
  } else {
    for (int t = 0; t < dim; ++t) dir[static_cast<size_t>(t)] = -er[static_cast<size_t>(t)];
  }
  Matrix s = sense_vectors(base, spec.target);
  Matrix sr;
  if (spec.mode == EditMode::Faithful) sr = sense_vectors(base, spec.removed);
  for (int l = 0; l < c.num_senses; ++l) {
    const double den = spec.mode == EditMode::Faithful ? norm2_sq(sr.row(l)) : er2;
    if (den == 0.0) throw NumericError("knowledge_edit: zero norm in the denominator");
    const double coef = dot(s.row(l), er) / den;
    for (int t = 0; t < dim; ++t) s.at(l, t) += coef * dir[static_cast<size_t>(t)];
  }
  ModelView out = base;
  out.override_senses(spec.target, std::move(s));
  return out;
}

}  // namespace backpack
