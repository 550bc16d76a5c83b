#pragma once
// Held-out perplexity and lexical similarity evaluation: per-sense cosine
// metrics, Spearman rank correlation, and word-pair dataset scoring.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "backpack/common.hpp"
#include "backpack/model.hpp"
#include "backpack/vocab.hpp"

namespace backpack {

// exp(mean next-token negative log-likelihood), computed on the value path
// over non-overlapping windows of at most the model's maximum context length.
inline double perplexity(const ModelView& view, std::span<const int> ids) {
  if (ids.size() < 2) throw DataError("perplexity: need at least two tokens");
  const int seq = view.config().seq_len;
  double total = 0.0;
  long count = 0;
  size_t pos = 0;
  while (pos + 1 < ids.size()) {
    size_t len = std::min(static_cast<size_t>(seq), ids.size() - 1 - pos);
    Matrix lp = lm_log_probs(view, ids.subspan(pos, len));
    for (size_t i = 0; i < len; ++i)
      total -= lp.at(static_cast<int>(i), ids[pos + 1 + i]);
    count += static_cast<long>(len);
    pos += len;
  }
  return std::exp(total / static_cast<double>(count));
}

namespace detail {

// Cosine of two vectors; a zero vector yields 0 with a warning, so OOV-ish
// degenerate senses do not poison a whole dataset run.
inline double safe_cosine(std::span<const double> a, std::span<const double> b) {
  double na = std::sqrt(norm2_sq(a)), nb = std::sqrt(norm2_sq(b));
  if (na == 0.0 || nb == 0.0) {
    std::cerr << "warning: zero vector in cosine similarity, returning 0\n";
    return 0.0;
  }
  return dot(a, b) / (na * nb);
}

}  // namespace detail

// Cosine similarity of the l-th sense vectors of two words.
inline double sense_cosine(const ModelView& view, int a, int b, int l) {
  const auto& c = view.config();
  if (l < 0 || l >= c.num_senses) throw DimensionError("sense_cosine: sense index out of range");
  Matrix sa = sense_vectors(view, a);
  Matrix sb = sense_vectors(view, b);
  return detail::safe_cosine(sa.row(l), sb.row(l));
}

// Minimum over senses of the per-sense cosine: a conjunctive notion of
// similarity (high only when every sense agrees).
inline double min_sense_cosine(const ModelView& view, int a, int b) {
  const auto& c = view.config();
  Matrix sa = sense_vectors(view, a);
  Matrix sb = sense_vectors(view, b);
  double best = std::numeric_limits<double>::infinity();
  for (int l = 0; l < c.num_senses; ++l)
    best = std::min(best, detail::safe_cosine(sa.row(l), sb.row(l)));
  return best;
}

namespace detail {

// Average ranks (1-based); ties share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
  std::vector<double> r(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t t = i; t <= j; ++t) r[idx[t]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) throw DimensionError("spearman: length mismatch");
  if (pred.size() < 2) throw DataError("spearman: need at least two pairs");
  for (double v : pred)
    if (!std::isfinite(v)) throw DataError("spearman: non-finite value");
  for (double v : gold)
    if (!std::isfinite(v)) throw DataError("spearman: non-finite value");
  std::vector<double> ra = detail::average_ranks(pred);
  std::vector<double> rb = detail::average_ranks(gold);
  const double n = static_cast<double>(pred.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    double da = ra[i] - ma, db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0)
    throw DataError("spearman: correlation undefined for a constant list");
  return cov / std::sqrt(va * vb);
}

// A named set of (word, word, human score) records.
struct WordPair {
  std::string a;
  std::string b;
  double score = 0.0;
};

struct WordPairDataset {
  std::string name;
  std::vector<WordPair> pairs;

  // TSV rows `word_a<TAB>word_b<TAB>score`; a first line whose third field is
  // not numeric is treated as an optional header. Duplicate unordered pairs
  // and non-finite scores are rejected.
  static WordPairDataset load(const std::string& path, std::string name_tag = "") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    WordPairDataset ds;
    ds.name = name_tag.empty() ? basename_of(path) : std::move(name_tag);
    std::map<std::pair<std::string, std::string>, bool> seen;
    std::string line;
    long line_no = 0;
    bool first_data_candidate = true;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> fields;
      size_t start = 0;
      while (true) {
        size_t tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (fields.size() != 3)
        throw DataError("dataset line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
      double score = 0.0;
      bool numeric = parse_double(fields[2], score);
      if (!numeric) {
        if (first_data_candidate) {
          first_data_candidate = false;  // optional header row
          continue;
        }
        throw DataError("dataset line " + std::to_string(line_no) + ": score is not a number");
      }
      first_data_candidate = false;
      if (!std::isfinite(score))
        throw DataError("dataset line " + std::to_string(line_no) + ": score is not finite");
      if (fields[0].empty() || fields[1].empty())
        throw DataError("dataset line " + std::to_string(line_no) + ": empty word");
      auto key = std::minmax(fields[0], fields[1]);
      if (seen.count(key))
        throw DataError("dataset line " + std::to_string(line_no) + ": duplicate pair");
      seen.emplace(key, true);
      ds.pairs.push_back({fields[0], fields[1], score});
    }
    if (ds.pairs.empty()) throw DataError("dataset has no pairs: " + path);
    return ds;
  }

 private:
  static std::string basename_of(const std::string& path) {
    size_t slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    size_t dot = base.find_last_of('.');
    return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
  }

  static bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    size_t used = 0;
    try {
      out = std::stod(s, &used);
    } catch (const std::exception&) {
      return false;
    }
    return used == s.size();
  }
};

enum class SimVariant { PerSense, MinOverSenses, EmbeddingRow };
enum class OovPolicy { AverageSubwords, FirstSubword, Skip };

inline std::string to_string(SimVariant v) {
  switch (v) {
    case SimVariant::PerSense: return "sense";
    case SimVariant::MinOverSenses: return "min_sense";
    case SimVariant::EmbeddingRow: return "embedding";
  }
  throw UsageError("unknown similarity variant");
}

inline std::string to_string(OovPolicy p) {
  switch (p) {
    case OovPolicy::AverageSubwords: return "average-subwords";
    case OovPolicy::FirstSubword: return "first-subword";
    case OovPolicy::Skip: return "skip";
  }
  throw UsageError("unknown oov policy");
}

inline OovPolicy oov_policy_from(const std::string& s) {
  if (s == "average-subwords") return OovPolicy::AverageSubwords;
  if (s == "first-subword") return OovPolicy::FirstSubword;
  if (s == "skip") return OovPolicy::Skip;
  throw UsageError("unknown oov policy: " + s);
}

struct SimilarityMethod {
  SimVariant variant = SimVariant::MinOverSenses;
  int sense = 0;  // used by PerSense
  OovPolicy oov = OovPolicy::Skip;

  std::string name() const {
    std::string base = variant == SimVariant::PerSense
                           ? to_string(variant) + std::to_string(sense)
                           : to_string(variant);
    return base + "/" + to_string(oov);
  }
};

// Senses for a possibly out-of-vocabulary word. Word-level vocabularies fall
// back to the UNK row (or skip); byte-level vocabularies combine the pieces
// of the encoded word by averaging or by taking the first piece.
inline std::optional<Matrix> oov_embedding(const ModelView& view, const Vocabulary& vocab,
                                           const std::string& word, OovPolicy policy) {
  const auto& c = view.config();
  if (static_cast<int>(vocab.size()) != c.vocab_size)
    throw DimensionError("oov_embedding: vocabulary size does not match model");
  if (vocab.mode() == TokenizerMode::Word) {
    if (!vocab.contains(word)) {
      if (policy == OovPolicy::Skip) return std::nullopt;
      return sense_vectors(view, Vocabulary::kUnk);
    }
    return sense_vectors(view, vocab.id(word));
  }
  std::vector<int> pieces = vocab.encode(word);
  if (pieces.empty()) return std::nullopt;
  if (policy == OovPolicy::FirstSubword) return sense_vectors(view, pieces[0]);
  if (policy == OovPolicy::Skip && pieces.size() > 1) return std::nullopt;
  Matrix acc = sense_vectors(view, pieces[0]);
  for (size_t p = 1; p < pieces.size(); ++p) {
    Matrix m = sense_vectors(view, pieces[p]);
    for (size_t t = 0; t < acc.a.size(); ++t) acc.a[t] += m.a[t];
  }
  const double inv = 1.0 / static_cast<double>(pieces.size());
  for (double& v : acc.a) v *= inv;
  return acc;
}

namespace detail {

// Embedding row under the same OOV policy, as a 1 x d matrix.
inline std::optional<Matrix> oov_embedding_row(const ModelView& view, const Vocabulary& vocab,
                                               const std::string& word, OovPolicy policy) {
  const auto& c = view.config();
  Matrix e = embedding_matrix(view.base());
  auto take = [&](int id) {
    Matrix m(1, c.model_dim);
    std::copy(e.row(id).begin(), e.row(id).end(), m.a.begin());
    return m;
  };
  if (vocab.mode() == TokenizerMode::Word) {
    if (!vocab.contains(word)) {
      if (policy == OovPolicy::Skip) return std::nullopt;
      return take(Vocabulary::kUnk);
    }
    return take(vocab.id(word));
  }
  std::vector<int> pieces = vocab.encode(word);
  if (pieces.empty()) return std::nullopt;
  if (policy == OovPolicy::FirstSubword) return take(pieces[0]);
  if (policy == OovPolicy::Skip && pieces.size() > 1) return std::nullopt;
  Matrix acc = take(pieces[0]);
  for (size_t p = 1; p < pieces.size(); ++p)
    for (int t = 0; t < c.model_dim; ++t) acc.at(0, t) += e.at(pieces[p], t);
  const double inv = 1.0 / static_cast<double>(pieces.size());
  for (double& v : acc.a) v *= inv;
  return acc;
}

}  // namespace detail

// Similarity of one word pair under the requested method, or nullopt when
// the OOV policy skips the pair.
inline std::optional<double> pair_similarity(const ModelView& view, const Vocabulary& vocab,
                                             const std::string& a, const std::string& b,
                                             const SimilarityMethod& m) {
  const auto& c = view.config();
  if (m.variant == SimVariant::PerSense && (m.sense < 0 || m.sense >= c.num_senses))
    throw DimensionError("pair_similarity: sense index out of range");
  std::optional<Matrix> ra, rb;
  if (m.variant == SimVariant::EmbeddingRow) {
    ra = detail::oov_embedding_row(view, vocab, a, m.oov);
    rb = detail::oov_embedding_row(view, vocab, b, m.oov);
  } else {
    ra = oov_embedding(view, vocab, a, m.oov);
    rb = oov_embedding(view, vocab, b, m.oov);
  }
  if (!ra || !rb) return std::nullopt;
  switch (m.variant) {
    case SimVariant::PerSense:
      return detail::safe_cosine(ra->row(m.sense), rb->row(m.sense));
    case SimVariant::EmbeddingRow:
      return detail::safe_cosine(ra->row(0), rb->row(0));
    case SimVariant::MinOverSenses: {
      double best = std::numeric_limits<double>::infinity();
      for (int l = 0; l < c.num_senses; ++l)
        best = std::min(best, detail::safe_cosine(ra->row(l), rb->row(l)));
      return best;
    }
  }
  throw UsageError("unknown similarity variant");
}

struct WordsimResult {
  double rho = 0.0;
  double coverage = 0.0;
  int scored = 0;
  int total = 0;
};

// Spearman correlation between model similarities and human scores, plus the
// fraction of pairs that could be scored. The scored pairs are put into a
// canonical order first, so the result is independent of dataset row order.
inline WordsimResult evaluate_wordsim(const ModelView& view, const Vocabulary& vocab,
                                      const WordPairDataset& ds, const SimilarityMethod& m) {
  if (ds.pairs.empty()) throw DataError("evaluate_wordsim: empty dataset");
  struct Scored {
    std::string a, b;
    double model, human;
  };
  std::vector<Scored> rows;
  for (const WordPair& p : ds.pairs) {
    std::optional<double> s = pair_similarity(view, vocab, p.a, p.b, m);
    if (!s) continue;
    rows.push_back({p.a, p.b, *s, p.score});
  }
  if (rows.empty()) throw DataError("evaluate_wordsim: no pair could be scored (coverage 0)");
  std::sort(rows.begin(), rows.end(),
            [](const Scored& x, const Scored& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  std::vector<double> model, human;
  model.reserve(rows.size());
  human.reserve(rows.size());
  for (const Scored& r : rows) {
    model.push_back(r.model);
    human.push_back(r.human);
  }
  WordsimResult out;
  out.rho = spearman(model, human);
  out.total = static_cast<int>(ds.pairs.size());
  out.scored = static_cast<int>(rows.size());
  out.coverage = static_cast<double>(out.scored) / static_cast<double>(out.total);
  return out;
}

struct WordsimRow {
  std::string dataset;
  std::string method;
  double rho = 0.0;
  double coverage = 0.0;
};

inline std::string wordsim_report_csv(std::span<const WordsimRow> rows) {
  std::ostringstream out;
  out << "dataset,method,rho,coverage\n";
  char buf[64];
  for (const WordsimRow& r : rows) {
    out << r.dataset << ',' << r.method << ',';
    std::snprintf(buf, sizeof buf, "%.10g", r.rho);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.10g", r.coverage);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace backpack
