#pragma once

// The Backpack language model. A word's k sense vectors are a function of
// its embedding alone; a contextualization Transformer produces per-sense,
// per-position mixing weights alpha; outputs are weighted sums of sense
// vectors pushed through the tied embedding as a log-linear head. Because
// the head is log-linear in the senses, interventions that rescale or
// replace a sense change logits by an exactly predictable amount.

#include <map>
#include <optional>
#include <string>

#include "tensor.hpp"

namespace backpack {

struct BackpackConfig {
  int vocab_size = 0;
  int model_dim = 64;
  int num_senses = 16;
  int layers = 2;
  int heads = 2;
  int seq_len = 128;   // maximum context length
  int ff_mult = 4;
  bool faithful_sense_ff = true;

  int head_dim() const { return model_dim / heads; }
  int sense_dim() const { return model_dim / num_senses; }  // width of each K/Q block

  void validate() const {
    if (vocab_size <= 0) throw DimensionError("config: vocab_size must be positive");
    if (model_dim <= 0 || layers <= 0 || heads <= 0 || seq_len <= 0 || ff_mult <= 0)
      throw DimensionError("config: dimensions must be positive");
    if (num_senses < 1) throw DimensionError("config: num_senses must be >= 1");
    if (model_dim % heads != 0) throw DimensionError("config: model_dim must be divisible by heads");
    if (model_dim % num_senses != 0)
      throw DimensionError("config: model_dim must be divisible by num_senses");
  }

  // Named presets. The first three mirror published model sizes; the last
  // two are small enough to train on a single desktop core.
  static BackpackConfig preset(const std::string& name, int vocab_size) {
    BackpackConfig c;
    c.vocab_size = vocab_size;
    if (name == "micro") {
      c.model_dim = 384; c.layers = 6; c.heads = 6; c.num_senses = 16; c.seq_len = 512;
    } else if (name == "mini") {
      c.model_dim = 640; c.layers = 8; c.heads = 8; c.num_senses = 16; c.seq_len = 512;
    } else if (name == "small") {
      c.model_dim = 768; c.layers = 12; c.heads = 12; c.num_senses = 16; c.seq_len = 512;
    } else if (name == "tiny") {
      c.model_dim = 64; c.layers = 2; c.heads = 2; c.num_senses = 4; c.seq_len = 128;
    } else if (name == "micro-desk") {
      c.model_dim = 128; c.layers = 4; c.heads = 4; c.num_senses = 16; c.seq_len = 128;
    } else {
      throw UsageError("unknown preset: " + name);
    }
    return c;
  }
};

// Multiplicative re-weighting of the contextualization weights,
// delta[l][i][j] applied next to alpha[l][i][j]. Defaults to all ones.
struct DeltaSchedule {
  int k = 0;
  int n = 0;
  std::vector<double> d;

  static DeltaSchedule ones(int k, int n) {
    DeltaSchedule s;
    s.k = k;
    s.n = n;
    s.d.assign(static_cast<size_t>(k) * n * n, 1.0);
    return s;
  }

  // ps is n x k: one multiplier per (source position j, sense), applied for
  // every output position i.
  static DeltaSchedule from_position_sense(const Matrix& ps) {
    DeltaSchedule s = ones(ps.cols, ps.rows);
    for (int l = 0; l < s.k; ++l)
      for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j) s.at(l, i, j) = ps.at(j, l);
    s.check_nonnegative();
    return s;
  }

  // Factorized per-(word, sense) multipliers expanded over a token sequence.
  static DeltaSchedule from_word_sense(std::span<const int> tokens, int k,
                                       const std::map<std::pair<int, int>, double>& word_sense) {
    int n = static_cast<int>(tokens.size());
    DeltaSchedule s = ones(k, n);
    for (int l = 0; l < k; ++l)
      for (int j = 0; j < n; ++j) {
        auto it = word_sense.find({tokens[j], l});
        if (it == word_sense.end()) continue;
        for (int i = 0; i < n; ++i) s.at(l, i, j) = it->second;
      }
    s.check_nonnegative();
    return s;
  }

  double at(int l, int i, int j) const {
    return d[(static_cast<size_t>(l) * n + i) * n + j];
  }
  double& at(int l, int i, int j) { return d[(static_cast<size_t>(l) * n + i) * n + j]; }

  void check_nonnegative() const {
    for (double v : d)
      if (!(v >= 0.0)) throw DataError("delta schedule: entries must be non-negative");
  }

  void check_shape(int k_, int n_) const {
    if (k != k_ || n != n_ || d.size() != static_cast<size_t>(k) * n * n)
      throw DimensionError("delta schedule: shape mismatch");
  }
};

class BackpackModel {
 public:
  BackpackModel(BackpackConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    for (auto& [name, shape] : parameter_shapes(cfg_)) {
      Tensor t;
      char tail = name.back();
      if (tail == 'g') {
        t = Tensor::full(shape, 1.0, true);  // layer norm gains
      } else if (tail == 'b') {
        t = Tensor::zeros(shape, true);      // biases and layer norm shifts
      } else {
        t = Tensor::randn(shape, rng, 0.02, true);
      }
      index_[name] = params_.size();
      params_.emplace_back(name, t);
    }
  }

  const BackpackConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }

  Tensor param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter: " + name);
    return params_[it->second].second;
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  // Single source of truth for parameter names and shapes; the checkpoint
  // format and the shape tests both lean on this.
  static std::vector<std::pair<std::string, std::vector<int>>> parameter_shapes(
      const BackpackConfig& c) {
    c.validate();
    int d = c.model_dim, f = c.ff_mult * c.model_dim, kd = c.num_senses * c.model_dim;
    std::vector<std::pair<std::string, std::vector<int>>> out;
    out.push_back({"emb.E", {c.vocab_size, d}});
    out.push_back({"pos.P", {c.seq_len, d}});
    for (int i = 0; i < c.layers; ++i) {
      std::string p = "blk" + std::to_string(i) + ".";
      out.push_back({p + "ln1.g", {d}});
      out.push_back({p + "ln1.b", {d}});
      out.push_back({p + "attn.wqkv", {d, 3 * d}});
      out.push_back({p + "attn.bqkv", {3 * d}});
      out.push_back({p + "attn.wo", {d, d}});
      out.push_back({p + "attn.bo", {d}});
      out.push_back({p + "ln2.g", {d}});
      out.push_back({p + "ln2.b", {d}});
      out.push_back({p + "mlp.w1", {d, f}});
      out.push_back({p + "mlp.b1", {f}});
      out.push_back({p + "mlp.w2", {f, d}});
      out.push_back({p + "mlp.b2", {d}});
    }
    out.push_back({"lnf.g", {d}});
    out.push_back({"lnf.b", {d}});
    out.push_back({"sense.ln_in.g", {d}});
    out.push_back({"sense.ln_in.b", {d}});
    out.push_back({"sense.fc1.w", {d, f}});
    out.push_back({"sense.fc1.b", {f}});
    out.push_back({"sense.fc2.w", {f, d}});
    out.push_back({"sense.fc2.b", {d}});
    out.push_back({"sense.ln_mid.g", {d}});
    out.push_back({"sense.ln_mid.b", {d}});
    out.push_back({"sense.fc3.w", {d, f}});
    out.push_back({"sense.fc3.b", {f}});
    out.push_back({"sense.fc4.w", {f, kd}});
    out.push_back({"sense.fc4.b", {kd}});
    out.push_back({"ctx.K", {d, d}});  // k blocks of d/k columns
    out.push_back({"ctx.Q", {d, d}});
    return out;
  }

  BackpackModel clone() const {
    BackpackModel m(cfg_, 0);
    for (size_t i = 0; i < params_.size(); ++i) m.params_[i].second.data() = params_[i].second.data();
    return m;
  }

 private:
  BackpackConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// A model plus copy-on-edit sense replacements. Interventions (sense scaling,
// knowledge edits) override the k x d sense block of individual words without
// touching the underlying parameters, so alpha is provably unaffected.
class ModelView {
 public:
  ModelView(const BackpackModel& m) : base_(&m) {}  // NOLINT: implicit by design

  const BackpackModel& base() const { return *base_; }
  const BackpackConfig& config() const { return base_->config(); }

  void override_senses(int word, Matrix kxd) {
    const auto& c = base_->config();
    if (word < 0 || word >= c.vocab_size) throw DimensionError("override_senses: word out of range");
    if (kxd.rows != c.num_senses || kxd.cols != c.model_dim)
      throw DimensionError("override_senses: expected a k x d matrix");
    overrides_[word] = std::move(kxd);
  }

  const Matrix* override_for(int word) const {
    auto it = overrides_.find(word);
    return it == overrides_.end() ? nullptr : &it->second;
  }

  const std::map<int, Matrix>& overrides() const { return overrides_; }

 private:
  const BackpackModel* base_;
  std::map<int, Matrix> overrides_;
};

namespace detail {

inline void check_tokens(const BackpackConfig& c, std::span<const int> tokens) {
  if (tokens.empty()) throw DimensionError("empty token sequence");
  if (static_cast<int>(tokens.size()) > c.seq_len)
    throw DimensionError("sequence length exceeds configured maximum");
  for (int t : tokens)
    if (t < 0 || t >= c.vocab_size) throw DimensionError("token id out of range");
}

// Pre-LN Transformer over the embedded sequence; returns final hidden states.
inline Tensor context_states(const BackpackModel& m, std::span<const int> tokens) {
  const auto& c = m.config();
  int n = static_cast<int>(tokens.size());
  int d = c.model_dim, hd = c.head_dim();
  std::vector<int> ids(tokens.begin(), tokens.end()), pos(n);
  for (int i = 0; i < n; ++i) pos[i] = i;
  Tensor x = add(rows(m.param("emb.E"), ids), rows(m.param("pos.P"), pos));
  double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int b = 0; b < c.layers; ++b) {
    std::string p = "blk" + std::to_string(b) + ".";
    Tensor a = layer_norm(x, m.param(p + "ln1.g"), m.param(p + "ln1.b"));
    Tensor qkv = add_row(matmul(a, m.param(p + "attn.wqkv")), m.param(p + "attn.bqkv"));
    Tensor q = slice_cols(qkv, 0, d);
    Tensor k = slice_cols(qkv, d, 2 * d);
    Tensor v = slice_cols(qkv, 2 * d, 3 * d);
    Tensor wo = m.param(p + "attn.wo");
    Tensor att;
    for (int h = 0; h < c.heads; ++h) {
      Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
      Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
      Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
      Tensor w = causal_softmax(scale(matmul_nt(qh, kh), att_scale));
      Tensor oh = matmul(w, vh);
      Tensor proj = matmul(oh, slice_rows(wo, h * hd, (h + 1) * hd));
      att = att.defined() ? add(att, proj) : proj;
    }
    x = add(x, add_row(att, m.param(p + "attn.bo")));
    Tensor bnorm = layer_norm(x, m.param(p + "ln2.g"), m.param(p + "ln2.b"));
    Tensor mlp = add_row(
        matmul(gelu(add_row(matmul(bnorm, m.param(p + "mlp.w1")), m.param(p + "mlp.b1"))),
               m.param(p + "mlp.w2")),
        m.param(p + "mlp.b2"));
    x = add(x, mlp);
  }
  return layer_norm(x, m.param("lnf.g"), m.param("lnf.b"));
}

// Per-sense mixing weights: row i of alpha[l] is a causal softmax over
// (h_i K_l) . (h_j Q_l). This final key-query stage is unscaled and has no
// bias or output projection.
inline std::vector<Tensor> context_alpha(const BackpackModel& m, const Tensor& h) {
  const auto& c = m.config();
  int sd = c.sense_dim();
  Tensor hk = matmul(h, m.param("ctx.K"));
  Tensor hq = matmul(h, m.param("ctx.Q"));
  std::vector<Tensor> alpha;
  alpha.reserve(static_cast<size_t>(c.num_senses));
  for (int l = 0; l < c.num_senses; ++l) {
    Tensor kl = slice_cols(hk, l * sd, (l + 1) * sd);
    Tensor ql = slice_cols(hq, l * sd, (l + 1) * sd);
    alpha.push_back(causal_softmax(matmul_nt(kl, ql)));
  }
  return alpha;
}

// Sense network over a batch of word ids: rows of the output are the k*d
// sense blocks. Row-wise ops guarantee each word's output is independent of
// which other words share the batch.
inline Tensor sense_ff(const BackpackModel& m, const std::vector<int>& words) {
  const auto& c = m.config();
  Tensor e = rows(m.param("emb.E"), words);
  Tensor s0 = layer_norm(e, m.param("sense.ln_in.g"), m.param("sense.ln_in.b"));
  Tensor f1 = gelu(add_row(matmul(s0, m.param("sense.fc1.w")), m.param("sense.fc1.b")));
  Tensor f2 = add_row(matmul(f1, m.param("sense.fc2.w")), m.param("sense.fc2.b"));
  Tensor a = add(e, f2);
  Tensor in2 = a;
  if (c.faithful_sense_ff) {
    // A second layer norm and residual sit before the final expansion.
    Tensor mid = layer_norm(a, m.param("sense.ln_mid.g"), m.param("sense.ln_mid.b"));
    in2 = add(mid, a);
  }
  Tensor f3 = gelu(add_row(matmul(in2, m.param("sense.fc3.w")), m.param("sense.fc3.b")));
  return add_row(matmul(f3, m.param("sense.fc4.w")), m.param("sense.fc4.b"));
}

inline std::vector<int> unique_sorted(std::span<const int> tokens) {
  std::vector<int> u(tokens.begin(), tokens.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

}  // namespace detail

// Non-contextual sense vectors of one word, one row per sense.
inline Matrix sense_vectors(const ModelView& view, int word) {
  const auto& c = view.config();
  if (word < 0 || word >= c.vocab_size) throw DimensionError("sense_vectors: word out of range");
  if (const Matrix* o = view.override_for(word)) return *o;
  Tensor s = detail::sense_ff(view.base(), {word});
  Matrix out(c.num_senses, c.model_dim);
  out.a = s.data();
  return out;
}

// Precomputed senses for the whole vocabulary.
class SenseTable {
 public:
  static SenseTable build(const ModelView& view) {
    const auto& c = view.config();
    SenseTable t;
    t.k_ = c.num_senses;
    t.d_ = c.model_dim;
    t.rows_.reserve(static_cast<size_t>(c.vocab_size));
    std::vector<int> all(static_cast<size_t>(c.vocab_size));
    for (int i = 0; i < c.vocab_size; ++i) all[static_cast<size_t>(i)] = i;
    Tensor s = detail::sense_ff(view.base(), all);
    size_t w = static_cast<size_t>(t.k_) * t.d_;
    for (int x = 0; x < c.vocab_size; ++x) {
      Matrix m(t.k_, t.d_);
      std::copy_n(s.data().data() + static_cast<size_t>(x) * w, w, m.a.data());
      if (const Matrix* o = view.override_for(x)) m = *o;
      t.rows_.push_back(std::move(m));
    }
    return t;
  }

  const Matrix& senses(int word) const { return rows_.at(static_cast<size_t>(word)); }
  std::span<const double> sense(int word, int l) const { return rows_[static_cast<size_t>(word)].row(l); }
  int num_senses() const { return k_; }
  int dim() const { return d_; }
  int vocab_size() const { return static_cast<int>(rows_.size()); }

 private:
  int k_ = 0, d_ = 0;
  std::vector<Matrix> rows_;
};

// Contextualization weights as plain matrices, alpha[l] being n x n.
inline std::vector<Matrix> contextualization_weights(const ModelView& view,
                                                     std::span<const int> tokens) {
  const auto& m = view.base();
  detail::check_tokens(m.config(), tokens);
  Tensor h = detail::context_states(m, tokens);
  std::vector<Tensor> at = detail::context_alpha(m, h);
  std::vector<Matrix> out;
  out.reserve(at.size());
  int n = static_cast<int>(tokens.size());
  for (auto& t : at) {
    Matrix a(n, n);
    a.a = t.data();
    out.push_back(std::move(a));
  }
  return out;
}

struct ForwardValues {
  std::vector<Matrix> alpha;           // k matrices, n x n
  std::map<int, Matrix> senses;        // distinct word -> k x d
  Matrix o;                            // n x d
  Matrix logits;                       // n x |V|
  Matrix log_probs;                    // n x |V|
};

namespace detail {

inline std::map<int, Matrix> gather_senses(const ModelView& view, std::span<const int> tokens) {
  const auto& c = view.config();
  std::vector<int> uniq = unique_sorted(tokens);
  Tensor s = sense_ff(view.base(), uniq);
  std::map<int, Matrix> out;
  size_t w = static_cast<size_t>(c.num_senses) * c.model_dim;
  for (size_t u = 0; u < uniq.size(); ++u) {
    Matrix m(c.num_senses, c.model_dim);
    std::copy_n(s.data().data() + u * w, w, m.a.data());
    if (const Matrix* o = view.override_for(uniq[u])) m = *o;
    out.emplace(uniq[u], std::move(m));
  }
  return out;
}

inline Matrix embedding_matrix(const BackpackModel& m) {
  const auto& c = m.config();
  Matrix e(c.vocab_size, c.model_dim);
  e.a = m.param("emb.E").data();
  return e;
}

inline void log_softmax_rows(Matrix& m) {
  for (int r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    double lse = mx + std::log(z);
    for (double& v : row) v -= lse;
  }
}

}  // namespace detail

// Full forward pass with plain-value outputs; the workhorse for evaluation
// and for every sense intervention.
inline ForwardValues forward_values(const ModelView& view, std::span<const int> tokens,
                                    const DeltaSchedule* delta = nullptr) {
  const auto& c = view.config();
  detail::check_tokens(c, tokens);
  int n = static_cast<int>(tokens.size()), d = c.model_dim, k = c.num_senses;
  if (delta) {
    delta->check_shape(k, n);
    delta->check_nonnegative();
  }
  ForwardValues fv;
  fv.alpha = contextualization_weights(view, tokens);
  fv.senses = detail::gather_senses(view, tokens);
  fv.o = Matrix(n, d);
  for (int l = 0; l < k; ++l) {
    const Matrix& al = fv.alpha[static_cast<size_t>(l)];
    for (int i = 0; i < n; ++i) {
      double* oi = fv.o.a.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j <= i; ++j) {
        double w = al.at(i, j) * (delta ? delta->at(l, i, j) : 1.0);
        if (w == 0.0) continue;
        auto cs = fv.senses.at(tokens[j]).row(l);
        for (int t = 0; t < d; ++t) oi[t] += w * cs[t];
      }
    }
  }
  Matrix e = detail::embedding_matrix(view.base());
  fv.logits = matmul_nt(fv.o, e);
  fv.log_probs = fv.logits;
  detail::log_softmax_rows(fv.log_probs);
  return fv;
}

inline Matrix backpack_representations(const ModelView& view, std::span<const int> tokens,
                                       const DeltaSchedule* delta = nullptr) {
  return forward_values(view, tokens, delta).o;
}

inline Matrix lm_log_probs(const ModelView& view, std::span<const int> tokens,
                           const DeltaSchedule* delta = nullptr) {
  return forward_values(view, tokens, delta).log_probs;
}

// Next-token distribution only; skips the n x |V| logit sheet.
inline std::vector<double> next_token_log_probs(const ModelView& view,
                                                std::span<const int> tokens,
                                                const DeltaSchedule* delta = nullptr) {
  const auto& c = view.config();
  detail::check_tokens(c, tokens);
  int n = static_cast<int>(tokens.size()), d = c.model_dim, k = c.num_senses;
  if (delta) {
    delta->check_shape(k, n);
    delta->check_nonnegative();
  }
  std::vector<Matrix> alpha = contextualization_weights(view, tokens);
  std::map<int, Matrix> senses = detail::gather_senses(view, tokens);
  std::vector<double> o(static_cast<size_t>(d), 0.0);
  int i = n - 1;
  for (int l = 0; l < k; ++l) {
    const Matrix& al = alpha[static_cast<size_t>(l)];
    for (int j = 0; j <= i; ++j) {
      double w = al.at(i, j) * (delta ? delta->at(l, i, j) : 1.0);
      if (w == 0.0) continue;
      auto cs = senses.at(tokens[static_cast<size_t>(j)]).row(l);
      for (int t = 0; t < d; ++t) o[static_cast<size_t>(t)] += w * cs[t];
    }
  }
  Matrix e = detail::embedding_matrix(view.base());
  std::vector<double> logits = matvec(e, o);
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  double lse = mx + std::log(z);
  for (double& v : logits) v -= lse;
  return logits;
}

struct LogitDecomposition {
  int position = 0;
  int k = 0;
  std::vector<std::vector<double>> contributions;  // indexed j * k + l, each |V|
  std::vector<double> logits;                      // full logits at the position

  const std::vector<double>& contribution(int j, int l) const {
    return contributions.at(static_cast<size_t>(j) * k + l);
  }
};

// Splits the logits at one position into its (source position, sense)
// summands: contribution(j, l) = alpha[l](i, j) * E C(x_j)_l.
inline LogitDecomposition logit_decomposition(const ModelView& view, std::span<const int> tokens,
                                              int position) {
  const auto& c = view.config();
  detail::check_tokens(c, tokens);
  int n = static_cast<int>(tokens.size());
  if (position < 0 || position >= n) throw DimensionError("logit_decomposition: position out of range");
  ForwardValues fv = forward_values(view, tokens);
  Matrix e = detail::embedding_matrix(view.base());
  LogitDecomposition out;
  out.position = position;
  out.k = c.num_senses;
  out.logits.assign(fv.logits.row(position).begin(), fv.logits.row(position).end());
  out.contributions.assign(static_cast<size_t>(n) * c.num_senses,
                           std::vector<double>(static_cast<size_t>(c.vocab_size), 0.0));
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < c.num_senses; ++l) {
      if (j > position) continue;  // causal: exactly zero
      double w = fv.alpha[static_cast<size_t>(l)].at(position, j);
      auto cs = fv.senses.at(tokens[static_cast<size_t>(j)]).row(l);
      auto& dst = out.contributions[static_cast<size_t>(j) * c.num_senses + l];
      for (int x = 0; x < c.vocab_size; ++x) dst[static_cast<size_t>(x)] = w * dot(e.row(x), cs);
    }
  return out;
}

using DeltaHook =
    std::function<std::optional<DeltaSchedule>(int step, const std::vector<int>& ids)>;

// Ancestral sampling from the full next-token distribution, no truncation.
// The optional hook supplies a DeltaSchedule per step for controlled text.
inline std::vector<int> generate(const ModelView& view, std::span<const int> prompt, int max_new,
                                 uint64_t seed, const DeltaHook& hook = {}) {
  const auto& c = view.config();
  if (prompt.empty()) throw DimensionError("generate: prompt must be non-empty");
  if (static_cast<int>(prompt.size()) > c.seq_len)
    throw DimensionError("generate: prompt exceeds maximum context length");
  if (max_new < 0) throw UsageError("generate: max_new must be >= 0");
  if (static_cast<int>(prompt.size()) + max_new > c.seq_len)
    throw DimensionError("generate: prompt plus max_new exceeds maximum context length");
  std::vector<int> ids(prompt.begin(), prompt.end());
  Rng rng(seed);
  for (int step = 0; step < max_new; ++step) {
    std::optional<DeltaSchedule> delta;
    if (hook) delta = hook(step, ids);
    std::vector<double> lp = next_token_log_probs(view, ids, delta ? &*delta : nullptr);
    double u = rng.uniform();
    double acc = 0.0;
    int pick = static_cast<int>(lp.size()) - 1;
    for (size_t x = 0; x < lp.size(); ++x) {
      acc += std::exp(lp[x]);
      if (u < acc) {
        pick = static_cast<int>(x);
        break;
      }
    }
    ids.push_back(pick);
  }
  return ids;
}

// Training-path loss graph: mean next-token NLL of `targets` given `inputs`.
inline Tensor lm_loss(const BackpackModel& m, std::span<const int> inputs,
                      std::span<const int> targets) {
  const auto& c = m.config();
  detail::check_tokens(c, inputs);
  if (inputs.size() != targets.size()) throw DimensionError("lm_loss: inputs/targets length mismatch");
  int n = static_cast<int>(inputs.size()), d = c.model_dim;
  Tensor h = detail::context_states(m, inputs);
  std::vector<Tensor> alpha = detail::context_alpha(m, h);
  std::vector<int> uniq = detail::unique_sorted(inputs);
  std::unordered_map<int, int> to_uniq;
  for (size_t u = 0; u < uniq.size(); ++u) to_uniq[uniq[u]] = static_cast<int>(u);
  Tensor senses_u = detail::sense_ff(m, uniq);
  std::vector<int> pos2u(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pos2u[static_cast<size_t>(i)] = to_uniq[inputs[i]];
  Tensor senses_by_pos = rows(senses_u, pos2u);  // n x (k*d)
  Tensor o;
  for (int l = 0; l < c.num_senses; ++l) {
    Tensor sl = slice_cols(senses_by_pos, l * d, (l + 1) * d);
    Tensor contrib = matmul(alpha[static_cast<size_t>(l)], sl);
    o = o.defined() ? add(o, contrib) : contrib;
  }
  Tensor logits = matmul_nt(o, m.param("emb.E"));
  return cross_entropy(logits, std::vector<int>(targets.begin(), targets.end()));
}

}  // namespace backpack
