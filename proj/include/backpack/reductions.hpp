#pragma once

// Executable proofs that two classical architectures are special cases of
// the weighted-sense-sum form: CBOW (uniform mixing weights, one sense per
// word) and one layer of multi-head key-query-value self-attention (senses
// are per-head linear maps of the token embedding). Each reduction is
// checked against its direct implementation to 1e-9.

#include "common.hpp"

namespace backpack {

struct CbowModel {
  Matrix v;  // |V| x d context embeddings
  Matrix u;  // |V| x d output matrix

  static CbowModel random(int vocab, int d, Rng& rng) {
    CbowModel m;
    m.v = Matrix(vocab, d);
    m.u = Matrix(vocab, d);
    for (double& x : m.v.a) x = rng.normal();
    for (double& x : m.u.a) x = rng.normal();
    return m;
  }
};

// softmax(U . mean of context embeddings)
inline std::vector<double> cbow_forward(const CbowModel& m, std::span<const int> context) {
  if (context.empty()) throw DimensionError("cbow_forward: empty context");
  int d = m.v.cols;
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (int id : context) {
    if (id < 0 || id >= m.v.rows) throw DimensionError("cbow_forward: id out of range");
    auto row = m.v.row(id);
    for (int t = 0; t < d; ++t) mean[static_cast<size_t>(t)] += row[t];
  }
  for (double& x : mean) x /= static_cast<double>(context.size());
  std::vector<double> logits = matvec(m.u, mean);
  softmax_inplace(logits);
  return logits;
}

// The same CBOW model evaluated through the weighted-sense-sum form:
// k = 1 sense, C(x) = v_x, and uniform mixing weights 1/n.
struct CbowAsBackpack {
  const CbowModel* m;

  int num_senses() const { return 1; }

  // alpha[i][j] = 1/n for every pair; the degenerate contextualization.
  Matrix alpha(int n) const {
    Matrix a(n, n);
    std::fill(a.a.begin(), a.a.end(), 1.0 / static_cast<double>(n));
    return a;
  }

  std::span<const double> sense(int word) const { return m->v.row(word); }

  std::vector<double> forward(std::span<const int> context) const {
    if (context.empty()) throw DimensionError("backpack_as_cbow: empty context");
    int n = static_cast<int>(context.size()), d = m->v.cols;
    Matrix a = alpha(n);
    std::vector<double> o(static_cast<size_t>(d), 0.0);
    // o = sum_j alpha[i][j] * C(x_j); any row i gives the same sum.
    for (int j = 0; j < n; ++j) {
      auto cs = sense(context[static_cast<size_t>(j)]);
      double w = a.at(0, j);
      for (int t = 0; t < d; ++t) o[static_cast<size_t>(t)] += w * cs[t];
    }
    std::vector<double> logits = matvec(m->u, o);
    softmax_inplace(logits);
    return logits;
  }
};

inline CbowAsBackpack backpack_as_cbow(const CbowModel& m) { return CbowAsBackpack{&m}; }

// One layer of multi-head attention exactly as the reduction states it:
// unmasked and without the 1/sqrt(d) score scaling. Head l maps inputs with
// V_l (d/k x d), keys/queries with K_l, Q_l (d x d/k), and a single shared
// output map O (d x d/k) reassembles head outputs into R^d.
struct AttentionLayer {
  int k = 0;                // heads
  Matrix o;                 // d x d/k
  std::vector<Matrix> v;    // k of d/k x d
  std::vector<Matrix> kq_k; // k of d x d/k
  std::vector<Matrix> kq_q; // k of d x d/k

  static AttentionLayer random(int d, int k, Rng& rng) {
    if (k <= 0 || d % k != 0) throw DimensionError("attention layer: k must divide d");
    AttentionLayer l;
    l.k = k;
    int dk = d / k;
    auto fill = [&rng](Matrix& m) {
      for (double& x : m.a) x = rng.normal();
    };
    l.o = Matrix(d, dk);
    fill(l.o);
    for (int h = 0; h < k; ++h) {
      l.v.emplace_back(dk, d);
      fill(l.v.back());
      l.kq_k.emplace_back(d, dk);
      fill(l.kq_k.back());
      l.kq_q.emplace_back(d, dk);
      fill(l.kq_q.back());
    }
    return l;
  }

  void check(const Matrix& x) const {
    if (k <= 0 || static_cast<int>(v.size()) != k) throw DimensionError("attention layer: bad head count");
    int d = o.rows;
    if (x.cols != d) throw DimensionError("attention layer: input width mismatch");
    for (int h = 0; h < k; ++h)
      if (v[static_cast<size_t>(h)].rows != o.cols || v[static_cast<size_t>(h)].cols != d ||
          kq_k[static_cast<size_t>(h)].rows != d || kq_k[static_cast<size_t>(h)].cols != o.cols ||
          kq_q[static_cast<size_t>(h)].rows != d || kq_q[static_cast<size_t>(h)].cols != o.cols)
        throw DimensionError("attention layer: head shape mismatch");
  }
};

// Direct evaluation: output position i mixes value projections of every
// position j (no mask) with softmax over raw key-query scores.
inline Matrix attention_forward(const AttentionLayer& layer, const Matrix& x) {
  layer.check(x);
  int n = x.rows, d = x.cols, dk = layer.o.cols;
  Matrix out(n, d);
  for (int h = 0; h < layer.k; ++h) {
    Matrix xk = matmul(x, layer.kq_k[static_cast<size_t>(h)]);  // n x d/k
    Matrix xq = matmul(x, layer.kq_q[static_cast<size_t>(h)]);
    Matrix scores = matmul_nt(xk, xq);  // scores(i, j) = (x_i K) . (x_j Q)
    for (int i = 0; i < n; ++i) softmax_inplace(scores.row(i));
    // head value projections, then mix and map through O
    Matrix vx(n, dk);
    for (int j = 0; j < n; ++j) {
      auto vj = matvec(layer.v[static_cast<size_t>(h)], x.row(j));
      std::copy(vj.begin(), vj.end(), vx.row(j).begin());
    }
    for (int i = 0; i < n; ++i) {
      std::vector<double> mixed(static_cast<size_t>(dk), 0.0);
      for (int j = 0; j < n; ++j) {
        double w = scores.at(i, j);
        auto vr = vx.row(j);
        for (int t = 0; t < dk; ++t) mixed[static_cast<size_t>(t)] += w * vr[t];
      }
      auto oi = matvec(layer.o, mixed);
      for (int t = 0; t < d; ++t) out.at(i, t) += oi[static_cast<size_t>(t)];
    }
  }
  return out;
}

// The same layer evaluated through the weighted-sense-sum form: the sense
// vectors are C(x_j)_l = O V_l x_j, non-contextual in x_j, and alpha is the
// per-head softmax of the key-query scores.
struct AttentionAsBackpack {
  const AttentionLayer* layer;

  int num_senses() const { return layer->k; }

  // k x d sense block for a single input vector.
  Matrix senses(std::span<const double> xj) const {
    int d = layer->o.rows;
    Matrix s(layer->k, d);
    for (int h = 0; h < layer->k; ++h) {
      auto vx = matvec(layer->v[static_cast<size_t>(h)], xj);
      auto ov = matvec(layer->o, vx);
      std::copy(ov.begin(), ov.end(), s.row(h).begin());
    }
    return s;
  }

  std::vector<Matrix> alpha(const Matrix& x) const {
    layer->check(x);
    std::vector<Matrix> out;
    for (int h = 0; h < layer->k; ++h) {
      Matrix xk = matmul(x, layer->kq_k[static_cast<size_t>(h)]);
      Matrix xq = matmul(x, layer->kq_q[static_cast<size_t>(h)]);
      Matrix scores = matmul_nt(xk, xq);
      for (int i = 0; i < x.rows; ++i) softmax_inplace(scores.row(i));
      out.push_back(std::move(scores));
    }
    return out;
  }

  Matrix forward(const Matrix& x) const {
    layer->check(x);
    int n = x.rows, d = x.cols;
    std::vector<Matrix> a = alpha(x);
    std::vector<Matrix> s;
    s.reserve(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) s.push_back(senses(x.row(j)));
    Matrix out(n, d);
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < layer->k; ++l)
        for (int j = 0; j < n; ++j) {
          double w = a[static_cast<size_t>(l)].at(i, j);
          auto cs = s[static_cast<size_t>(j)].row(l);
          for (int t = 0; t < d; ++t) out.at(i, t) += w * cs[t];
        }
    return out;
  }
};

inline AttentionAsBackpack backpack_as_attention(const AttentionLayer& layer) {
  return AttentionAsBackpack{&layer};
}

}  // namespace backpack
