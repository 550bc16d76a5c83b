#pragma once

// Reverse-mode autodiff on dense 64-bit tensors. Define-by-run: every op
// computes its value eagerly and records a node; Graph::build topologically
// sorts the DAG and backward() walks it in reverse with a fixed traversal
// order, so gradients are bitwise reproducible run to run.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <unordered_map>
#include <utility>

#include "common.hpp"

namespace backpack {

enum class Op {
  Leaf,
  Add,
  AddRow,   // matrix + broadcast row vector
  Mul,      // elementwise
  Scale,    // by immediate constant
  Matmul,   // a (m,p) * b (p,q)
  MatmulNT, // a (m,p) * b(q,p)^T
  Rows,     // gather rows by index
  SliceCols,
  SliceRows,
  LayerNorm,
  Gelu,
  Softmax,
  CausalSoftmax,
  LogSoftmax,
  CrossEntropy,
  Sum,
  Mean,
};

namespace detail {

struct Node {
  Op op = Op::Leaf;
  std::vector<int> shape;  // empty => scalar
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;  // set on leaves
  bool needs_grad = false;     // reaches a requires_grad leaf
  std::vector<std::shared_ptr<Node>> in;
  int i0 = 0, i1 = 0;        // axis or slice bounds
  double c0 = 0.0;           // scale factor / epsilon
  std::vector<int> idx;      // gather indices or targets
  std::vector<double> aux;   // saved per-row stats (layer norm)

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), requires_grad);
  }

  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
    Tensor t = make_leaf(std::move(shape), requires_grad);
    std::fill(t.n_->val.begin(), t.n_->val.end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false) {
    Tensor t = make_leaf(std::move(shape), requires_grad);
    if (data.size() != t.n_->numel()) throw DimensionError("Tensor::from: data size does not match shape");
    t.n_->val = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad = true) {
    Tensor t = make_leaf(std::move(shape), requires_grad);
    for (double& x : t.n_->val) x = stddev * rng.normal();
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  size_t size() const { return n_->numel(); }
  bool requires_grad() const { return n_->requires_grad; }

  std::vector<double>& data() { return n_->val; }
  const std::vector<double>& data() const { return n_->val; }
  const std::vector<double>& grad() const { return n_->grad; }

  double item() const {
    if (n_->numel() != 1) throw DimensionError("item(): tensor is not a scalar");
    return n_->val[0];
  }

  std::shared_ptr<detail::Node> node() const { return n_; }

 private:
  static Tensor make_leaf(std::vector<int> shape, bool requires_grad) {
    for (int d : shape)
      if (d < 0) throw DimensionError("negative dimension");
    Tensor t;
    t.n_ = std::make_shared<detail::Node>();
    t.n_->shape = std::move(shape);
    t.n_->val.assign(t.n_->numel(), 0.0);
    t.n_->requires_grad = requires_grad;
    t.n_->needs_grad = requires_grad;
    return t;
  }

  friend Tensor wrap(std::shared_ptr<detail::Node> n);
  std::shared_ptr<detail::Node> n_;
};

inline Tensor wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.n_ = std::move(n);
  return t;
}

namespace detail {

inline std::shared_ptr<Node> new_node(Op op, std::vector<int> shape,
                                      std::vector<std::shared_ptr<Node>> inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->val.assign(n->numel(), 0.0);
  n->in = std::move(inputs);
  for (const auto& i : n->in)
    if (i->needs_grad) n->needs_grad = true;
  return n;
}

inline void require_same_shape(const Node& a, const Node& b, const char* what) {
  if (a.shape != b.shape) throw DimensionError(std::string(what) + ": shape mismatch");
}

// Rows of a tensor viewed as a (rows, cols) sheet where cols is the size of
// the trailing dimension. Used by the row-wise ops below.
inline std::pair<size_t, size_t> as_sheet(const Node& n, const char* what) {
  if (n.shape.empty()) throw DimensionError(std::string(what) + ": scalar input");
  size_t cols = static_cast<size_t>(n.shape.back());
  if (cols == 0) throw DimensionError(std::string(what) + ": empty trailing dimension");
  return {n.numel() / cols, cols};
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(*a.node(), *b.node(), "add");
  auto n = detail::new_node(Op::Add, a.shape(), {a.node(), b.node()});
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = x[i] + y[i];
  return wrap(n);
}

// matrix (r, c) + row vector (c,), broadcast over rows
inline Tensor add_row(const Tensor& m, const Tensor& v) {
  if (v.rank() != 1) throw DimensionError("add_row: bias must be rank 1");
  auto [rows, cols] = detail::as_sheet(*m.node(), "add_row");
  if (static_cast<size_t>(v.dim(0)) != cols) throw DimensionError("add_row: width mismatch");
  auto n = detail::new_node(Op::AddRow, m.shape(), {m.node(), v.node()});
  const auto& x = m.data();
  const auto& y = v.data();
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) n->val[r * cols + c] = x[r * cols + c] + y[c];
  return wrap(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(*a.node(), *b.node(), "mul");
  auto n = detail::new_node(Op::Mul, a.shape(), {a.node(), b.node()});
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = x[i] * y[i];
  return wrap(n);
}

inline Tensor scale(const Tensor& a, double c) {
  auto n = detail::new_node(Op::Scale, a.shape(), {a.node()});
  n->c0 = c;
  const auto& x = a.data();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = c * x[i];
  return wrap(n);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: rank-2 tensors required");
  if (a.dim(1) != b.dim(0)) throw DimensionError("matmul: inner dimensions disagree");
  int m = a.dim(0), p = a.dim(1), q = b.dim(1);
  auto n = detail::new_node(Op::Matmul, {m, q}, {a.node(), b.node()});
  const auto& x = a.data();
  const auto& y = b.data();
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < p; ++k) {
      double s = x[static_cast<size_t>(i) * p + k];
      if (s == 0.0) continue;
      const double* yr = y.data() + static_cast<size_t>(k) * q;
      double* out = n->val.data() + static_cast<size_t>(i) * q;
      for (int j = 0; j < q; ++j) out[j] += s * yr[j];
    }
  return wrap(n);
}

// a (m, p) times b (q, p) transposed -> (m, q)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul_nt: rank-2 tensors required");
  if (a.dim(1) != b.dim(1)) throw DimensionError("matmul_nt: inner dimensions disagree");
  int m = a.dim(0), p = a.dim(1), q = b.dim(0);
  auto n = detail::new_node(Op::MatmulNT, {m, q}, {a.node(), b.node()});
  const auto& x = a.data();
  const auto& y = b.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < q; ++j) {
      double s = 0.0;
      const double* xr = x.data() + static_cast<size_t>(i) * p;
      const double* yr = y.data() + static_cast<size_t>(j) * p;
      for (int k = 0; k < p; ++k) s += xr[k] * yr[k];
      n->val[static_cast<size_t>(i) * q + j] = s;
    }
  return wrap(n);
}

inline Tensor rows(const Tensor& src, std::vector<int> ids) {
  if (src.rank() != 2) throw DimensionError("rows: rank-2 source required");
  int r = src.dim(0), c = src.dim(1);
  for (int id : ids)
    if (id < 0 || id >= r) throw DimensionError("rows: index out of range");
  auto n = detail::new_node(Op::Rows, {static_cast<int>(ids.size()), c}, {src.node()});
  n->idx = std::move(ids);
  const auto& x = src.data();
  for (size_t i = 0; i < n->idx.size(); ++i)
    std::copy_n(x.data() + static_cast<size_t>(n->idx[i]) * c, c, n->val.data() + i * c);
  return wrap(n);
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2) throw DimensionError("slice_cols: rank-2 tensor required");
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) throw DimensionError("slice_cols: bad column range");
  int r = a.dim(0), c = a.dim(1), w = c1 - c0;
  auto n = detail::new_node(Op::SliceCols, {r, w}, {a.node()});
  n->i0 = c0;
  n->i1 = c1;
  const auto& x = a.data();
  for (int i = 0; i < r; ++i)
    std::copy_n(x.data() + static_cast<size_t>(i) * c + c0, w, n->val.data() + static_cast<size_t>(i) * w);
  return wrap(n);
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.rank() != 2) throw DimensionError("slice_rows: rank-2 tensor required");
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1) throw DimensionError("slice_rows: bad row range");
  int c = a.dim(1);
  auto n = detail::new_node(Op::SliceRows, {r1 - r0, c}, {a.node()});
  n->i0 = r0;
  n->i1 = r1;
  std::copy_n(a.data().data() + static_cast<size_t>(r0) * c, static_cast<size_t>(r1 - r0) * c,
              n->val.data());
  return wrap(n);
}

// Row-wise layer norm over the trailing dimension, with learned gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  auto [rows, cols] = detail::as_sheet(*x.node(), "layer_norm");
  if (gain.rank() != 1 || bias.rank() != 1 || static_cast<size_t>(gain.dim(0)) != cols ||
      static_cast<size_t>(bias.dim(0)) != cols)
    throw DimensionError("layer_norm: gain/bias must match trailing dimension");
  auto n = detail::new_node(Op::LayerNorm, x.shape(), {x.node(), gain.node(), bias.node()});
  n->c0 = eps;
  n->aux.resize(rows * 2);  // per-row mean, rstd
  const auto& xv = x.data();
  const auto& g = gain.data();
  const auto& b = bias.data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mean = 0.0;
    for (size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (size_t c = 0; c < cols; ++c) {
      double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    double rstd = 1.0 / std::sqrt(var + eps);
    n->aux[r * 2] = mean;
    n->aux[r * 2 + 1] = rstd;
    double* out = n->val.data() + r * cols;
    for (size_t c = 0; c < cols; ++c) out[c] = g[c] * ((xr[c] - mean) * rstd) + b[c];
  }
  return wrap(n);
}

namespace detail {

inline double gelu_fwd(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_bwd(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  double u = c * (x + 0.044715 * x * x * x);
  double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace detail

inline Tensor gelu(const Tensor& a) {
  auto n = detail::new_node(Op::Gelu, a.shape(), {a.node()});
  const auto& x = a.data();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = detail::gelu_fwd(x[i]);
  return wrap(n);
}

// Softmax along `axis`, numerically stabilized by max subtraction.
inline Tensor softmax(const Tensor& a, int axis) {
  if (a.rank() == 0) throw DimensionError("softmax: scalar input");
  if (axis < 0 || axis >= a.rank()) throw DimensionError("softmax: axis out of range");
  int len = a.dim(axis);
  if (len == 0) throw DimensionError("softmax: empty axis");
  size_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= static_cast<size_t>(a.dim(i));
  size_t outer = a.size() / (inner * static_cast<size_t>(len));
  auto n = detail::new_node(Op::Softmax, a.shape(), {a.node()});
  n->i0 = axis;
  const auto& x = a.data();
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      size_t base = o * static_cast<size_t>(len) * inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < len; ++i) m = std::max(m, x[base + static_cast<size_t>(i) * inner]);
      double z = 0.0;
      for (int i = 0; i < len; ++i) {
        double e = std::exp(x[base + static_cast<size_t>(i) * inner] - m);
        n->val[base + static_cast<size_t>(i) * inner] = e;
        z += e;
      }
      for (int i = 0; i < len; ++i) n->val[base + static_cast<size_t>(i) * inner] /= z;
    }
  return wrap(n);
}

// Square score matrix -> row-stochastic lower triangle; entries above the
// diagonal are exactly zero. Row i is a softmax over columns 0..i.
inline Tensor causal_softmax(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw DimensionError("causal_softmax: square matrix required");
  int n_ = a.dim(0);
  if (n_ == 0) throw DimensionError("causal_softmax: empty matrix");
  auto n = detail::new_node(Op::CausalSoftmax, a.shape(), {a.node()});
  const auto& x = a.data();
  for (int i = 0; i < n_; ++i) {
    const double* xr = x.data() + static_cast<size_t>(i) * n_;
    double* out = n->val.data() + static_cast<size_t>(i) * n_;
    double m = xr[0];
    for (int j = 1; j <= i; ++j) m = std::max(m, xr[j]);
    double z = 0.0;
    for (int j = 0; j <= i; ++j) {
      out[j] = std::exp(xr[j] - m);
      z += out[j];
    }
    for (int j = 0; j <= i; ++j) out[j] /= z;
  }
  return wrap(n);
}

inline Tensor log_softmax(const Tensor& a) {
  auto [rows, cols] = detail::as_sheet(*a.node(), "log_softmax");
  auto n = detail::new_node(Op::LogSoftmax, a.shape(), {a.node()});
  const auto& x = a.data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double m = xr[0];
    for (size_t c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    double z = 0.0;
    for (size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - m);
    double lse = m + std::log(z);
    double* out = n->val.data() + r * cols;
    for (size_t c = 0; c < cols; ++c) out[c] = xr[c] - lse;
  }
  return wrap(n);
}

// Mean next-token negative log likelihood over rows of `logits`.
inline Tensor cross_entropy(const Tensor& logits, std::vector<int> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: rank-2 logits required");
  int r = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(targets.size()) != r) throw DimensionError("cross_entropy: one target per row required");
  for (int t : targets)
    if (t < 0 || t >= c) throw DimensionError("cross_entropy: target out of range");
  auto n = detail::new_node(Op::CrossEntropy, {}, {logits.node()});
  n->idx = std::move(targets);
  const auto& x = logits.data();
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    const double* xr = x.data() + static_cast<size_t>(i) * c;
    double m = xr[0];
    for (int j = 1; j < c; ++j) m = std::max(m, xr[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(xr[j] - m);
    total += (m + std::log(z)) - xr[n->idx[static_cast<size_t>(i)]];
  }
  n->val[0] = total / static_cast<double>(r);
  return wrap(n);
}

inline Tensor sum(const Tensor& a) {
  auto n = detail::new_node(Op::Sum, {}, {a.node()});
  double s = 0.0;
  for (double v : a.data()) s += v;
  n->val[0] = s;
  return wrap(n);
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  auto n = detail::new_node(Op::Mean, {}, {a.node()});
  double s = 0.0;
  for (double v : a.data()) s += v;
  n->val[0] = s / static_cast<double>(a.size());
  return wrap(n);
}

// Topologically ordered view of the DAG reachable from a root, with a
// deterministic reverse sweep for gradients.
class Graph {
 public:
  static Graph build(const Tensor& root) {
    if (!root.defined()) throw DimensionError("Graph::build: undefined root");
    Graph g;
    g.root_ = root.node();
    // Iterative post-order DFS; children are visited in input order, so the
    // resulting order (and thus gradient accumulation order) is fixed.
    std::vector<std::pair<detail::Node*, size_t>> stack;
    std::unordered_map<detail::Node*, char> state;  // 1 = on stack, 2 = done
    stack.emplace_back(g.root_.get(), 0);
    state[g.root_.get()] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->in.size()) {
        detail::Node* child = node->in[next++].get();
        auto it = state.find(child);
        if (it == state.end()) {
          state[child] = 1;
          stack.emplace_back(child, 0);
        }
      } else {
        state[node] = 2;
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }

  size_t size() const { return order_.size(); }

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every node of
  // the graph that can reach a requires_grad leaf. Gradients of nodes in the
  // graph are reset first, so repeated calls are idempotent.
  void backward() {
    if (root_->numel() != 1) throw DimensionError("backward: root must be a scalar");
    for (detail::Node* n : order_)
      if (n->needs_grad) n->grad.assign(n->numel(), 0.0);
    if (!root_->needs_grad) return;
    root_->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node* n = *it;
      if (n->needs_grad) backprop(n);
    }
  }

 private:
  static void backprop(detail::Node* n) {
    using detail::Node;
    auto needs = [](const std::shared_ptr<Node>& p) { return p->needs_grad; };
    const std::vector<double>& g = n->grad;
    switch (n->op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        for (int s = 0; s < 2; ++s)
          if (needs(n->in[s])) {
            auto& d = n->in[s]->grad;
            for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
          }
        break;
      }
      case Op::AddRow: {
        size_t cols = static_cast<size_t>(n->shape.back());
        size_t rows = n->numel() / cols;
        if (needs(n->in[0])) {
          auto& d = n->in[0]->grad;
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (needs(n->in[1])) {
          auto& d = n->in[1]->grad;
          for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
        }
        break;
      }
      case Op::Mul: {
        const auto& a = n->in[0]->val;
        const auto& b = n->in[1]->val;
        if (needs(n->in[0])) {
          auto& d = n->in[0]->grad;
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
        }
        if (needs(n->in[1])) {
          auto& d = n->in[1]->grad;
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
        }
        break;
      }
      case Op::Scale: {
        if (needs(n->in[0])) {
          auto& d = n->in[0]->grad;
          for (size_t i = 0; i < g.size(); ++i) d[i] += n->c0 * g[i];
        }
        break;
      }
      case Op::Matmul: {
        int m = n->shape[0], q = n->shape[1], p = n->in[0]->shape[1];
        const auto& a = n->in[0]->val;
        const auto& b = n->in[1]->val;
        if (needs(n->in[0])) {  // da = g * b^T
          auto& d = n->in[0]->grad;
          for (int i = 0; i < m; ++i)
            for (int k = 0; k < p; ++k) {
              double s = 0.0;
              const double* gr = g.data() + static_cast<size_t>(i) * q;
              const double* br = b.data() + static_cast<size_t>(k) * q;
              for (int j = 0; j < q; ++j) s += gr[j] * br[j];
              d[static_cast<size_t>(i) * p + k] += s;
            }
        }
        if (needs(n->in[1])) {  // db = a^T * g
          auto& d = n->in[1]->grad;
          for (int i = 0; i < m; ++i)
            for (int k = 0; k < p; ++k) {
              double s = a[static_cast<size_t>(i) * p + k];
              if (s == 0.0) continue;
              const double* gr = g.data() + static_cast<size_t>(i) * q;
              double* dr = d.data() + static_cast<size_t>(k) * q;
              for (int j = 0; j < q; ++j) dr[j] += s * gr[j];
            }
        }
        break;
      }
      case Op::MatmulNT: {
        int m = n->shape[0], q = n->shape[1], p = n->in[0]->shape[1];
        const auto& a = n->in[0]->val;
        const auto& b = n->in[1]->val;
        if (needs(n->in[0])) {  // da = g * b
          auto& d = n->in[0]->grad;
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < q; ++j) {
              double s = g[static_cast<size_t>(i) * q + j];
              if (s == 0.0) continue;
              const double* br = b.data() + static_cast<size_t>(j) * p;
              double* dr = d.data() + static_cast<size_t>(i) * p;
              for (int k = 0; k < p; ++k) dr[k] += s * br[k];
            }
        }
        if (needs(n->in[1])) {  // db = g^T * a
          auto& d = n->in[1]->grad;
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < q; ++j) {
              double s = g[static_cast<size_t>(i) * q + j];
              if (s == 0.0) continue;
              const double* ar = a.data() + static_cast<size_t>(i) * p;
              double* dr = d.data() + static_cast<size_t>(j) * p;
              for (int k = 0; k < p; ++k) dr[k] += s * ar[k];
            }
        }
        break;
      }
      case Op::Rows: {
        if (needs(n->in[0])) {
          int c = n->shape[1];
          auto& d = n->in[0]->grad;
          for (size_t i = 0; i < n->idx.size(); ++i) {
            const double* gr = g.data() + i * static_cast<size_t>(c);
            double* dr = d.data() + static_cast<size_t>(n->idx[i]) * c;
            for (int j = 0; j < c; ++j) dr[j] += gr[j];
          }
        }
        break;
      }
      case Op::SliceCols: {
        if (needs(n->in[0])) {
          int r = n->shape[0], w = n->shape[1], c = n->in[0]->shape[1];
          auto& d = n->in[0]->grad;
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j) d[static_cast<size_t>(i) * c + n->i0 + j] += g[static_cast<size_t>(i) * w + j];
        }
        break;
      }
      case Op::SliceRows: {
        if (needs(n->in[0])) {
          int c = n->shape[1];
          auto& d = n->in[0]->grad;
          for (size_t i = 0; i < g.size(); ++i) d[static_cast<size_t>(n->i0) * c + i] += g[i];
        }
        break;
      }
      case Op::LayerNorm: {
        size_t cols = static_cast<size_t>(n->shape.back());
        size_t rows = n->numel() / cols;
        const auto& x = n->in[0]->val;
        const auto& gain = n->in[1]->val;
        for (size_t r = 0; r < rows; ++r) {
          double mean = n->aux[r * 2], rstd = n->aux[r * 2 + 1];
          const double* xr = x.data() + r * cols;
          const double* gr = g.data() + r * cols;
          double sum_gg = 0.0, sum_ggx = 0.0;
          for (size_t c = 0; c < cols; ++c) {
            double xhat = (xr[c] - mean) * rstd;
            double gg = gr[c] * gain[c];
            sum_gg += gg;
            sum_ggx += gg * xhat;
          }
          double inv = 1.0 / static_cast<double>(cols);
          if (needs(n->in[0])) {
            double* d = n->in[0]->grad.data() + r * cols;
            for (size_t c = 0; c < cols; ++c) {
              double xhat = (xr[c] - mean) * rstd;
              double gg = gr[c] * gain[c];
              d[c] += rstd * (gg - sum_gg * inv - xhat * sum_ggx * inv);
            }
          }
          if (needs(n->in[1])) {
            auto& d = n->in[1]->grad;
            for (size_t c = 0; c < cols; ++c) d[c] += gr[c] * ((xr[c] - mean) * rstd);
          }
          if (needs(n->in[2])) {
            auto& d = n->in[2]->grad;
            for (size_t c = 0; c < cols; ++c) d[c] += gr[c];
          }
        }
        break;
      }
      case Op::Gelu: {
        if (needs(n->in[0])) {
          const auto& x = n->in[0]->val;
          auto& d = n->in[0]->grad;
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * detail::gelu_bwd(x[i]);
        }
        break;
      }
      case Op::Softmax: {
        if (needs(n->in[0])) {
          int axis = n->i0;
          int len = n->shape[static_cast<size_t>(axis)];
          size_t inner = 1;
          for (size_t i = static_cast<size_t>(axis) + 1; i < n->shape.size(); ++i)
            inner *= static_cast<size_t>(n->shape[i]);
          size_t outer = n->numel() / (inner * static_cast<size_t>(len));
          const auto& y = n->val;
          auto& d = n->in[0]->grad;
          for (size_t o = 0; o < outer; ++o)
            for (size_t in = 0; in < inner; ++in) {
              size_t base = o * static_cast<size_t>(len) * inner + in;
              double dotgy = 0.0;
              for (int i = 0; i < len; ++i) {
                size_t at = base + static_cast<size_t>(i) * inner;
                dotgy += g[at] * y[at];
              }
              for (int i = 0; i < len; ++i) {
                size_t at = base + static_cast<size_t>(i) * inner;
                d[at] += y[at] * (g[at] - dotgy);
              }
            }
        }
        break;
      }
      case Op::CausalSoftmax: {
        if (needs(n->in[0])) {
          int sz = n->shape[0];
          const auto& y = n->val;
          auto& d = n->in[0]->grad;
          for (int i = 0; i < sz; ++i) {
            const double* yr = y.data() + static_cast<size_t>(i) * sz;
            const double* gr = g.data() + static_cast<size_t>(i) * sz;
            double* dr = d.data() + static_cast<size_t>(i) * sz;
            double dotgy = 0.0;
            for (int j = 0; j <= i; ++j) dotgy += gr[j] * yr[j];
            for (int j = 0; j <= i; ++j) dr[j] += yr[j] * (gr[j] - dotgy);
          }
        }
        break;
      }
      case Op::LogSoftmax: {
        if (needs(n->in[0])) {
          size_t cols = static_cast<size_t>(n->shape.back());
          size_t rows = n->numel() / cols;
          const auto& y = n->val;
          auto& d = n->in[0]->grad;
          for (size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * cols;
            const double* gr = g.data() + r * cols;
            double* dr = d.data() + r * cols;
            double sum_g = 0.0;
            for (size_t c = 0; c < cols; ++c) sum_g += gr[c];
            for (size_t c = 0; c < cols; ++c) dr[c] += gr[c] - std::exp(yr[c]) * sum_g;
          }
        }
        break;
      }
      case Op::CrossEntropy: {
        if (needs(n->in[0])) {
          int r = n->in[0]->shape[0], c = n->in[0]->shape[1];
          const auto& x = n->in[0]->val;
          auto& d = n->in[0]->grad;
          double gs = g[0] / static_cast<double>(r);
          // Softmax rows are recomputed here rather than kept from the
          // forward pass; saving them would dominate graph memory.
          for (int i = 0; i < r; ++i) {
            const double* xr = x.data() + static_cast<size_t>(i) * c;
            double* dr = d.data() + static_cast<size_t>(i) * c;
            double m = xr[0];
            for (int j = 1; j < c; ++j) m = std::max(m, xr[j]);
            double z = 0.0;
            for (int j = 0; j < c; ++j) z += std::exp(xr[j] - m);
            for (int j = 0; j < c; ++j) dr[j] += gs * (std::exp(xr[j] - m) / z);
            dr[n->idx[static_cast<size_t>(i)]] -= gs;
          }
        }
        break;
      }
      case Op::Sum: {
        if (needs(n->in[0])) {
          auto& d = n->in[0]->grad;
          for (double& v : d) v += g[0];
        }
        break;
      }
      case Op::Mean: {
        if (needs(n->in[0])) {
          auto& d = n->in[0]->grad;
          double gs = g[0] / static_cast<double>(d.size());
          for (double& v : d) v += gs;
        }
        break;
      }
    }
  }

  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
};

inline void backward(const Tensor& loss) { Graph::build(loss).backward(); }

// Central-difference gradient check. `f` must rebuild the graph from the
// current contents of `x` on every call. Returns the max elementwise error
// |analytic - numeric| / max(1, |analytic|).
inline double grad_check(const std::function<Tensor()>& f, Tensor x, double eps = 1e-5) {
  Tensor y = f();
  backward(y);
  if (x.grad().size() != x.size()) throw NumericError("grad_check: x received no gradient");
  std::vector<double> analytic = x.grad();
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x.data()[i];
    x.data()[i] = keep + eps;
    double up = f().item();
    x.data()[i] = keep - eps;
    double down = f().item();
    x.data()[i] = keep;
    double numeric = (up - down) / (2.0 * eps);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace backpack
