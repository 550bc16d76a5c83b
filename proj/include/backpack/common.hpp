#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace backpack {

// Error taxonomy, mapped to CLI exit codes (usage=1, data=2, numeric=3).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : DataError {
  using DataError::DataError;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic, platform-independent RNG (splitmix64). The state is a single
// u64 so it serializes into checkpoint headers trivially.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; stateless beyond the u64 counter.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Fisher-Yates index for shuffling: uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

// Plain value matrix for inference-side math (reductions, cosines,
// projections). The autodiff Tensor in tensor.hpp is for training paths.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
};

inline Matrix matmul(const Matrix& x, const Matrix& y) {
  if (x.cols != y.rows) throw DimensionError("matmul: inner dimensions disagree");
  Matrix out(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      double s = x.at(i, k);
      for (int j = 0; j < y.cols; ++j) out.at(i, j) += s * y.at(k, j);
    }
  return out;
}

// x * y^T
inline Matrix matmul_nt(const Matrix& x, const Matrix& y) {
  if (x.cols != y.cols) throw DimensionError("matmul_nt: inner dimensions disagree");
  Matrix out(x.rows, y.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < y.rows; ++j) {
      double s = 0.0;
      for (int k = 0; k < x.cols; ++k) s += x.at(i, k) * y.at(j, k);
      out.at(i, j) = s;
    }
  return out;
}

inline std::vector<double> matvec(const Matrix& m, std::span<const double> v) {
  if (m.cols != static_cast<int>(v.size())) throw DimensionError("matvec: dimension mismatch");
  std::vector<double> out(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m.at(i, j) * v[j];
    out[i] = s;
  }
  return out;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2_sq(std::span<const double> x) { return dot(x, x); }

inline void softmax_inplace(std::span<double> x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : x) v /= z;
}

}  // namespace backpack
