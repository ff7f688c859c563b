#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "alp/rng.h"

namespace alp::nncore {

// Dense row-major tensor. Rank is dynamic but almost everything in the engine
// is a matrix [rows x cols] or a row vector [1 x cols].
template <class S>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(std::vector<int64_t> sh) : shape(std::move(sh)) {
    data.assign(size_t(numel()), S(0));
  }
  TensorT(int64_t rows, int64_t cols) : TensorT(std::vector<int64_t>{rows, cols}) {}

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  S& at(int64_t r, int64_t c) { return data[size_t(r * cols() + c)]; }
  S at(int64_t r, int64_t c) const { return data[size_t(r * cols() + c)]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(S(0)); }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  void add_scaled(const TensorT& o, S k) {
    for (size_t i = 0; i < data.size(); ++i) data[i] += k * o.data[i];
  }

  static TensorT randn(std::vector<int64_t> sh, Rng& rng, double sigma) {
    TensorT t(std::move(sh));
    for (S& v : t.data) v = S(rng.truncated_gauss(sigma));
    return t;
  }

  static TensorT from_rows(const std::vector<std::vector<S>>& rows_in) {
    if (rows_in.empty()) throw std::invalid_argument("from_rows: empty");
    TensorT t(int64_t(rows_in.size()), int64_t(rows_in[0].size()));
    for (size_t r = 0; r < rows_in.size(); ++r) {
      if (rows_in[r].size() != rows_in[0].size())
        throw std::invalid_argument("from_rows: ragged rows");
      for (size_t c = 0; c < rows_in[r].size(); ++c) t.data[r * rows_in[0].size() + c] = rows_in[r][c];
    }
    return t;
  }

  template <class T2>
  TensorT<T2> cast() const {
    TensorT<T2> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = T2(data[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int64_t>& sh) {
  std::string s = "[";
  for (size_t i = 0; i < sh.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(sh[i]);
  }
  return s + "]";
}

// C = A * B for row-major matrices, accumulating into C (caller zeroes).
// i-k-j ordering keeps the inner loop contiguous in both B and C.
template <class S>
void matmul_acc(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B, with A [k x m], B [k x n], C [m x n]
template <class S>
void matmul_at_b_acc(const S* a, const S* b, S* c, int64_t k, int64_t m, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const S av = arow[i];
      if (av == S(0)) continue;
      S* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T, with A [m x k], B [n x k], C [m x n]
template <class S>
void matmul_a_bt_acc(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc = S(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace alp::nncore
