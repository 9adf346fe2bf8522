#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dart/error.hpp"

namespace dart {

using Vector = std::vector<float>;

/// Dense row-major float matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require_dims(data_.size() == rows_ * cols_, "Matrix: data length != rows * cols");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Append one row; used by the KV cache.
  void push_row(std::span<const float> r) {
    detail::require_dims(r.size() == cols_, "Matrix::push_row: width mismatch");
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Floating-point operation tally. A multiply-add counts as two.
struct FlopCounter {
  std::uint64_t flops = 0;
  void add(std::uint64_t n) { flops += n; }
};

inline void count(FlopCounter* counter, std::uint64_t n) {
  if (counter != nullptr) counter->add(n);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  detail::require_dims(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

inline double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

/// C = A * B, accumulated in double.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require_dims(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

/// Row vector times matrix: x (1 x rows) * m (rows x cols).
inline Vector vecmat(std::span<const float> x, const Matrix& m, FlopCounter* counter = nullptr) {
  detail::require_dims(x.size() == m.rows(), "vecmat: x.size != m.rows");
  std::vector<double> acc(m.cols(), 0.0);
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const double xk = x[k];
    const auto mrow = m.row(k);
    for (std::size_t j = 0; j < m.cols(); ++j) acc[j] += xk * mrow[j];
    count(counter, 2 * m.cols());
  }
  return Vector(acc.begin(), acc.end());
}

inline Vector softmax(std::span<const float> v) {
  if (v.empty()) throw DimensionError("softmax: empty input");
  const float hi = *std::max_element(v.begin(), v.end());
  std::vector<double> e(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(static_cast<double>(v[i]) - hi);
    sum += e[i];
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

inline float silu(float x) { return static_cast<float>(x / (1.0 + std::exp(-static_cast<double>(x)))); }

inline Vector silu(std::span<const float> v) {
  Vector out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](float x) { return silu(x); });
  return out;
}

inline Vector hadamard(std::span<const float> a, std::span<const float> b) {
  detail::require_dims(a.size() == b.size(), "hadamard: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Vector add(std::span<const float> a, std::span<const float> b) {
  detail::require_dims(a.size() == b.size(), "add: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Vector sub(std::span<const float> a, std::span<const float> b) {
  detail::require_dims(a.size() == b.size(), "sub: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Vector scale(std::span<const float> a, float s) {
  Vector out(a.begin(), a.end());
  for (auto& x : out) x *= s;
  return out;
}

/// Root-mean-square normalization with unit gain.
inline Vector rms_norm(std::span<const float> x, double eps = 1e-5) {
  const double ms = x.empty() ? 0.0 : dot(x, x) / static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * inv);
  return out;
}

struct CosineResult {
  float value = 0.0f;
  /// Set when either argument has zero norm; value is then 0.
  bool degenerate = false;
};

inline CosineResult cosine_checked(std::span<const float> a, std::span<const float> b) {
  detail::require_dims(a.size() == b.size(), "cosine: length mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return {0.0f, true};
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return {static_cast<float>(c), false};
}

inline float cosine(std::span<const float> a, std::span<const float> b) { return cosine_checked(a, b).value; }

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace dart
