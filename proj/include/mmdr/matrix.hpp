#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mmdr/error.hpp"
#include "mmdr/rng.hpp"

namespace mmdr {

// Dense row-major real matrix. T is float for compute, double for the
// gradient-check suites.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, T(0)) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, Errc::shape_mismatch,
            "matrix payload does not match rows*cols");
  }

  Matrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      require(row.size() == cols_, Errc::shape_mismatch, "ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* row(std::size_t r) { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const { return data_.data() + r * cols_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  static Matrix random_uniform(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
    Matrix m(r, c);
    for (auto& v : m.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return m;
  }

  static Matrix random_normal(std::size_t r, std::size_t c, Rng& rng, double stddev = 1.0) {
    Matrix m(r, c);
    for (auto& v : m.data_) v = static_cast<T>(rng.normal() * stddev);
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace detail {
inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}
}  // namespace detail

template <typename T>
void check_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  require(a.same_shape(b), Errc::shape_mismatch,
          std::string(op) + ": " + detail::shape_str(a.rows(), a.cols()) + " vs " +
              detail::shape_str(b.rows(), b.cols()));
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.cols() == b.rows(), Errc::shape_mismatch,
          "matmul: " + detail::shape_str(a.rows(), a.cols()) + " * " +
              detail::shape_str(b.rows(), b.cols()));
  Matrix<T> out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = out.row(i);
    const T* arow = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const T s = arow[p];
      const T* brow = b.row(p);
      for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  check_same_shape(a, b, "add");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

template <typename T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
  check_same_shape(a, b, "sub");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T s) {
  Matrix<T> out = a;
  for (auto& v : out.storage()) v *= s;
  return out;
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  check_same_shape(a, b, "hadamard");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

template <typename T>
T row_norm(const Matrix<T>& m, std::size_t r) {
  T acc = 0;
  const T* p = m.row(r);
  for (std::size_t j = 0; j < m.cols(); ++j) acc += p[j] * p[j];
  return std::sqrt(acc);
}

// Scales every row of m to unit Euclidean norm. Rows that are exactly zero
// cannot be normalized and raise ZeroRow with the offending index.
template <typename T>
Matrix<T> l2_normalize_rows(const Matrix<T>& m) {
  Matrix<T> out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    T norm = row_norm(m, r);
    require(norm > T(0), Errc::zero_row, "row " + std::to_string(r) + " has zero norm");
    T inv = T(1) / norm;
    T* p = out.row(r);
    for (std::size_t j = 0; j < m.cols(); ++j) p[j] *= inv;
  }
  return out;
}

// Row-wise softmax of m/temp with per-row max subtraction.
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& m, T temp) {
  require(temp > T(0), Errc::non_positive_temperature,
          "softmax temperature must be positive, got " + std::to_string(temp));
  Matrix<T> out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T* in = m.row(r);
    T* o = out.row(r);
    T mx = in[0];
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      o[j] = std::exp((in[j] - mx) / temp);
      sum += o[j];
    }
    T inv = T(1) / sum;
    for (std::size_t j = 0; j < m.cols(); ++j) o[j] *= inv;
  }
  return out;
}

namespace detail {
template <typename T>
void check_row_stochastic(const Matrix<T>& m, const char* name) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    T sum = 0;
    for (std::size_t j = 0; j < m.cols(); ++j) sum += m(r, j);
    require(std::abs(double(sum) - 1.0) <= 1e-4, Errc::non_stochastic_input,
            std::string(name) + " row " + std::to_string(r) + " sums to " +
                std::to_string(double(sum)));
  }
}
}  // namespace detail

// Sum over rows of KL(p_row || q_row); the 0*log0 = 0 convention, q clamped
// at 1e-12 before the log.
template <typename T>
double kl_rows(const Matrix<T>& p, const Matrix<T>& q) {
  check_same_shape(p, q, "kl_rows");
  detail::check_row_stochastic(p, "p");
  detail::check_row_stochastic(q, "q");
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pv = p.data()[i];
    if (pv <= 0) continue;
    double qv = std::max(double(q.data()[i]), 1e-12);
    acc += pv * std::log(pv / qv);
  }
  return acc;
}

template <typename T>
T sum(const Matrix<T>& m) {
  T acc = 0;
  for (const auto& v : m.storage()) acc += v;
  return acc;
}

template <typename T>
T mean(const Matrix<T>& m) {
  return sum(m) / static_cast<T>(m.size());
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  check_same_shape(a, b, "max_abs_diff");
  double mx = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    mx = std::max(mx, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return mx;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  for (const auto& v : m.storage())
    if (!std::isfinite(double(v))) return false;
  return true;
}

}  // namespace mmdr
