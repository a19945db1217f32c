#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcp {

// Dense row-major matrix of doubles. The only tensor type in the library;
// vectors are n x 1 or 1 x n matrices, scalars are 1 x 1.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 0.0); }

  static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
  }

  static Matrix from_rows(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
      throw std::invalid_argument("Matrix::from_rows: got " + std::to_string(values.size()) +
                                  " values for shape " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_ = std::move(values);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                              b.shape_str());
}

// Smallest positive value fed to log/reciprocal so kernels stay finite on
// finite inputs.
inline constexpr double kLogFloor = 1e-300;

}  // namespace detail

// sigmoid(x) = 1/(1+e^-x), branch form so exp never overflows.
inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  Matrix c(a.rows(), b.cols(), 0.0);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;  // adjacency operands are mostly zero
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

// A^T * B without materializing the transpose.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) detail::shape_error("matmul_at_b", a, b);
  Matrix c(a.cols(), b.cols(), 0.0);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c.row(p);
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
  return c;
}

// A * B^T without materializing the transpose.
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) detail::shape_error("matmul_a_bt", a, b);
  Matrix c(a.rows(), b.rows(), 0.0);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
  return c;
}

// Elementwise add; b may be a 1 x cols row vector broadcast over a's rows.
inline Matrix add(const Matrix& a, const Matrix& b) {
  if (a.same_shape(b)) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Matrix c = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) += b(0, j);
    return c;
  }
  detail::shape_error("add", a, b);
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
  if (a.same_shape(b)) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Matrix c = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) -= b(0, j);
    return c;
  }
  detail::shape_error("subtract", a, b);
}

inline Matrix scale(const Matrix& a, double c) {
  Matrix r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] *= c;
  return r;
}

inline Matrix divide_by_constant(const Matrix& a, double c) {
  if (c == 0.0) throw std::invalid_argument("divide-by-constant: divisor is zero");
  return scale(a, 1.0 / c);
}

inline Matrix elementwise_multiply(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) detail::shape_error("elementwise-multiply", a, b);
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

inline Matrix elementwise_divide(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) detail::shape_error("elementwise-divide", a, b);
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (b.data()[i] == 0.0) throw std::invalid_argument("elementwise-divide: divisor entry is zero");
    c.data()[i] /= b.data()[i];
  }
  return c;
}

// log clamped at kLogFloor so finite inputs give finite outputs.
inline Matrix elementwise_log(const Matrix& a) {
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double x = c.data()[i] < detail::kLogFloor ? detail::kLogFloor : c.data()[i];
    c.data()[i] = std::log(x);
  }
  return c;
}

inline Matrix elementwise_sigmoid(const Matrix& a) {
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = stable_sigmoid(c.data()[i]);
  return c;
}

inline Matrix relu(const Matrix& a) {
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.data()[i] < 0.0) c.data()[i] = 0.0;
  return c;
}

inline Matrix row_softmax(const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* x = a.row(i);
    double* y = c.row(i);
    double mx = x[0];
    for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] /= sum;
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix c(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(j, i) = a(i, j);
  return c;
}

inline Matrix gather_rows(const Matrix& a, const std::vector<std::size_t>& ids) {
  Matrix c(ids.size(), a.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= a.rows()) {
      throw std::invalid_argument("gather-rows: row id " + std::to_string(ids[i]) +
                                  " out of range for " + a.shape_str());
    }
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(ids[i], j);
  }
  return c;
}

inline Matrix sum_all(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  return Matrix::scalar(s);
}

inline Matrix mean_all(const Matrix& a) {
  if (a.size() == 0) throw std::invalid_argument("mean-all: empty matrix");
  return Matrix::scalar(sum_all(a)(0, 0) / static_cast<double>(a.size()));
}

}  // namespace rcp
