#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace refex {

/// Dense row-major matrix of doubles. Column vectors are n x 1.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }

  static Mat scalar(double x) {
    Mat m(1, 1);
    m.a[0] = x;
    return m;
  }

  static Mat column(const std::vector<double>& v) {
    Mat m(static_cast<int>(v.size()), 1);
    m.a = v;
    return m;
  }

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  int size() const { return rows * cols; }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double x) { std::fill(a.begin(), a.end(), x); }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

inline Mat onehot_column(int dim, int index) {
  if (index < 0 || index >= dim) throw std::invalid_argument("onehot_column: index out of range");
  Mat m(dim, 1);
  m.a[static_cast<std::size_t>(index)] = 1.0;
  return m;
}

// index of the largest entry of a column vector, first on ties
inline int argmax_column(const Mat& m) {
  int best = 0;
  for (int i = 1; i < m.rows; ++i)
    if (m.a[static_cast<std::size_t>(i)] > m.a[static_cast<std::size_t>(best)]) best = i;
  return best;
}

}  // namespace refex
