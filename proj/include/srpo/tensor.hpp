#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace srpo {

using Vector = std::vector<double>;
using VecView = std::span<const double>;
using MutVecView = std::span<double>;

// Dense row-major matrix. Rows are samples in batched code, output units in
// weight matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  MutVecView row_span(std::size_t r) { return {row(r), cols}; }
  VecView row_span(std::size_t r) const { return {row(r), cols}; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool operator==(const Matrix&) const = default;
};

inline double squared_norm(VecView v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace srpo
