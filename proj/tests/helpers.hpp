#pragma once

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "pisoflow/mesh.hpp"

namespace testutil {

inline std::vector<double> random_vector(std::size_t n, std::mt19937& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Dense Gaussian elimination with partial pivoting; row-major A.
inline std::vector<double> dense_solve(std::vector<double> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(A[i * n + k]) > std::abs(A[piv * n + k])) piv = i;
    for (std::size_t j = 0; j < n; ++j) std::swap(A[k * n + j], A[piv * n + j]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = A[i * n + k] / A[k * n + k];
      for (std::size_t j = k; j < n; ++j) A[i * n + j] -= f * A[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= A[i * n + j] * x[j];
    x[i] = s / A[i * n + i];
  }
  return x;
}

// Uniform box block with unit-free coordinates.
inline pisoflow::BlockSpec box(int nx, int ny, double lx = 1, double ly = 1) {
  return pisoflow::make_block(2, {pisoflow::uniform_coords(nx, 0, lx), pisoflow::uniform_coords(ny, 0, ly), {}});
}

inline pisoflow::BlockSpec box3(int nx, int ny, int nz, double lx = 1, double ly = 1, double lz = 1) {
  return pisoflow::make_block(3, {pisoflow::uniform_coords(nx, 0, lx), pisoflow::uniform_coords(ny, 0, ly),
                                  pisoflow::uniform_coords(nz, 0, lz)});
}

}  // namespace testutil
