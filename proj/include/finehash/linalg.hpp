#pragma once

#include <cstddef>
#include <vector>

#include "finehash/errors.hpp"

namespace finehash {

// Row-major dense matrix for the solver-scale problems (k <= 64 on the square
// side). Not a general linear-algebra library; just what the alternating
// minimization needs.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> values);

  static Mat identity(std::size_t n);

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

Mat matmul(const Mat& x, const Mat& y);
Mat transpose(const Mat& x);
Mat matsub(const Mat& x, const Mat& y);
double frobenius_sq(const Mat& x);
double trace_of_product(const Mat& x, const Mat& y);  // trace(x * y), y = cols x rows

// Solves a*X = b for symmetric positive definite a (k x k), b (k x nrhs).
// The input is symmetrized first; if the Cholesky factorization hits a
// nonpositive pivot the diagonal is ridged at escalating levels before
// giving up with SingularError.
Mat solve_spd(const Mat& a, const Mat& b);

struct SvdResult {
  Mat u;
  std::vector<double> s;  // descending, nonnegative
  Mat v;
};

// One-sided Jacobi SVD for square matrices up to 64 x 64:
// m = u * diag(s) * v^T with orthonormal u, v.
SvdResult svd_small(const Mat& m);

}  // namespace finehash
