#include "finehash/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace finehash {

Mat::Mat(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), a(std::move(values)) {
  if (a.size() != r * c) {
    throw ShapeError("Mat: " + std::to_string(r) + "x" + std::to_string(c) + " needs " +
                     std::to_string(r * c) + " values, got " + std::to_string(a.size()));
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) {
    throw ShapeError("matmul: " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                     " times " + std::to_string(y.rows) + "x" + std::to_string(y.cols));
  }
  Mat out(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double v = x(i, k);
      if (v == 0.0) continue;
      const double* yrow = y.a.data() + k * y.cols;
      double* orow = out.a.data() + i * out.cols;
      for (std::size_t j = 0; j < y.cols; ++j) orow[j] += v * yrow[j];
    }
  }
  return out;
}

Mat transpose(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
  }
  return out;
}

Mat matsub(const Mat& x, const Mat& y) {
  if (!x.same_shape(y)) throw ShapeError("matsub: shape mismatch");
  Mat out = x;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] -= y.a[i];
  return out;
}

double frobenius_sq(const Mat& x) {
  double acc = 0.0;
  for (double v : x.a) acc += v * v;
  return acc;
}

double trace_of_product(const Mat& x, const Mat& y) {
  if (x.cols != y.rows || x.rows != y.cols) {
    throw ShapeError("trace_of_product: incompatible shapes");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < x.cols; ++k) acc += x(i, k) * y(k, i);
  }
  return acc;
}

namespace {

// In-place Cholesky a = L L^T on the lower triangle; false on nonpositive pivot.
bool cholesky(Mat& a) {
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  return true;
}

// Solves L L^T x = b per column, overwriting x.
void cholesky_solve(const Mat& l, Mat& x) {
  const std::size_t n = l.rows, m = x.cols;
  for (std::size_t c = 0; c < m; ++c) {
    // forward
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    // backward with L^T
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
}

}  // namespace

Mat solve_spd(const Mat& a, const Mat& b) {
  if (a.rows != a.cols) throw ShapeError("solve_spd: matrix must be square");
  if (a.rows != b.rows) {
    throw ShapeError("solve_spd: a is " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     ", b has " + std::to_string(b.rows) + " rows");
  }
  const std::size_t n = a.rows;
  Mat sym(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sym(i, j) = 0.5 * (a(i, j) + a(j, i));
  }
  double diag_scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) diag_scale += std::abs(sym(i, i));
  diag_scale = std::max(diag_scale / static_cast<double>(n), 1e-300);

  const double levels[] = {0.0, 1e-10, 1e-8, 1e-6};
  for (double level : levels) {
    Mat fac = sym;
    for (std::size_t i = 0; i < n; ++i) fac(i, i) += level * diag_scale;
    if (!cholesky(fac)) continue;
    Mat x = b;
    cholesky_solve(fac, x);
    // one refinement step against the unridged matrix
    Mat r = matsub(b, matmul(sym, x));
    Mat corr = r;
    cholesky_solve(fac, corr);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += corr.a[i];
    return x;
  }
  throw SingularError("solve_spd: factorization failed after ridge escalation to 1e-6");
}

SvdResult svd_small(const Mat& m) {
  if (m.rows != m.cols) throw ShapeError("svd_small: matrix must be square");
  const std::size_t n = m.rows;
  if (n > 64) throw UsageError("svd_small: supports sizes up to 64, got " + std::to_string(n));

  SvdResult res;
  Mat u = m;
  Mat v = Mat::identity(n);

  // Cyclic one-sided Jacobi: repeatedly orthogonalize column pairs of u while
  // accumulating rotations into v, so m = u_final * v^T with u_final having
  // orthogonal columns.
  const std::size_t max_sweeps = 100;
  const double tol = 1e-14;
  double worst = 0.0;
  bool converged = (n <= 1);
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    worst = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double up = u(i, p), uq = u(i, q);
          alpha += up * up;
          beta += uq * uq;
          gamma += up * uq;
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        const double scale = std::sqrt(alpha * beta);
        worst = std::max(worst, std::abs(gamma) / scale);
        if (std::abs(gamma) <= tol * scale) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double up = u(i, p), uq = u(i, q);
          u(i, p) = c * up - s * uq;
          u(i, q) = s * up + c * uq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged) {
    throw NumericError("svd_small: Jacobi sweeps exhausted, max off-diagonal ratio " +
                       std::to_string(worst));
  }

  std::vector<double> norms(n);
  double smax = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += u(i, j) * u(i, j);
    norms[j] = std::sqrt(acc);
    smax = std::max(smax, norms[j]);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  res.u = Mat(n, n);
  res.v = Mat(n, n);
  res.s.resize(n);
  const double tiny = (smax > 0.0 ? smax : 1.0) * 1e-300;
  std::vector<bool> filled(n, false);
  std::vector<std::size_t> deficient;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    res.s[j] = norms[src];
    for (std::size_t i = 0; i < n; ++i) res.v(i, j) = v(i, src);
    if (norms[src] > tiny) {
      for (std::size_t i = 0; i < n; ++i) res.u(i, j) = u(i, src) / norms[src];
      filled[j] = true;
    } else {
      deficient.push_back(j);
    }
  }
  // Complete rank-deficient columns to an orthonormal basis via Gram-Schmidt
  // over identity candidates (the zero matrix yields the identity).
  for (std::size_t j : deficient) {
    for (std::size_t cand = 0; cand < n; ++cand) {
      std::vector<double> col(n, 0.0);
      col[cand] = 1.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!filled[k]) continue;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += res.u(i, k) * col[i];
        for (std::size_t i = 0; i < n; ++i) col[i] -= dot * res.u(i, k);
      }
      double nrm = 0.0;
      for (double x : col) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < n; ++i) res.u(i, j) = col[i] / nrm;
        filled[j] = true;
        break;
      }
    }
  }
  return res;
}

}  // namespace finehash
