#include "finehash/solver.hpp"

#include <cmath>
#include <string>

#include "finehash/rng.hpp"

namespace finehash {

namespace {
constexpr double kProxyRidge = 1e-6;
}

Mat one_hot_labels(const std::vector<int>& labels, std::size_t num_classes) {
  Mat y(num_classes, labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw DataError("one_hot_labels: class id " + std::to_string(c) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    y(static_cast<std::size_t>(c), i) = 1.0;
  }
  return y;
}

SolverState init_solver(const Mat& y, std::size_t k, const SolverConfig& config) {
  if (k == 0) throw ConfigError("init_solver: code length must be >= 1");
  const std::size_t l = y.rows, n = y.cols;
  Rng rng(seed_combine({config.seed, 0x636f646573ULL}));
  Mat proj(k, l);
  for (double& v : proj.a) v = static_cast<double>(rng.sign());

  SolverState st;
  st.codes = Mat(k, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < k; ++b) {
      double acc = 0.0;
      for (std::size_t j = 0; j < l; ++j) acc += proj(b, j) * y(j, i);
      st.codes(b, i) = acc >= 0.0 ? 1.0 : -1.0;
    }
  }
  st.relaxed = st.codes;
  st.rotation = Mat::identity(k);
  st.proxies = update_proxies(y, st.relaxed);
  return st;
}

Mat update_proxies(const Mat& y, const Mat& e) {
  if (y.cols != e.cols) {
    throw ShapeError("update_proxies: Y has " + std::to_string(y.cols) + " columns, E has " +
                     std::to_string(e.cols));
  }
  const std::size_t k = e.rows;
  Mat gram = matmul(e, transpose(e));
  for (std::size_t i = 0; i < k; ++i) gram(i, i) += kProxyRidge;
  // D^T = (E E^T + eps I)^{-1} E Y^T
  Mat rhs = matmul(e, transpose(y));
  return transpose(solve_spd(gram, rhs));
}

Mat update_relaxed(const Mat& y, const Mat& d, const Mat& o, const Mat& c, double sigma) {
  const std::size_t k = d.cols;
  Mat lhs = matmul(transpose(d), d);
  for (std::size_t i = 0; i < k; ++i) lhs(i, i) += sigma;
  Mat rhs = matmul(transpose(d), y);
  Mat oc = matmul(transpose(o), c);
  for (std::size_t i = 0; i < rhs.a.size(); ++i) rhs.a[i] += sigma * oc.a[i];
  return solve_spd(lhs, rhs);
}

Mat update_rotation(const Mat& c, const Mat& e) {
  Mat cross = matmul(c, transpose(e));
  SvdResult svd = svd_small(cross);
  return matmul(svd.u, transpose(svd.v));
}

Mat update_codes(const Mat& o, const Mat& e) {
  Mat oe = matmul(o, e);
  for (double& v : oe.a) v = v >= 0.0 ? 1.0 : -1.0;
  return oe;
}

double objective(const Mat& y, const Mat& d, const Mat& e, const Mat& o, const Mat& c,
                 double sigma) {
  const double fit = frobenius_sq(matsub(y, matmul(d, e)));
  const double quant = frobenius_sq(matsub(c, matmul(o, e)));
  return fit + sigma * quant;
}

SolveResult solve(const Mat& y, std::size_t k, const SolverConfig& config) {
  if (config.sigma <= 0.0) throw ConfigError("solve: sigma must be positive");
  if (config.tol <= 0.0) throw ConfigError("solve: tol must be positive");

  SolverState st = init_solver(y, k, config);
  SolveStats stats;
  stats.objective_trace.push_back(objective(y, st.proxies, st.relaxed, st.rotation, st.codes,
                                            config.sigma));

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    st.proxies = update_proxies(y, st.relaxed);
    st.relaxed = update_relaxed(y, st.proxies, st.rotation, st.codes, config.sigma);

    // Rotation step, with its optimality certificate: the achieved alignment
    // trace(O E C^T) must match the nuclear norm of C E^T.
    Mat cross = matmul(st.codes, transpose(st.relaxed));
    SvdResult svd = svd_small(cross);
    st.rotation = matmul(svd.u, transpose(svd.v));
    double nuclear = 0.0;
    for (double s : svd.s) nuclear += s;
    const double aligned = trace_of_product(matmul(st.rotation, st.relaxed), transpose(st.codes));
    const double scale = std::max(1.0, nuclear);
    stats.max_certificate_gap =
        std::max(stats.max_certificate_gap, std::abs(aligned - nuclear) / scale);
    Mat oot = matmul(st.rotation, transpose(st.rotation));
    for (std::size_t i = 0; i < k; ++i) oot(i, i) -= 1.0;
    stats.max_orthogonality_error =
        std::max(stats.max_orthogonality_error, std::sqrt(frobenius_sq(oot)));

    st.codes = update_codes(st.rotation, st.relaxed);

    const double obj = objective(y, st.proxies, st.relaxed, st.rotation, st.codes, config.sigma);
    const double prev = stats.objective_trace.back();
    stats.objective_trace.push_back(obj);
    stats.iterations = iter + 1;
    if (prev - obj < config.tol * std::max(prev, 1e-12)) break;
  }

  stats.final_objective = stats.objective_trace.back();
  SolveResult res;
  res.codes = st.codes;
  res.proxies = st.proxies;
  res.stats = std::move(stats);
  return res;
}

}  // namespace finehash
