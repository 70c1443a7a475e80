#pragma once

#include <cstdint>
#include <vector>

#include "finehash/linalg.hpp"

namespace finehash {

// Pre-training discrete code optimization:
//   min_{D,E,O,C} ||Y - D E||_F^2 + sigma ||C - O E||_F^2
//   s.t. C in {-1,+1}^{k x n}, O O^T = I
// solved by exact alternating block updates D -> E -> O -> C.

struct SolverConfig {
  double sigma = 1.0;
  std::size_t max_iters = 100;
  double tol = 1e-6;  // relative objective decrease
  std::uint64_t seed = 0;
};

struct SolverState {
  Mat proxies;   // D, l x k
  Mat relaxed;   // E, k x n
  Mat rotation;  // O, k x k
  Mat codes;     // C, k x n, entries exactly +-1
};

struct SolveStats {
  std::vector<double> objective_trace;  // initial value plus one per iteration
  std::size_t iterations = 0;
  double final_objective = 0.0;
  // Procrustes certificate, tracked after every rotation update:
  // trace(O E C^T) must equal the nuclear norm of C E^T.
  double max_certificate_gap = 0.0;
  double max_orthogonality_error = 0.0;
};

struct SolveResult {
  Mat codes;    // k x n
  Mat proxies;  // l x k
  SolveStats stats;
};

// One-hot label matrix Y (l x n) from dense class ids in [0, num_classes).
Mat one_hot_labels(const std::vector<int>& labels, std::size_t num_classes);

// O = I; C_i = sign(P Y_i) for a seeded +-1 projection P (k x l), so columns
// with equal labels start equal; E = C; D from one proxy update.
SolverState init_solver(const Mat& y, std::size_t k, const SolverConfig& config);

// D = Y E^T (E E^T + eps I)^{-1}, ridge eps = 1e-6.
Mat update_proxies(const Mat& y, const Mat& e);

// E = (D^T D + sigma I)^{-1} (D^T Y + sigma O^T C).
Mat update_relaxed(const Mat& y, const Mat& d, const Mat& o, const Mat& c, double sigma);

// Orthogonal Procrustes: svd(C E^T) = U S V^T, O = U V^T.
Mat update_rotation(const Mat& c, const Mat& e);

// C = sign(O E), sign(0) = +1.
Mat update_codes(const Mat& o, const Mat& e);

double objective(const Mat& y, const Mat& d, const Mat& e, const Mat& o, const Mat& c,
                 double sigma);

SolveResult solve(const Mat& y, std::size_t k, const SolverConfig& config);

}  // namespace finehash
