#include "finehash/losses.hpp"

#include <cmath>
#include <string>

namespace finehash {

SmoothedLabels smooth_labels(const Tensor& one_hot, double lambda, std::size_t num_classes) {
  if (one_hot.rank() != 2 || one_hot.shape()[1] != num_classes) {
    throw ShapeError("smooth_labels: expected [N x " + std::to_string(num_classes) + "], got " +
                     shape_str(one_hot.shape()));
  }
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw ValidationError("smooth_labels: lambda must be in [0, 1), got " + std::to_string(lambda));
  }
  const std::size_t n = one_hot.shape()[0], l = num_classes;
  const auto& v = one_hot.values();
  std::vector<double> out(n * l);
  const double off = lambda / static_cast<double>(l);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < l; ++k) {
      const double y = v[i * l + k];
      if (y == 1.0) {
        ++ones;
      } else if (y != 0.0) {
        throw ValidationError("smooth_labels: row " + std::to_string(i) + " is not one-hot");
      }
      out[i * l + k] = y * (1.0 - lambda) + off;
    }
    if (ones != 1) {
      throw ValidationError("smooth_labels: row " + std::to_string(i) + " has " +
                            std::to_string(ones) + " ones");
    }
  }
  SmoothedLabels s;
  s.rows = Tensor::from_vector({n, l}, std::move(out), false);
  s.lambda = lambda;
  return s;
}

ClassificationLoss classification_loss(Tape& tape, const std::optional<Tensor>& logits_org,
                                       const std::optional<Tensor>& logits_aug,
                                       const SmoothedLabels& targets) {
  ClassificationLoss out;
  std::vector<Tensor> terms;
  if (logits_org) {
    out.org = softmax_cross_entropy(tape, *logits_org, targets.rows);
    terms.push_back(*out.org);
  }
  if (logits_aug) {
    out.aug = softmax_cross_entropy(tape, *logits_aug, targets.rows);
    terms.push_back(*out.aug);
  }
  if (terms.empty()) {
    out.combined = Tensor::scalar(0.0);
  } else if (terms.size() == 1) {
    out.combined = terms[0];
  } else {
    out.combined = scale(tape, add(tape, terms[0], terms[1]), 0.5);
  }
  return out;
}

Tensor hash_regression_loss(Tape& tape, const Tensor& h_global, const Mat& codes,
                            std::span<const std::size_t> sample_indices) {
  if (h_global.rank() != 2) {
    throw ShapeError("hash_regression_loss: expected [N x k], got " + shape_str(h_global.shape()));
  }
  const std::size_t n = h_global.shape()[0], k = h_global.shape()[1];
  if (sample_indices.size() != n) {
    throw UsageError("hash_regression_loss: " + std::to_string(sample_indices.size()) +
                     " indices for batch of " + std::to_string(n));
  }
  if (codes.rows != k) {
    throw ShapeError("hash_regression_loss: codes have " + std::to_string(codes.rows) +
                     " bits, projection has " + std::to_string(k));
  }
  std::vector<double> target(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = sample_indices[i];
    if (idx >= codes.cols) {
      throw DataError("hash_regression_loss: sample index " + std::to_string(idx) +
                      " outside code table of " + std::to_string(codes.cols));
    }
    for (std::size_t b = 0; b < k; ++b) target[i * k + b] = codes(b, idx);
  }
  Tensor c = Tensor::from_vector({n, k}, std::move(target), false);
  Tensor diff = add(tape, h_global, scale(tape, c, -1.0));
  Tensor sq = mul(tape, diff, diff);
  return scale(tape, sum(tape, sq), 1.0 / static_cast<double>(n));
}

namespace {

// softplus^{-1}(y) for y > 0
double inverse_softplus(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

LossWeights::LossWeights(double alpha_init, double beta_init, bool learnable) {
  if (alpha_init <= kFloor || beta_init <= kFloor) {
    throw ConfigError("LossWeights: initial weights must exceed the positivity floor");
  }
  raw_a_ = Tensor::scalar(inverse_softplus(alpha_init - kFloor), learnable);
  raw_b_ = Tensor::scalar(inverse_softplus(beta_init - kFloor), learnable);
}

Tensor LossWeights::alpha(Tape& tape) const {
  return add_scalar(tape, softplus(tape, raw_a_), kFloor);
}

Tensor LossWeights::beta(Tape& tape) const {
  return add_scalar(tape, softplus(tape, raw_b_), kFloor);
}

double LossWeights::alpha_value() const { return softplus_value(raw_a_.item()) + kFloor; }
double LossWeights::beta_value() const { return softplus_value(raw_b_.item()) + kFloor; }

Tensor total_balanced_loss(Tape& tape, const Tensor& l_hash, const Tensor& l_cls,
                           const LossWeights& weights) {
  Tensor a = weights.alpha(tape);
  Tensor b = weights.beta(tape);
  Tensor hash_term = mul(tape, l_hash, pow_scalar(tape, a, -2.0));
  Tensor cls_term = mul(tape, l_cls, pow_scalar(tape, b, -2.0));
  Tensor reg = add(tape, log_elem(tape, add_scalar(tape, a, 1.0)),
                   log_elem(tape, add_scalar(tape, b, 1.0)));
  return add(tape, add(tape, hash_term, cls_term), reg);
}

Tensor total_fixed_loss(Tape& tape, const Tensor& l_hash, const Tensor& l_cls) {
  return add(tape, l_hash, l_cls);
}

double stationary_alpha(double l_hash) {
  if (!(l_hash > 0.0)) throw ValidationError("stationary_alpha: loss must be positive");
  auto g = [l_hash](double a) { return a * a * a - 2.0 * l_hash * (a + 1.0); };
  double lo = 0.0;
  double hi = 1.0;
  while (g(hi) < 0.0) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace finehash
