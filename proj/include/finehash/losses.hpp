#pragma once

#include <optional>
#include <span>
#include <vector>

#include "finehash/linalg.hpp"
#include "finehash/tensor.hpp"

namespace finehash {

// Targets after y*(1-lambda) + lambda/l applied to one-hot rows.
struct SmoothedLabels {
  Tensor rows;  // N x l, constant (no gradient)
  double lambda = 0.0;
};

// one_hot must be N x l with exactly one 1 per row; 0 <= lambda < 1.
SmoothedLabels smooth_labels(const Tensor& one_hot, double lambda, std::size_t num_classes);

struct ClassificationLoss {
  std::optional<Tensor> org;
  std::optional<Tensor> aug;
  Tensor combined;  // mean of the branches that are present; zero if none
};

ClassificationLoss classification_loss(Tape& tape, const std::optional<Tensor>& logits_org,
                                       const std::optional<Tensor>& logits_aug,
                                       const SmoothedLabels& targets);

// Batch-mean squared regression of the pre-sign projection onto the fixed
// solver codes: sum_i ||c_i - h_i||^2 / N. The targets are code columns
// selected by sample index and never receive gradient.
Tensor hash_regression_loss(Tape& tape, const Tensor& h_global, const Mat& codes,
                            std::span<const std::size_t> sample_indices);

// Learnable task weights. alpha = softplus(raw_a) + eps, beta likewise, so
// positivity holds for any raw value.
class LossWeights {
 public:
  static constexpr double kFloor = 1e-3;

  LossWeights(double alpha_init, double beta_init, bool learnable = true);

  Tensor alpha(Tape& tape) const;
  Tensor beta(Tape& tape) const;
  double alpha_value() const;
  double beta_value() const;

  const Tensor& raw_a() const { return raw_a_; }
  const Tensor& raw_b() const { return raw_b_; }

 private:
  Tensor raw_a_;
  Tensor raw_b_;
};

// L = L_hash/alpha^2 + L_cls/beta^2 + log(alpha+1) + log(beta+1)
Tensor total_balanced_loss(Tape& tape, const Tensor& l_hash, const Tensor& l_cls,
                           const LossWeights& weights);

// Fixed-weight baseline: alpha = beta = 1 with the regularizer masked,
// i.e. plain L_hash + L_cls.
Tensor total_fixed_loss(Tape& tape, const Tensor& l_hash, const Tensor& l_cls);

// Per-step snapshot for the metrics log.
struct LossBreakdown {
  double cls_org = 0.0;
  double cls_aug = 0.0;
  double cls = 0.0;
  double hash = 0.0;
  double total = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
};

// Positive root of alpha^3 = 2*L*(alpha+1), the stationary point of the
// balanced loss in alpha for a fixed hash loss L > 0. Bisection to 1e-12.
double stationary_alpha(double l_hash);

}  // namespace finehash
