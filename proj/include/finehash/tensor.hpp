#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "finehash/errors.hpp"

namespace finehash {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float64 tensor. Handles share storage; values are treated
// as immutable once the tensor has entered a forward pass. mutable_values()
// exists for parameter updates and batch assembly between passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  bool requires_grad() const;
  void set_requires_grad(bool value) const;

  // Stable node identity; lets weight sharing be asserted directly.
  std::uint64_t id() const;

  const std::vector<double>& values() const;
  std::vector<double>& mutable_values() const;

  // Empty until a backward pass has deposited something.
  const std::vector<double>& grad() const;
  // Zero-initialized buffer, allocated on first use. Shallow-const: the
  // gradient lives with the shared storage, not the handle.
  std::vector<double>& grad_buffer() const;
  void zero_grad() const;

  double item() const;

  bool all_finite() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;
};

// Records one entry per primitive application in topological order. A single
// reverse traversal visits every entry exactly once; gradients accumulate
// additively across fan-out. A tape has one owner and is not shared between
// threads; independent tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t num_entries() const { return entries_.size(); }

  void backward(const Tensor& root);

  // Used by the primitive implementations. `pull` reads the output gradient
  // and accumulates into the inputs captured by the closure.
  void record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void()> pull);

 private:
  struct Entry {
    const char* op;
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id;
    std::function<void()> pull;
  };
  std::vector<Entry> entries_;
};

// ---- differentiable primitives ----

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// input [N,Cin,H,W], kernel [Cout,Cin,kh,kw]; cross-correlation. Output
// extents must come out integral for the given stride/padding.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

// x [N,C,H,W] + bias [C], broadcast over N,H,W.
Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias);

// x [N,K] + bias [K], broadcast over rows.
Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias);

// input [N,C,H,W], grid [N,H',W',2] with coords (x,y) in [-1,1], align-corners
// bilinear; out-of-range coordinates clamp to the border. Differentiable with
// respect to both input and grid.
Tensor grid_sample(Tape& tape, const Tensor& input, const Tensor& grid);

Tensor relu(Tape& tape, const Tensor& x);

// 2x2/stride-2 max pool; H and W must be even. Ties route the gradient to the
// smallest flat index for deterministic replay.
Tensor maxpool2(Tape& tape, const Tensor& x);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double value);

// -> scalar [1]
Tensor sum(Tape& tape, const Tensor& x);

// parts each [N,d_i] -> [N, sum d_i], order preserved.
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);

Tensor softplus(Tape& tape, const Tensor& x);

// Natural log; every element must be > 0.
Tensor log_elem(Tape& tape, const Tensor& x);

// x^p elementwise; x must be > 0 when p is not a nonnegative integer.
Tensor pow_scalar(Tape& tape, const Tensor& x, double exponent);

// logits [N,l], targets [N,l]; each target row must sum to 1 within 1e-9.
// Mean over rows of -sum_k target*log softmax(logit), max-shifted.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& targets);

// ---- non-differentiable helpers ----

// sign with sign(0) = +1, applied elementwise to a value snapshot.
std::vector<double> sign_values(const std::vector<double>& v);

}  // namespace finehash
