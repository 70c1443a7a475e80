#include "finehash/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "finehash/parallel.hpp"

namespace finehash {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
  std::uint64_t id = 0;
};

namespace {
std::atomic<std::uint64_t> g_next_tensor_id{1};
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw UsageError("operation on an undefined tensor");
  return *impl_;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  impl->id = g_next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_size(shape);
  return from_vector(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_size(shape);
  return from_vector(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::size() const { return impl().values.size(); }
bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) const { impl().requires_grad = value; }
std::uint64_t Tensor::id() const { return impl().id; }
const std::vector<double>& Tensor::values() const { return impl().values; }
std::vector<double>& Tensor::mutable_values() const { return impl().values; }
const std::vector<double>& Tensor::grad() const { return impl().grad; }

std::vector<double>& Tensor::grad_buffer() const {
  auto& g = impl().grad;
  if (g.empty()) g.assign(size(), 0.0);
  return g;
}

void Tensor::zero_grad() const { impl().grad.clear(); }

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() requires a single-element tensor, got " + shape_str(shape()));
  return values()[0];
}

bool Tensor::all_finite() const {
  for (double v : values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tape::record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> pull) {
  if (!output.requires_grad()) return;
  Entry e;
  e.op = op;
  e.input_ids.reserve(inputs.size());
  for (const auto& t : inputs) e.input_ids.push_back(t.id());
  e.output_id = output.id();
  e.pull = std::move(pull);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1) {
    throw UsageError("backward root must be scalar, got " + shape_str(root.shape()));
  }
  auto& g = root.grad_buffer();
  g[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->pull();
  }
}

namespace {

bool any_requires(const Tensor& a) { return a.requires_grad(); }
bool any_requires(const Tensor& a, const Tensor& b) {
  return a.requires_grad() || b.requires_grad();
}

void expect_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                     " tensor, got " + shape_str(t.shape()));
  }
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "matmul");
  expect_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], p = a.shape()[1];
  const std::size_t pb = b.shape()[0], q = b.shape()[1];
  if (p != pb) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, q}, any_requires(a, b));
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < p; ++k) {
        const double aik = av[i * p + k];
        const double* brow = bv + k * q;
        double* orow = ov + i * q;
        for (std::size_t j = 0; j < q; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  tape.record("matmul", {a, b}, out, [a, b, out, m, p, q]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      const double* bv = b.values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < p; ++k) {
          const double* brow = bv + k * q;
          const double* grow = go.data() + i * q;
          double acc = 0.0;
          for (std::size_t j = 0; j < q; ++j) acc += grow[j] * brow[j];
          ga[i * p + k] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      const double* av = a.values().data();
      for (std::size_t k = 0; k < p; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
          const double aik = av[i * p + k];
          const double* grow = go.data() + i * q;
          double* gbrow = gb.data() + k * q;
          for (std::size_t j = 0; j < q; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
  return out;
}

namespace {

struct ConvDims {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, std::size_t stride,
                   std::size_t padding) {
  ConvDims d{};
  d.n = input.shape()[0];
  d.cin = input.shape()[1];
  d.h = input.shape()[2];
  d.w = input.shape()[3];
  d.cout = kernel.shape()[0];
  d.kh = kernel.shape()[2];
  d.kw = kernel.shape()[3];
  d.stride = stride;
  d.pad = padding;
  if (kernel.shape()[1] != d.cin) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.shape()[1]) +
                     " input channels, input has " + std::to_string(d.cin));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t hp = d.h + 2 * padding, wp = d.w + 2 * padding;
  if (d.kh > hp || d.kw > wp) {
    throw ConfigError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                      " exceeds padded input " + std::to_string(hp) + "x" + std::to_string(wp));
  }
  if ((hp - d.kh) % stride != 0 || (wp - d.kw) % stride != 0) {
    throw ConfigError("conv2d: output extent is not integral for input " +
                      shape_str(input.shape()) + ", kernel " + shape_str(kernel.shape()) +
                      ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding));
  }
  d.ho = (hp - d.kh) / stride + 1;
  d.wo = (wp - d.kw) / stride + 1;
  return d;
}

// Valid output-column range for a given kernel column: 0 <= ow*s - pad + kc < w.
inline void ow_range(std::size_t kc, const ConvDims& d, std::size_t& lo, std::size_t& hi) {
  std::size_t s = d.stride;
  lo = (d.pad > kc) ? (d.pad - kc + s - 1) / s : 0;
  // ow*s + kc < w + pad  =>  ow <= (w + pad - kc - 1)/s
  std::size_t limit = d.w + d.pad;
  if (kc + 1 > limit) {
    lo = 1;
    hi = 0;
    return;
  }
  hi = std::min(d.wo, (limit - kc - 1) / s + 1);
  if (lo > hi) hi = lo;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  expect_rank(input, 4, "conv2d");
  expect_rank(kernel, 4, "conv2d");
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo}, any_requires(input, kernel));

  const double* in = input.values().data();
  const double* kv = kernel.values().data();
  double* ov = out.mutable_values().data();

  parallel_for(d.n, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t co = 0; co < d.cout; ++co) {
        double* oplane = ov + ((n * d.cout + co) * d.ho) * d.wo;
        for (std::size_t ci = 0; ci < d.cin; ++ci) {
          const double* iplane = in + ((n * d.cin + ci) * d.h) * d.w;
          const double* kplane = kv + ((co * d.cin + ci) * d.kh) * d.kw;
          for (std::size_t kr = 0; kr < d.kh; ++kr) {
            for (std::size_t kc = 0; kc < d.kw; ++kc) {
              const double wgt = kplane[kr * d.kw + kc];
              if (wgt == 0.0) continue;
              std::size_t lo, hi;
              ow_range(kc, d, lo, hi);
              for (std::size_t oh = 0; oh < d.ho; ++oh) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * d.stride + kr) - static_cast<std::ptrdiff_t>(d.pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                const double* irow = iplane + static_cast<std::size_t>(ih) * d.w;
                double* orow = oplane + oh * d.wo;
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kc) - static_cast<std::ptrdiff_t>(d.pad);
                if (d.stride == 1) {
                  for (std::size_t ow = lo; ow < hi; ++ow) orow[ow] += wgt * irow[ow + off];
                } else {
                  for (std::size_t ow = lo; ow < hi; ++ow) orow[ow] += wgt * irow[ow * d.stride + off];
                }
              }
            }
          }
        }
      }
    }
  });

  tape.record("conv2d", {input, kernel}, out, [input, kernel, out, d]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    const double* gov = go.data();
    const double* kv = kernel.values().data();
    const double* in = input.values().data();
    if (input.requires_grad()) {
      double* gi = input.grad_buffer().data();
      parallel_for(d.n, [&](std::size_t n0, std::size_t n1) {
        for (std::size_t n = n0; n < n1; ++n) {
          for (std::size_t co = 0; co < d.cout; ++co) {
            const double* gplane = gov + ((n * d.cout + co) * d.ho) * d.wo;
            for (std::size_t ci = 0; ci < d.cin; ++ci) {
              double* giplane = gi + ((n * d.cin + ci) * d.h) * d.w;
              const double* kplane = kv + ((co * d.cin + ci) * d.kh) * d.kw;
              for (std::size_t kr = 0; kr < d.kh; ++kr) {
                for (std::size_t kc = 0; kc < d.kw; ++kc) {
                  const double wgt = kplane[kr * d.kw + kc];
                  if (wgt == 0.0) continue;
                  std::size_t lo, hi;
                  ow_range(kc, d, lo, hi);
                  for (std::size_t oh = 0; oh < d.ho; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * d.stride + kr) - static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    double* girow = giplane + static_cast<std::size_t>(ih) * d.w;
                    const double* grow = gplane + oh * d.wo;
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kc) - static_cast<std::ptrdiff_t>(d.pad);
                    if (d.stride == 1) {
                      for (std::size_t ow = lo; ow < hi; ++ow) girow[ow + off] += wgt * grow[ow];
                    } else {
                      for (std::size_t ow = lo; ow < hi; ++ow) girow[ow * d.stride + off] += wgt * grow[ow];
                    }
                  }
                }
              }
            }
          }
        }
      });
    }
    if (kernel.requires_grad()) {
      double* gk = kernel.grad_buffer().data();
      // Parallel over output channels: each dK[co] slice has a single writer.
      parallel_for(d.cout, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t co = c0; co < c1; ++co) {
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            double* gkplane = gk + ((co * d.cin + ci) * d.kh) * d.kw;
            for (std::size_t kr = 0; kr < d.kh; ++kr) {
              for (std::size_t kc = 0; kc < d.kw; ++kc) {
                std::size_t lo, hi;
                ow_range(kc, d, lo, hi);
                double acc = 0.0;
                for (std::size_t n = 0; n < d.n; ++n) {
                  const double* gplane = gov + ((n * d.cout + co) * d.ho) * d.wo;
                  const double* iplane = in + ((n * d.cin + ci) * d.h) * d.w;
                  for (std::size_t oh = 0; oh < d.ho; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * d.stride + kr) - static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    const double* irow = iplane + static_cast<std::size_t>(ih) * d.w;
                    const double* grow = gplane + oh * d.wo;
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kc) - static_cast<std::ptrdiff_t>(d.pad);
                    if (d.stride == 1) {
                      for (std::size_t ow = lo; ow < hi; ++ow) acc += grow[ow] * irow[ow + off];
                    } else {
                      for (std::size_t ow = lo; ow < hi; ++ow) acc += grow[ow] * irow[ow * d.stride + off];
                    }
                  }
                }
                gkplane[kr * d.kw + kc] += acc;
              }
            }
          }
        }
      });
    }
  });
  return out;
}

Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  expect_rank(x, 4, "add_channel_bias");
  expect_rank(bias, 1, "add_channel_bias");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (bias.shape()[0] != c) {
    throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs channels " +
                     std::to_string(c));
  }
  Tensor out = Tensor::from_vector(x.shape(), x.values(), any_requires(x, bias));
  {
    double* ov = out.mutable_values().data();
    const double* bv = bias.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double b = bv[ch];
        double* plane = ov + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) plane[k] += b;
      }
    }
  }
  tape.record("add_channel_bias", {x, bias}, out, [x, bias, out, n, c, hw]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    if (x.requires_grad()) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* plane = go.data() + (i * c + ch) * hw;
          double acc = 0.0;
          for (std::size_t k = 0; k < hw; ++k) acc += plane[k];
          gb[ch] += acc;
        }
      }
    }
  });
  return out;
}

Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  expect_rank(x, 2, "add_row_bias");
  expect_rank(bias, 1, "add_row_bias");
  const std::size_t n = x.shape()[0], k = x.shape()[1];
  if (bias.shape()[0] != k) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " vs row width " +
                     std::to_string(k));
  }
  Tensor out = Tensor::from_vector(x.shape(), x.values(), any_requires(x, bias));
  {
    double* ov = out.mutable_values().data();
    const double* bv = bias.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) ov[i * k + j] += bv[j];
    }
  }
  tape.record("add_row_bias", {x, bias}, out, [x, bias, out, n, k]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    if (x.requires_grad()) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) gb[j] += go[i * k + j];
      }
    }
  });
  return out;
}

namespace {

// Shared align-corners bilinear kernel. Maps x in [-1,1] to [0, extent-1],
// clamping out-of-range coordinates to the border.
struct BilinearTap {
  std::size_t i0, i1;
  double t;  // weight of i1
};

inline BilinearTap bilinear_tap(double coord, std::size_t extent) {
  BilinearTap tap{};
  if (extent == 1) {
    tap.i0 = tap.i1 = 0;
    tap.t = 0.0;
    return tap;
  }
  double f = (coord + 1.0) * 0.5 * static_cast<double>(extent - 1);
  if (f < 0.0) f = 0.0;
  const double fmax = static_cast<double>(extent - 1);
  if (f > fmax) f = fmax;
  double fl = std::floor(f);
  std::size_t i0 = static_cast<std::size_t>(fl);
  if (i0 >= extent - 1) {
    tap.i0 = extent - 2;
    tap.i1 = extent - 1;
    tap.t = 1.0;
    // keep exact endpoint: f == extent-1 gives t exactly 1
    tap.t = f - static_cast<double>(extent - 2);
    if (tap.t > 1.0) tap.t = 1.0;
    return tap;
  }
  tap.i0 = i0;
  tap.i1 = i0 + 1;
  tap.t = f - fl;
  return tap;
}

// d f / d coord, zero in the clamped region.
inline double bilinear_scale(double coord, std::size_t extent) {
  if (extent == 1) return 0.0;
  if (coord < -1.0 || coord > 1.0) return 0.0;
  return 0.5 * static_cast<double>(extent - 1);
}

}  // namespace

Tensor grid_sample(Tape& tape, const Tensor& input, const Tensor& grid) {
  expect_rank(input, 4, "grid_sample");
  expect_rank(grid, 4, "grid_sample");
  if (grid.shape()[3] != 2) {
    throw ShapeError("grid_sample: grid last extent must be 2, got " + shape_str(grid.shape()));
  }
  if (grid.shape()[0] != input.shape()[0]) {
    throw ShapeError("grid_sample: batch mismatch " + shape_str(input.shape()) + " vs " +
                     shape_str(grid.shape()));
  }
  const std::size_t n = input.shape()[0], c = input.shape()[1], h = input.shape()[2],
                    w = input.shape()[3];
  const std::size_t ho = grid.shape()[1], wo = grid.shape()[2];
  Tensor out = Tensor::zeros({n, c, ho, wo}, any_requires(input, grid));
  {
    const double* iv = input.values().data();
    const double* gv = grid.values().data();
    double* ov = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < ho; ++r) {
        for (std::size_t s = 0; s < wo; ++s) {
          const double gx = gv[((i * ho + r) * wo + s) * 2 + 0];
          const double gy = gv[((i * ho + r) * wo + s) * 2 + 1];
          const BilinearTap tx = bilinear_tap(gx, w);
          const BilinearTap ty = bilinear_tap(gy, h);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* plane = iv + ((i * c + ch) * h) * w;
            const double v00 = plane[ty.i0 * w + tx.i0];
            const double v01 = plane[ty.i0 * w + tx.i1];
            const double v10 = plane[ty.i1 * w + tx.i0];
            const double v11 = plane[ty.i1 * w + tx.i1];
            const double top = v00 + (v01 - v00) * tx.t;
            const double bot = v10 + (v11 - v10) * tx.t;
            ov[((i * c + ch) * ho + r) * wo + s] = top + (bot - top) * ty.t;
          }
        }
      }
    }
  }
  tape.record("grid_sample", {input, grid}, out, [input, grid, out, n, c, h, w, ho, wo]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    const double* iv = input.values().data();
    const double* gv = grid.values().data();
    double* gi = input.requires_grad() ? input.grad_buffer().data() : nullptr;
    double* gg = grid.requires_grad() ? grid.grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < ho; ++r) {
        for (std::size_t s = 0; s < wo; ++s) {
          const double gx = gv[((i * ho + r) * wo + s) * 2 + 0];
          const double gy = gv[((i * ho + r) * wo + s) * 2 + 1];
          const BilinearTap tx = bilinear_tap(gx, w);
          const BilinearTap ty = bilinear_tap(gy, h);
          const double sx = bilinear_scale(gx, w);
          const double sy = bilinear_scale(gy, h);
          double acc_dx = 0.0, acc_dy = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = go[((i * c + ch) * ho + r) * wo + s];
            if (g == 0.0) continue;
            const std::size_t base = ((i * c + ch) * h) * w;
            if (gi) {
              gi[base + ty.i0 * w + tx.i0] += g * (1.0 - tx.t) * (1.0 - ty.t);
              gi[base + ty.i0 * w + tx.i1] += g * tx.t * (1.0 - ty.t);
              gi[base + ty.i1 * w + tx.i0] += g * (1.0 - tx.t) * ty.t;
              gi[base + ty.i1 * w + tx.i1] += g * tx.t * ty.t;
            }
            if (gg) {
              const double* plane = iv + base;
              const double v00 = plane[ty.i0 * w + tx.i0];
              const double v01 = plane[ty.i0 * w + tx.i1];
              const double v10 = plane[ty.i1 * w + tx.i0];
              const double v11 = plane[ty.i1 * w + tx.i1];
              const double dfdx = (v01 - v00) * (1.0 - ty.t) + (v11 - v10) * ty.t;
              const double dfdy = (v10 - v00) * (1.0 - tx.t) + (v11 - v01) * tx.t;
              acc_dx += g * dfdx;
              acc_dy += g * dfdy;
            }
          }
          if (gg) {
            gg[((i * ho + r) * wo + s) * 2 + 0] += acc_dx * sx;
            gg[((i * ho + r) * wo + s) * 2 + 1] += acc_dy * sy;
          }
        }
      }
    }
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::from_vector(x.shape(), x.values(), x.requires_grad());
  auto& ov = out.mutable_values();
  for (double& v : ov) {
    if (v < 0.0) v = 0.0;
  }
  tape.record("relu", {x}, out, [x, out]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
  return out;
}

Tensor maxpool2(Tape& tape, const Tensor& x) {
  expect_rank(x, 4, "maxpool2");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("maxpool2: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out = Tensor::zeros({n, c, ho, wo}, x.requires_grad());
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(n * c * ho * wo);
  {
    const double* xv = x.values().data();
    double* ov = out.mutable_values().data();
    std::uint32_t* am = argmax->data();
    for (std::size_t i = 0; i < n * c; ++i) {
      const double* plane = xv + i * h * w;
      double* oplane = ov + i * ho * wo;
      std::uint32_t* aplane = am + i * ho * wo;
      for (std::size_t r = 0; r < ho; ++r) {
        for (std::size_t s = 0; s < wo; ++s) {
          // scan in flat order; strict > keeps the smallest flat index on ties
          std::size_t best = (2 * r) * w + 2 * s;
          double bv = plane[best];
          const std::size_t cand[3] = {(2 * r) * w + 2 * s + 1, (2 * r + 1) * w + 2 * s,
                                       (2 * r + 1) * w + 2 * s + 1};
          for (std::size_t t = 0; t < 3; ++t) {
            if (plane[cand[t]] > bv) {
              bv = plane[cand[t]];
              best = cand[t];
            }
          }
          oplane[r * wo + s] = bv;
          aplane[r * wo + s] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  tape.record("maxpool2", {x}, out, [x, out, argmax, n, c, h, w, ho, wo]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const std::uint32_t* am = argmax->data();
    for (std::size_t i = 0; i < n * c; ++i) {
      double* gplane = gx.data() + i * h * w;
      const double* goplane = go.data() + i * ho * wo;
      const std::uint32_t* aplane = am + i * ho * wo;
      for (std::size_t k = 0; k < ho * wo; ++k) gplane[aplane[k]] += goplane[k];
    }
  });
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  expect_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor out = Tensor::zeros({n, c}, x.requires_grad());
  {
    const double* xv = x.values().data();
    double* ov = out.mutable_values().data();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      const double* plane = xv + i * hw;
      double acc = 0.0;
      for (std::size_t k = 0; k < hw; ++k) acc += plane[k];
      ov[i] = acc * inv;
    }
  }
  tape.record("global_avg_pool", {x}, out, [x, out, n, c, hw]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      const double g = go[i] * inv;
      double* plane = gx.data() + i * hw;
      for (std::size_t k = 0; k < hw; ++k) plane[k] += g;
    }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "add");
  Tensor out = Tensor::from_vector(a.shape(), a.values(), any_requires(a, b));
  {
    auto& ov = out.mutable_values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  }
  tape.record("add", {a, b}, out, [a, b, out]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i];
    }
  });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "mul");
  Tensor out = Tensor::from_vector(a.shape(), a.values(), any_requires(a, b));
  {
    auto& ov = out.mutable_values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  }
  tape.record("mul", {a, b}, out, [a, b, out]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      const auto& bv = b.values();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      const auto& av = a.values();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out = Tensor::from_vector(x.shape(), x.values(), x.requires_grad());
  for (double& v : out.mutable_values()) v *= factor;
  tape.record("scale", {x}, out, [x, out, factor]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * go[i];
  });
  return out;
}

Tensor add_scalar(Tape& tape, const Tensor& x, double value) {
  Tensor out = Tensor::from_vector(x.shape(), x.values(), x.requires_grad());
  for (double& v : out.mutable_values()) v += value;
  tape.record("add_scalar", {x}, out, [x, out]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc, x.requires_grad());
  tape.record("sum", {x}, out, [x, out]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const double g = go[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: empty input list");
  const std::size_t n = parts[0].shape()[0];
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    expect_rank(p, 2, "concat_cols");
    if (p.shape()[0] != n) {
      throw ShapeError("concat_cols: row count mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.shape()[1];
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({n, total}, rg);
  {
    double* ov = out.mutable_values().data();
    std::size_t col = 0;
    for (const auto& p : parts) {
      const std::size_t d = p.shape()[1];
      const double* pv = p.values().data();
      for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(ov + i * total + col, pv + i * d, d * sizeof(double));
      }
      col += d;
    }
  }
  tape.record("concat_cols", parts, out, [parts, out, n, total]() {
    const auto& go = out.grad();
    if (go.empty()) return;
    std::size_t col = 0;
    for (const auto& p : parts) {
      const std::size_t d = p.shape()[1];
      if (p.requires_grad()) {
        auto& gp = p.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          const double* src = go.data() + i * total + col;
          double* dst = gp.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
      col += d;
    }
  });
  return out;
}

Tensor softplus(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::from_vector(x.shape(), x.values(), x.requires_grad());
  for (double& v : out.mutable_values()) {
    v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  tape.record("softplus", {x}, out, [x, out]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += go[i] / (1.0 + std::exp(-xv[i]));
    }
  });
  return out;
}

Tensor log_elem(Tape& tape, const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw ValidationError("log_elem: all elements must be positive");
  }
  Tensor out = Tensor::from_vector(x.shape(), x.values(), x.requires_grad());
  for (double& v : out.mutable_values()) v = std::log(v);
  tape.record("log_elem", {x}, out, [x, out]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] / xv[i];
  });
  return out;
}

Tensor pow_scalar(Tape& tape, const Tensor& x, double exponent) {
  const bool nonneg_int = exponent >= 0.0 && exponent == std::floor(exponent);
  if (!nonneg_int) {
    for (double v : x.values()) {
      if (!(v > 0.0)) {
        throw ValidationError("pow_scalar: base must be positive for exponent " +
                              std::to_string(exponent));
      }
    }
  }
  Tensor out = Tensor::from_vector(x.shape(), x.values(), x.requires_grad());
  for (double& v : out.mutable_values()) v = std::pow(v, exponent);
  tape.record("pow_scalar", {x}, out, [x, out, exponent]() {
    const auto& go = out.grad();
    if (go.empty() || !x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += go[i] * exponent * std::pow(xv[i], exponent - 1.0);
    }
  });
  return out;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& targets) {
  expect_rank(logits, 2, "softmax_cross_entropy");
  expect_same_shape(logits, targets, "softmax_cross_entropy");
  const std::size_t n = logits.shape()[0], l = logits.shape()[1];
  const auto& tv = targets.values();
  for (std::size_t i = 0; i < n; ++i) {
    double rowsum = 0.0;
    for (std::size_t k = 0; k < l; ++k) rowsum += tv[i * l + k];
    if (std::abs(rowsum - 1.0) > 1e-9) {
      throw ValidationError("softmax_cross_entropy: target row " + std::to_string(i) +
                            " sums to " + std::to_string(rowsum) + ", expected 1");
    }
  }
  // probs and row log-sum-exp are saved for the backward pass
  auto probs = std::make_shared<std::vector<double>>(n * l);
  auto lse = std::make_shared<std::vector<double>>(n);
  const auto& xv = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = xv[i * l];
    for (std::size_t k = 1; k < l; ++k) m = std::max(m, xv[i * l + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < l; ++k) z += std::exp(xv[i * l + k] - m);
    const double log_z = std::log(z);
    (*lse)[i] = log_z + m;
    double row_loss = 0.0;
    for (std::size_t k = 0; k < l; ++k) {
      const double p = std::exp(xv[i * l + k] - m) / z;
      (*probs)[i * l + k] = p;
      row_loss += tv[i * l + k] * (log_z + m - xv[i * l + k]);
    }
    total += row_loss;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n), any_requires(logits, targets));
  tape.record("softmax_cross_entropy", {logits, targets}, out,
              [logits, targets, out, probs, lse, n, l]() {
                const auto& go = out.grad();
                if (go.empty()) return;
                const double g = go[0] / static_cast<double>(n);
                if (logits.requires_grad()) {
                  auto& gx = logits.grad_buffer();
                  const auto& tv = targets.values();
                  for (std::size_t i = 0; i < n * l; ++i) {
                    gx[i] += g * ((*probs)[i] - tv[i]);
                  }
                }
                if (targets.requires_grad()) {
                  auto& gt = targets.grad_buffer();
                  const auto& xv = logits.values();
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t k = 0; k < l; ++k) {
                      gt[i * l + k] += g * ((*lse)[i] - xv[i * l + k]);
                    }
                  }
                }
              });
  return out;
}

std::vector<double> sign_values(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] >= 0.0 ? 1.0 : -1.0;
  return out;
}

}  // namespace finehash
