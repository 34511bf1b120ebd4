#include "rankcount/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ag_internal.hpp"

namespace rankcount::ag {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
bool g_finite_checks = true;

void throw_shape(const std::string& msg) { throw std::runtime_error(msg); }

void check_values_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + what);
    }
  }
}

}  // namespace

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw_shape("tensor shape has non-positive dimension " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> values,
                                bool requires_grad) {
  const std::int64_t n = element_count(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw_shape("tensor value count " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void ensure_grad(Node& node) {
  if (node.grad.empty()) node.grad.assign(node.values.size(), 0.0);
}

void accumulate_grad(Node& target, const std::vector<double>& contribution) {
  ensure_grad(target);
  for (std::size_t i = 0; i < contribution.size(); ++i) target.grad[i] += contribution[i];
}

Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<std::shared_ptr<Node>> inputs,
               std::function<void(Node&)> backward_fn, const char* what) {
  if (g_finite_checks) check_values_finite(values, what);
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in->requires_grad;
  auto node = make_node(std::move(shape), std::move(values), rg);
  if (rg) {
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

using detail::Node;

// --- Tensor methods --------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(detail::make_node(std::move(shape),
                                  std::vector<double>(static_cast<std::size_t>(n), 0.0),
                                  requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(detail::make_node(std::move(shape),
                                  std::vector<double>(static_cast<std::size_t>(n), value),
                                  requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(detail::make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(detail::make_node(Shape{}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }

std::int64_t Tensor::size() const { return node_->size(); }

std::vector<double>& Tensor::values() { return node_->values; }
const std::vector<double>& Tensor::values() const { return node_->values; }

double Tensor::item() const {
  if (node_->size() != 1) {
    throw_shape("item() requires a one-element tensor, got " + shape_str(node_->shape));
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::grad_populated() const { return !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) {
    throw std::runtime_error("gradient of tensor '" + node_->name +
                             "' has not been populated by backward()");
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

const std::string& Tensor::name() const { return node_->name; }

Tensor& Tensor::set_name(std::string name) {
  node_->name = std::move(name);
  return *this;
}

std::uint64_t Tensor::id() const { return node_->id; }

// --- Ops --------------------------------------------------------------------

namespace {

// Fused per-row conv kernels: the kernel-width loop is folded into one pass
// over an output row, with compile-time specializations for the hot
// (width, stride) combinations. Summation order is fixed, so runs of one
// build stay bitwise reproducible.

// out[i] += sum_k w[k] * in[i*s + k]
void conv_row_fwd_any(double* __restrict out, const double* __restrict in,
                      const double* __restrict w, int n, int kw, int s) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < kw; ++k) acc += w[k] * in[i * s + k];
    out[i] += acc;
  }
}

// dw[k] += sum_i go[i] * in[i*s + k]
void conv_row_dw_any(double* __restrict dw, const double* __restrict in,
                     const double* __restrict go, int n, int kw, int s) {
  for (int k = 0; k < kw; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += go[i] * in[i * s + k];
    dw[k] += acc;
  }
}

// din[i*s + k] += w[k] * go[i]
void conv_row_dx_any(double* __restrict din, const double* __restrict w,
                     const double* __restrict go, int n, int kw, int s) {
  for (int i = 0; i < n; ++i) {
    const double g = go[i];
    for (int k = 0; k < kw; ++k) din[i * s + k] += w[k] * g;
  }
}

// Fully fused variants: all KH*KW taps of one filter/channel applied to one
// output row in a single pass. `rs` is the padded-input row stride.
template <int KH, int KW, int S>
void conv_taps_fwd(double* __restrict out, const double* __restrict in, int rs,
                   const double* __restrict w, int n) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int kh = 0; kh < KH; ++kh)
      for (int kw = 0; kw < KW; ++kw) acc += w[kh * KW + kw] * in[kh * rs + i * S + kw];
    out[i] += acc;
  }
}

template <int KH, int KW, int S>
void conv_taps_dw(double* __restrict dw, const double* __restrict in, int rs,
                  const double* __restrict go, int n) {
  double acc[KH * KW] = {};
  for (int i = 0; i < n; ++i) {
    const double g = go[i];
    for (int kh = 0; kh < KH; ++kh)
      for (int kw = 0; kw < KW; ++kw) acc[kh * KW + kw] += g * in[kh * rs + i * S + kw];
  }
  for (int k = 0; k < KH * KW; ++k) dw[k] += acc[k];
}

template <int KH, int KW, int S>
void conv_taps_dx(double* __restrict din, int rs, const double* __restrict w,
                  const double* __restrict go, int n) {
  for (int i = 0; i < n; ++i) {
    const double g = go[i];
    for (int kh = 0; kh < KH; ++kh)
      for (int kw = 0; kw < KW; ++kw) din[kh * rs + i * S + kw] += w[kh * KW + kw] * g;
  }
}

struct ConvKernels {
  void (*fwd)(double*, const double*, int, const double*, int) = nullptr;
  void (*dw)(double*, const double*, int, const double*, int) = nullptr;
  void (*dx)(double*, int, const double*, const double*, int) = nullptr;
};

template <int KH, int KW, int S>
constexpr ConvKernels make_conv_kernels() {
  return {&conv_taps_fwd<KH, KW, S>, &conv_taps_dw<KH, KW, S>, &conv_taps_dx<KH, KW, S>};
}

ConvKernels conv_kernels_for(int kh, int kw, int stride) {
  if (kh == 3 && kw == 3 && stride == 1) return make_conv_kernels<3, 3, 1>();
  if (kh == 3 && kw == 3 && stride == 2) return make_conv_kernels<3, 3, 2>();
  if (kh == 2 && kw == 2 && stride == 2) return make_conv_kernels<2, 2, 2>();
  if (kh == 2 && kw == 2 && stride == 1) return make_conv_kernels<2, 2, 1>();
  if (kh == 1 && kw == 1 && stride == 1) return make_conv_kernels<1, 1, 1>();
  if (kh == 1 && kw == 1 && stride == 2) return make_conv_kernels<1, 1, 2>();
  return {};  // generic fallback via the per-row *_any functions
}

void zero_pad_image(std::vector<double>& padded, const double* xn, int C, int H, int W,
                    int pad, int Wp, std::size_t x_plane, std::size_t xp_plane) {
  std::fill(padded.begin(), padded.end(), 0.0);
  for (int c = 0; c < C; ++c) {
    for (int h = 0; h < H; ++h) {
      std::memcpy(padded.data() + c * xp_plane + static_cast<std::size_t>(h + pad) * Wp + pad,
                  xn + c * x_plane + static_cast<std::size_t>(h) * W,
                  sizeof(double) * static_cast<std::size_t>(W));
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  const auto& x = input.node();
  const auto& w = kernel.node();
  if (x->shape.size() != 4 || w->shape.size() != 4) {
    throw_shape("conv2d expects input [N,C,H,W] and kernel [F,C,kh,kw], got " +
                shape_str(x->shape) + " and " + shape_str(w->shape));
  }
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int F = w->shape[0], Ck = w->shape[1], KH = w->shape[2], KW = w->shape[3];
  if (C != Ck) {
    throw_shape("conv2d channel mismatch: input " + shape_str(x->shape) +
                " vs kernel " + shape_str(w->shape));
  }
  if (stride < 1) throw_shape("conv2d stride must be >= 1");
  if (pad < 0) throw_shape("conv2d pad must be >= 0");
  const int Hp = H + 2 * pad, Wp = W + 2 * pad;
  if (KH > Hp || KW > Wp) {
    throw_shape("conv2d kernel " + shape_str(w->shape) + " larger than padded input " +
                shape_str({N, C, Hp, Wp}));
  }
  if ((Hp - KH) % stride != 0 || (Wp - KW) % stride != 0) {
    throw_shape("conv2d geometry is inexact: (dim + 2*pad - k) must be divisible by stride, got input " +
                shape_str(x->shape) + ", kernel " + shape_str(w->shape) + ", stride " +
                std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  const int Ho = (Hp - KH) / stride + 1;
  const int Wo = (Wp - KW) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(N) * F * Ho * Wo, 0.0);
  const std::size_t x_plane = static_cast<std::size_t>(H) * W;
  const std::size_t xp_plane = static_cast<std::size_t>(Hp) * Wp;
  const std::size_t o_plane = static_cast<std::size_t>(Ho) * Wo;

  std::vector<double> padded;
  if (pad > 0) padded.assign(static_cast<std::size_t>(C) * xp_plane, 0.0);
  const ConvKernels fns = conv_kernels_for(KH, KW, stride);

  for (int n = 0; n < N; ++n) {
    const double* xn = x->values.data() + static_cast<std::size_t>(n) * C * x_plane;
    const double* src = xn;
    if (pad > 0) {
      zero_pad_image(padded, xn, C, H, W, pad, Wp, x_plane, xp_plane);
      src = padded.data();
    }
    for (int f = 0; f < F; ++f) {
      double* out_plane = out.data() + (static_cast<std::size_t>(n) * F + f) * o_plane;
      for (int c = 0; c < C; ++c) {
        const double* wtaps =
            w->values.data() + ((static_cast<std::size_t>(f) * C + c) * KH) * KW;
        for (int ho = 0; ho < Ho; ++ho) {
          const double* in_base =
              src + c * xp_plane + static_cast<std::size_t>(ho) * stride * Wp;
          double* out_row = out_plane + static_cast<std::size_t>(ho) * Wo;
          if (fns.fwd) {
            fns.fwd(out_row, in_base, Wp, wtaps, Wo);
          } else {
            for (int kh = 0; kh < KH; ++kh) {
              conv_row_fwd_any(out_row, in_base + static_cast<std::size_t>(kh) * Wp,
                               wtaps + static_cast<std::size_t>(kh) * KW, Wo, KW, stride);
            }
          }
        }
      }
    }
  }

  auto bw = [N, C, H, W, F, KH, KW, stride, pad, Hp, Wp, Ho, Wo](Node& self) {
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    const std::size_t x_plane = static_cast<std::size_t>(H) * W;
    const std::size_t xp_plane = static_cast<std::size_t>(Hp) * Wp;
    const std::size_t o_plane = static_cast<std::size_t>(Ho) * Wo;

    const ConvKernels fns = conv_kernels_for(KH, KW, stride);

    if (win.requires_grad) {
      std::vector<double> dw(win.values.size(), 0.0);
      std::vector<double> padded;
      if (pad > 0) padded.assign(static_cast<std::size_t>(C) * xp_plane, 0.0);
      for (int n = 0; n < N; ++n) {
        const double* xn = xin.values.data() + static_cast<std::size_t>(n) * C * x_plane;
        const double* src = xn;
        if (pad > 0) {
          zero_pad_image(padded, xn, C, H, W, pad, Wp, x_plane, xp_plane);
          src = padded.data();
        }
        for (int f = 0; f < F; ++f) {
          const double* go_plane =
              self.grad.data() + (static_cast<std::size_t>(n) * F + f) * o_plane;
          for (int c = 0; c < C; ++c) {
            double* dwtaps = dw.data() + ((static_cast<std::size_t>(f) * C + c) * KH) * KW;
            for (int ho = 0; ho < Ho; ++ho) {
              const double* in_base =
                  src + c * xp_plane + static_cast<std::size_t>(ho) * stride * Wp;
              const double* go_row = go_plane + static_cast<std::size_t>(ho) * Wo;
              if (fns.dw) {
                fns.dw(dwtaps, in_base, Wp, go_row, Wo);
              } else {
                for (int kh = 0; kh < KH; ++kh) {
                  conv_row_dw_any(dwtaps + static_cast<std::size_t>(kh) * KW,
                                  in_base + static_cast<std::size_t>(kh) * Wp, go_row, Wo, KW,
                                  stride);
                }
              }
            }
          }
        }
      }
      detail::accumulate_grad(win, dw);
    }

    if (xin.requires_grad) {
      std::vector<double> dx(xin.values.size(), 0.0);
      std::vector<double> dpad(static_cast<std::size_t>(C) * xp_plane, 0.0);
      for (int n = 0; n < N; ++n) {
        std::fill(dpad.begin(), dpad.end(), 0.0);
        for (int f = 0; f < F; ++f) {
          const double* go_plane =
              self.grad.data() + (static_cast<std::size_t>(n) * F + f) * o_plane;
          for (int c = 0; c < C; ++c) {
            const double* wtaps =
                win.values.data() + ((static_cast<std::size_t>(f) * C + c) * KH) * KW;
            for (int ho = 0; ho < Ho; ++ho) {
              double* dpad_base =
                  dpad.data() + c * xp_plane + static_cast<std::size_t>(ho) * stride * Wp;
              const double* go_row = go_plane + static_cast<std::size_t>(ho) * Wo;
              if (fns.dx) {
                fns.dx(dpad_base, Wp, wtaps, go_row, Wo);
              } else {
                for (int kh = 0; kh < KH; ++kh) {
                  conv_row_dx_any(dpad_base + static_cast<std::size_t>(kh) * Wp,
                                  wtaps + static_cast<std::size_t>(kh) * KW, go_row, Wo, KW,
                                  stride);
                }
              }
            }
          }
        }
        double* dxn = dx.data() + static_cast<std::size_t>(n) * C * x_plane;
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int wcol = 0; wcol < W; ++wcol)
              dxn[c * x_plane + static_cast<std::size_t>(h) * W + wcol] +=
                  dpad[c * xp_plane + static_cast<std::size_t>(h + pad) * Wp + (wcol + pad)];
      }
      detail::accumulate_grad(xin, dx);
    }
  };

  return detail::make_op({N, F, Ho, Wo}, std::move(out), {x, w}, std::move(bw), "conv2d");
}

Tensor add_channel_bias(const Tensor& input, const Tensor& bias) {
  const auto& x = input.node();
  const auto& b = bias.node();
  if (x->shape.size() != 4 || b->shape.size() != 1 || b->shape[0] != x->shape[1]) {
    throw_shape("add_channel_bias expects [N,F,H,W] and [F], got " + shape_str(x->shape) +
                " and " + shape_str(b->shape));
  }
  const int N = x->shape[0], F = x->shape[1];
  const std::size_t plane = static_cast<std::size_t>(x->shape[2]) * x->shape[3];
  std::vector<double> out(x->values.size());
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f) {
      const double bv = b->values[static_cast<std::size_t>(f)];
      const std::size_t base = (static_cast<std::size_t>(n) * F + f) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = x->values[base + i] + bv;
    }
  auto bw = [N, F, plane](Node& self) {
    auto& xin = *self.inputs[0];
    auto& bin = *self.inputs[1];
    if (xin.requires_grad) detail::accumulate_grad(xin, self.grad);
    if (bin.requires_grad) {
      std::vector<double> db(static_cast<std::size_t>(F), 0.0);
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
          const std::size_t base = (static_cast<std::size_t>(n) * F + f) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += self.grad[base + i];
          db[static_cast<std::size_t>(f)] += acc;
        }
      detail::accumulate_grad(bin, db);
    }
  };
  return detail::make_op(x->shape, std::move(out), {x, b}, std::move(bw), "add_channel_bias");
}

Tensor avg_pool_global(const Tensor& input) {
  const auto& x = input.node();
  if (x->shape.size() != 4) {
    throw_shape("avg_pool_global expects [N,F,H,W], got " + shape_str(x->shape));
  }
  const int N = x->shape[0], F = x->shape[1];
  const std::size_t plane = static_cast<std::size_t>(x->shape[2]) * x->shape[3];
  std::vector<double> out(static_cast<std::size_t>(N) * F);
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f) {
      const std::size_t base = (static_cast<std::size_t>(n) * F + f) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += x->values[base + i];
      out[static_cast<std::size_t>(n) * F + f] = acc / static_cast<double>(plane);
    }
  auto bw = [N, F, plane](Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    std::vector<double> dx(xin.values.size());
    const double inv = 1.0 / static_cast<double>(plane);
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f) {
        const double g = self.grad[static_cast<std::size_t>(n) * F + f] * inv;
        const std::size_t base = (static_cast<std::size_t>(n) * F + f) * plane;
        for (std::size_t i = 0; i < plane; ++i) dx[base + i] = g;
      }
    detail::accumulate_grad(xin, dx);
  };
  return detail::make_op({N, F}, std::move(out), {x}, std::move(bw), "avg_pool_global");
}

Tensor relu(const Tensor& input) {
  const auto& x = input.node();
  std::vector<double> out(x->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
  auto bw = [](Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    std::vector<double> dx(xin.values.size());
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] = xin.values[i] > 0.0 ? self.grad[i] : 0.0;
    detail::accumulate_grad(xin, dx);
  };
  return detail::make_op(x->shape, std::move(out), {x}, std::move(bw), "relu");
}

Tensor softplus(const Tensor& input) {
  const auto& x = input.node();
  std::vector<double> out(x->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x->values[i];
    out[i] = v > 30.0 ? v : std::log1p(std::exp(v));
  }
  auto bw = [](Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    std::vector<double> dx(xin.values.size());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = xin.values[i];
      const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                  : std::exp(v) / (1.0 + std::exp(v));
      dx[i] = self.grad[i] * sig;
    }
    detail::accumulate_grad(xin, dx);
  };
  return detail::make_op(x->shape, std::move(out), {x}, std::move(bw), "softplus");
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw_shape(std::string(what) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto bw = [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) detail::accumulate_grad(*in, self.grad);
  };
  return detail::make_op(a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw), "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto bw = [](Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) detail::accumulate_grad(an, self.grad);
    if (bn.requires_grad) {
      std::vector<double> db(self.grad.size());
      for (std::size_t i = 0; i < db.size(); ++i) db[i] = -self.grad[i];
      detail::accumulate_grad(bn, db);
    }
  };
  return detail::make_op(a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw), "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto bw = [](Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      std::vector<double> da(self.grad.size());
      for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * bn.values[i];
      detail::accumulate_grad(an, da);
    }
    if (bn.requires_grad) {
      std::vector<double> db(self.grad.size());
      for (std::size_t i = 0; i < db.size(); ++i) db[i] = self.grad[i] * an.values[i];
      detail::accumulate_grad(bn, db);
    }
  };
  return detail::make_op(a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw), "mul");
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * a.values()[i];
  auto bw = [](Node& self) {
    auto& an = *self.inputs[0];
    if (!an.requires_grad) return;
    std::vector<double> da(self.grad.size());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * 2.0 * an.values[i];
    detail::accumulate_grad(an, da);
  };
  return detail::make_op(a.shape(), std::move(out), {a.node()}, std::move(bw), "square");
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  auto bw = [factor](Node& self) {
    auto& an = *self.inputs[0];
    if (!an.requires_grad) return;
    std::vector<double> da(self.grad.size());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * factor;
    detail::accumulate_grad(an, da);
  };
  return detail::make_op(a.shape(), std::move(out), {a.node()}, std::move(bw), "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  auto bw = [](Node& self) {
    auto& an = *self.inputs[0];
    if (an.requires_grad) detail::accumulate_grad(an, self.grad);
  };
  return detail::make_op(a.shape(), std::move(out), {a.node()}, std::move(bw), "add_scalar");
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  auto bw = [](Node& self) {
    auto& an = *self.inputs[0];
    if (!an.requires_grad) return;
    std::vector<double> da(an.values.size(), self.grad[0]);
    detail::accumulate_grad(an, da);
  };
  return detail::make_op(Shape{}, {acc}, {a.node()}, std::move(bw), "sum_all");
}

Tensor slice_rows(const Tensor& a, int begin, int end) {
  if (a.shape().empty()) throw_shape("slice_rows needs at least rank 1");
  const int n = a.dim(0);
  if (begin < 0 || end > n || begin >= end) {
    throw_shape("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                ") out of range for leading dimension " + std::to_string(n));
  }
  const std::size_t row_elems = static_cast<std::size_t>(a.size() / n);
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  std::vector<double> out(static_cast<std::size_t>(end - begin) * row_elems);
  std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(begin * row_elems),
            a.values().begin() + static_cast<std::ptrdiff_t>(end * row_elems), out.begin());
  auto bw = [begin, row_elems](Node& self) {
    auto& an = *self.inputs[0];
    if (!an.requires_grad) return;
    detail::ensure_grad(an);
    const std::size_t offset = static_cast<std::size_t>(begin) * row_elems;
    for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[offset + i] += self.grad[i];
  };
  return detail::make_op(std::move(out_shape), std::move(out), {a.node()}, std::move(bw),
                         "slice_rows");
}

// --- Backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::runtime_error("backward() on undefined tensor");
  if (loss.size() != 1) {
    throw_shape("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable requires gradients

  // Postorder over the subgraph of grad-requiring nodes. The graph is acyclic
  // by construction, so visited-on-push is safe.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next < top.node->inputs.size()) {
      Node* in = top.node->inputs[top.next++].get();
      if (in->requires_grad && visited.insert(in).second) stack.push_back({in, 0});
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  // Op-node buffers are scratch for this pass; only leaf gradients accumulate
  // across repeated backward() calls.
  for (Node* node : order) {
    if (node->backward_fn) node->grad.assign(node->values.size(), 0.0);
  }

  detail::ensure_grad(*root);
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    detail::ensure_grad(*node);
    if (node->backward_fn) node->backward_fn(*node);
  }

  if (g_finite_checks) {
    for (Node* node : order) check_values_finite(node->grad, "backward");
  }
}

void sgd_step(std::span<Tensor> params, double lr, double weight_decay) {
  for (auto& p : params) {
    if (!p.grad_populated()) {
      throw std::runtime_error("sgd_step: parameter '" +
                               (p.name().empty() ? ("#" + std::to_string(p.id())) : p.name()) +
                               "' has no populated gradient");
    }
  }
  for (auto& p : params) {
    auto& node = *p.node();
    for (std::size_t i = 0; i < node.values.size(); ++i) {
      node.values[i] -= lr * (node.grad[i] + weight_decay * node.values[i]);
    }
    node.grad.clear();
  }
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* what) {
  check_values_finite(t.values(), what);
}

}  // namespace rankcount::ag
