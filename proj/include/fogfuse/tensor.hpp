#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// A BasicTensor is a shared handle to its storage: copying a tensor aliases
// the same buffer, like most array libraries. Operations never write into
// their inputs. When a Tape is active on the current thread and any input
// requires a gradient, the operation appends its backward rule to the tape;
// `backward(loss)` replays the tape in reverse and accumulates gradients into
// every tensor that requires them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fogfuse/error.hpp"

namespace fogfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Ordered record of executed operations. Only one tape is active per thread.
class Tape {
 public:
  struct Record {
    std::string_view op;
    std::function<void()> backward;
  };

  /// Makes `tape` the active tape for the lifetime of the scope.
  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(slot()) { slot() = &tape; }
    ~Scope() { slot() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() { return slot(); }

  void push(std::string_view op, std::function<void()> backward) {
    records_.push_back(Record{op, std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Record>& records() const { return records_; }

  /// Runs every backward rule once, newest first, then empties the tape.
  void replay() {
    last_replay_.clear();
    last_replay_.reserve(records_.size());
    for (std::size_t i = records_.size(); i-- > 0;) {
      records_[i].backward();
      last_replay_.push_back(i);
    }
    records_.clear();
  }

  /// Record indices visited by the most recent replay, in visit order.
  const std::vector<std::size_t>& last_replay() const { return last_replay_; }

  void clear() { records_.clear(); }

 private:
  static Tape*& slot() {
    thread_local Tape* current = nullptr;
    return current;
  }

  std::vector<Record> records_;
  std::vector<std::size_t> last_replay_;
};

template <class T>
class BasicTensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{})
      : storage_(std::make_shared<Storage>()) {
    storage_->shape = std::move(shape);
    storage_->data.assign(numel(storage_->shape), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : storage_(std::make_shared<Storage>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                       std::to_string(numel(shape)) + " values but " +
                       std::to_string(data.size()) + " were supplied");
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T{1}); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t size() const { return storage_->data.size(); }

  std::span<const T> data() const { return storage_->data; }
  std::span<T> mutable_data() { return storage_->data; }
  const T* ptr() const { return storage_->data.data(); }
  T* mutable_ptr() { return storage_->data.data(); }
  T operator[](std::size_t i) const { return storage_->data[i]; }

  T item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    }
    return storage_->data[0];
  }

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  BasicTensor& set_requires_grad(bool flag = true) {
    storage_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad() const { return storage_->grad; }

  /// Gradient buffer, allocated as zeros on first access. Const because the
  /// gradient belongs to the shared storage, not to this handle.
  std::span<T> mutable_grad() const {
    if (storage_->grad.empty()) storage_->grad.assign(size(), T{0});
    return storage_->grad;
  }

  void clear_grad() {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }

  /// Deep copy without gradient tracking.
  BasicTensor clone() const { return BasicTensor(shape(), storage_->data); }

  /// True when both handles alias the same storage.
  bool same_storage(const BasicTensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Storage> storage_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

template <class... Ts>
bool tracking(const Ts&... inputs) {
  return Tape::active() != nullptr && (inputs.requires_grad() || ...);
}

template <class T, class Fn>
void record(std::string_view op, BasicTensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  Tape::active()->push(op, std::forward<Fn>(fn));
}

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, std::string_view op,
                  std::string_view name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + std::string(name) + " must have rank " +
                     std::to_string(rank) + ", got shape " + shape_string(t.shape()));
  }
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

// Dot product with eight independent lanes folded in a fixed order, so the
// result does not depend on how the compiler vectorizes the loop.
template <class A, class B>
double dot_lanes(const A* a, const B* b, std::size_t n, std::size_t b_stride) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) {
      lanes[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[(i + j) * b_stride]);
    }
  }
  for (std::size_t j = 0; i < n; ++i, ++j) {
    lanes[j] += static_cast<double>(a[i]) * static_cast<double>(b[i * b_stride]);
  }
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

// Output index range [lo, hi) such that lo*stride + offset lands inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t offset, std::size_t stride,
                                                      std::size_t extent, std::size_t out_extent) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(extent) - 1 - offset;
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution and pooling

/// 2-D cross-correlation of input [B,C,H,W] with kernel [O,C,kH,kW].
/// Reductions accumulate in double regardless of T.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      std::size_t stride = 1, std::size_t padding = 0) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(kernel, 4, "conv2d", "kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be at least 1");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(1) != C) {
    throw ShapeError("conv2d: kernel channel extent (dim 1) is " + std::to_string(kernel.dim(1)) +
                     " but input channel extent (dim 1) is " + std::to_string(C));
  }
  if (KH > H + 2 * padding) {
    throw ShapeError("conv2d: kernel height (dim 2) " + std::to_string(KH) +
                     " exceeds padded input height " + std::to_string(H + 2 * padding));
  }
  if (KW > W + 2 * padding) {
    throw ShapeError("conv2d: kernel width (dim 3) " + std::to_string(KW) +
                     " exceeds padded input width " + std::to_string(W + 2 * padding));
  }
  const std::size_t HO = (H + 2 * padding - KH) / stride + 1;
  const std::size_t WO = (W + 2 * padding - KW) / stride + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  BasicTensor<T> out(Shape{B, O, HO, WO});
  std::vector<double> acc(HO * WO);
  const T* in = input.ptr();
  const T* w = kernel.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t c = 0; c < C; ++c) {
        const T* plane = in + (b * C + c) * H * W;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          const auto [oy_lo, oy_hi] =
              detail::valid_range(static_cast<std::ptrdiff_t>(ky) - pad, stride, H, HO);
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double wv = w[((o * C + c) * KH + ky) * KW + kx];
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
            const auto [ox_lo, ox_hi] = detail::valid_range(xoff, stride, W, WO);
            for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
              const std::size_t iy = oy * stride + ky - padding;
              const T* row = plane + iy * W;
              double* arow = acc.data() + oy * WO;
              if (stride == 1) {
                const T* src = row + xoff;
                for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) arow[ox] += wv * src[ox];
              } else {
                for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                  arow[ox] += wv * row[static_cast<std::ptrdiff_t>(ox * stride) + xoff];
                }
              }
            }
          }
        }
      }
      T* o_plane = dst + (b * O + o) * HO * WO;
      for (std::size_t i = 0; i < HO * WO; ++i) o_plane[i] = static_cast<T>(acc[i]);
    }
  }

  if (detail::tracking(input, kernel)) {
    detail::record("conv2d", out, [input, kernel, out, stride, padding]() mutable {
      if (!out.has_grad()) return;
      const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
      const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
      const std::size_t HO = out.dim(2), WO = out.dim(3);
      const auto pad = static_cast<std::ptrdiff_t>(padding);
      const T* gout = out.grad().data();
      const T* w = kernel.ptr();
      const T* in = input.ptr();
      if (input.requires_grad()) {
        T* gin = input.mutable_grad().data();
        std::vector<double> acc(H * W);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t o = 0; o < O; ++o) {
              const T* g_plane = gout + (b * O + o) * HO * WO;
              for (std::size_t ky = 0; ky < KH; ++ky) {
                const auto [oy_lo, oy_hi] =
                    detail::valid_range(static_cast<std::ptrdiff_t>(ky) - pad, stride, H, HO);
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const double wv = w[((o * C + c) * KH + ky) * KW + kx];
                  const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
                  const auto [ox_lo, ox_hi] = detail::valid_range(xoff, stride, W, WO);
                  for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                    const std::size_t iy = oy * stride + ky - padding;
                    double* arow = acc.data() + iy * W;
                    const T* grow = g_plane + oy * WO;
                    if (stride == 1) {
                      double* d = arow + xoff;
                      for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) d[ox] += wv * grow[ox];
                    } else {
                      for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                        arow[static_cast<std::ptrdiff_t>(ox * stride) + xoff] += wv * grow[ox];
                      }
                    }
                  }
                }
              }
            }
            T* g_in_plane = gin + (b * C + c) * H * W;
            for (std::size_t i = 0; i < H * W; ++i) g_in_plane[i] += static_cast<T>(acc[i]);
          }
        }
      }
      if (kernel.requires_grad()) {
        T* gw = kernel.mutable_grad().data();
        for (std::size_t o = 0; o < O; ++o) {
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ky = 0; ky < KH; ++ky) {
              const auto [oy_lo, oy_hi] =
                  detail::valid_range(static_cast<std::ptrdiff_t>(ky) - pad, stride, H, HO);
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
                const auto [ox_lo, ox_hi] = detail::valid_range(xoff, stride, W, WO);
                double sum = 0.0;
                if (ox_hi > ox_lo) {
                  for (std::size_t b = 0; b < B; ++b) {
                    const T* g_plane = gout + (b * O + o) * HO * WO;
                    const T* plane = in + (b * C + c) * H * W;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                      const std::size_t iy = oy * stride + ky - padding;
                      const T* src = plane + iy * W +
                                     (static_cast<std::ptrdiff_t>(ox_lo * stride) + xoff);
                      sum += detail::dot_lanes(g_plane + oy * WO + ox_lo, src, ox_hi - ox_lo,
                                               stride);
                    }
                  }
                }
                gw[((o * C + c) * KH + ky) * KW + kx] += static_cast<T>(sum);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Adds bias[C] to every element of channel c of x[B,C,...].
template <class T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (x.rank() < 2) throw ShapeError("add_bias: input must have rank >= 2");
  detail::require_rank(bias, 1, "add_bias", "bias");
  const std::size_t B = x.dim(0), C = x.dim(1);
  if (bias.dim(0) != C) {
    throw ShapeError("add_bias: bias extent " + std::to_string(bias.dim(0)) +
                     " does not match channel extent (dim 1) " + std::to_string(C));
  }
  const std::size_t inner = x.size() / (B * C);
  BasicTensor<T> out(x.shape());
  const T* src = x.ptr();
  const T* bv = bias.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[base + i] = src[base + i] + bv[c];
    }
  }
  if (detail::tracking(x, bias)) {
    detail::record("add_bias", out, [x, bias, out, B, C, inner]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (x.requires_grad()) {
        T* gx = x.mutable_grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        T* gb = bias.mutable_grad().data();
        for (std::size_t c = 0; c < C; ++c) {
          double sum = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const T* p = g + (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) sum += p[i];
          }
          gb[c] += static_cast<T>(sum);
        }
      }
    });
  }
  return out;
}

/// 2x2 max pooling with stride 2. Ties resolve to the first cell in row-major order.
template <class T>
BasicTensor<T> maxpool2(const BasicTensor<T>& x) {
  detail::require_rank(x, 4, "maxpool2", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0) throw ShapeError("maxpool2: height (dim 2) " + std::to_string(H) + " is odd");
  if (W % 2 != 0) throw ShapeError("maxpool2: width (dim 3) " + std::to_string(W) + " is odd");
  const std::size_t HO = H / 2, WO = W / 2;
  BasicTensor<T> out(Shape{B, C, HO, WO});
  std::vector<std::uint32_t> argmax(out.size());
  const T* src = x.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t p = 0; p < B * C; ++p) {
    const T* plane = src + p * H * W;
    for (std::size_t oy = 0; oy < HO; ++oy) {
      for (std::size_t ox = 0; ox < WO; ++ox) {
        const std::size_t cells[4] = {(2 * oy) * W + 2 * ox, (2 * oy) * W + 2 * ox + 1,
                                      (2 * oy + 1) * W + 2 * ox, (2 * oy + 1) * W + 2 * ox + 1};
        std::size_t best = cells[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (plane[cells[k]] > plane[best]) best = cells[k];
        }
        const std::size_t o = p * HO * WO + oy * WO + ox;
        dst[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (detail::tracking(x)) {
    detail::record("maxpool2", out, [x, out, argmax = std::move(argmax), H, W, HO, WO]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* gx = x.mutable_grad().data();
      for (std::size_t o = 0; o < out.size(); ++o) {
        const std::size_t plane = o / (HO * WO);
        gx[plane * H * W + argmax[o]] += g[o];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* src = x.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  if (detail::tracking(x)) {
    detail::record("relu", out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      const T* src = x.ptr();
      T* gx = x.mutable_grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (src[i] > T{0}) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* src = x.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = src[i];
    // Split by sign so exp never overflows.
    if (v >= T{0}) {
      dst[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      dst[i] = e / (T{1} + e);
    }
  }
  if (detail::tracking(x)) {
    detail::record("sigmoid", out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      const T* y = out.ptr();
      T* gx = x.mutable_grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
    });
  }
  return out;
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise_mul");
  BasicTensor<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = pa[i] * pb[i];
  if (detail::tracking(a, b)) {
    detail::record("mul", out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.mutable_grad().data();
        const T* pb = b.ptr();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] * pb[i];
      }
      if (b.requires_grad()) {
        T* gb = b.mutable_grad().data();
        const T* pa = a.ptr();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

namespace detail {

template <class T>
BasicTensor<T> linear_combine(const BasicTensor<T>& a, const BasicTensor<T>& b, T sign,
                              std::string_view op) {
  require_same_shape(a, b, op);
  BasicTensor<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = pa[i] + sign * pb[i];
  if (tracking(a, b)) {
    record(op, out, [a, b, out, sign]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.mutable_grad().data();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        T* gb = b.mutable_grad().data();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += sign * g[i];
      }
    });
  }
  return out;
}

}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::linear_combine(a, b, T{1}, "add");
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::linear_combine(a, b, T{-1}, "sub");
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  BasicTensor<T> out(x.shape());
  const T* src = x.ptr();
  T* dst = out.mutable_ptr();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] * factor;
  if (detail::tracking(x)) {
    detail::record("scale", out, [x, out, factor]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* gx = x.mutable_grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

/// Sum of all elements as a rank-0 tensor.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double total = 0.0;
  for (T v : x.data()) total += v;
  auto out = BasicTensor<T>::scalar(static_cast<T>(total));
  if (detail::tracking(x)) {
    detail::record("sum", out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      T* gx = x.mutable_grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

/// Concatenates along `axis`; all other extents must agree.
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = inputs.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(first.size()));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& t : inputs) {
    if (t.rank() != first.size()) {
      throw ShapeError("concat: rank mismatch, " + shape_string(t.shape()) + " vs " +
                       shape_string(first));
    }
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && t.dim(d) != first[d]) {
        throw ShapeError("concat: extent of dim " + std::to_string(d) + " differs (" +
                         std::to_string(t.dim(d)) + " vs " + std::to_string(first[d]) + ")");
      }
    }
    shape[axis] += t.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_block = shape[axis] * inner;

  BasicTensor<T> out(shape);
  T* dst = out.mutable_ptr();
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t block = t.dim(axis) * inner;
    const T* src = t.ptr();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * block, block, dst + o * out_block + offset);
    }
    offset += block;
  }

  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (Tape::active() != nullptr && any) {
    detail::record("concat", out, [inputs, out, outer, out_block]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      std::size_t offset = 0;
      for (auto& t : inputs) {
        const std::size_t block = t.size() / outer;
        if (t.requires_grad()) {
          T* gt = t.mutable_grad().data();
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = g + o * out_block + offset;
            T* d = gt + o * block;
            for (std::size_t i = 0; i < block; ++i) d[i] += src[i];
          }
        }
        offset += block;
      }
    });
  }
  return out;
}

/// Same values under a new shape with equal element count.
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  BasicTensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (detail::tracking(x)) {
    detail::record("reshape", out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* gx = x.mutable_grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// Rows `indices` of a matrix x[N,V], giving [indices.size(),V].
template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::vector<std::size_t> indices) {
  detail::require_rank(x, 2, "gather_rows", "input");
  const std::size_t N = x.dim(0), V = x.dim(1);
  BasicTensor<T> out(Shape{indices.size(), V});
  T* dst = out.mutable_ptr();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= N) {
      throw ShapeError("gather_rows: row " + std::to_string(indices[r]) + " out of range (dim 0 is " +
                       std::to_string(N) + ")");
    }
    std::copy_n(x.ptr() + indices[r] * V, V, dst + r * V);
  }
  if (detail::tracking(x)) {
    detail::record("gather_rows", out, [x, out, indices = std::move(indices), V]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* gx = x.mutable_grad().data();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        for (std::size_t v = 0; v < V; ++v) gx[indices[r] * V + v] += g[r * V + v];
      }
    });
  }
  return out;
}

/// Flattens per-level head outputs [1, A*V, h, w] into one [N, V] matrix with
/// rows ordered by (level, y, x, anchor).
template <class T>
BasicTensor<T> flatten_anchor_outputs(const std::vector<BasicTensor<T>>& levels,
                                      std::size_t anchors_per_cell, std::size_t values) {
  std::size_t rows = 0;
  for (const auto& l : levels) {
    detail::require_rank(l, 4, "flatten_anchor_outputs", "level");
    if (l.dim(0) != 1 || l.dim(1) != anchors_per_cell * values) {
      throw ShapeError("flatten_anchor_outputs: level shape " + shape_string(l.shape()) +
                       " does not carry " + std::to_string(anchors_per_cell) + "x" +
                       std::to_string(values) + " channels");
    }
    rows += anchors_per_cell * l.dim(2) * l.dim(3);
  }
  BasicTensor<T> out(Shape{rows, values});
  T* dst = out.mutable_ptr();
  std::size_t row = 0;
  for (const auto& l : levels) {
    const std::size_t h = l.dim(2), w = l.dim(3);
    const T* src = l.ptr();
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t a = 0; a < anchors_per_cell; ++a, ++row) {
          for (std::size_t v = 0; v < values; ++v) {
            dst[row * values + v] = src[((a * values + v) * h + y) * w + x];
          }
        }
      }
    }
  }
  bool any = false;
  for (const auto& l : levels) any = any || l.requires_grad();
  if (Tape::active() != nullptr && any) {
    detail::record("flatten_anchor_outputs", out,
                   [levels, out, anchors_per_cell, values]() mutable {
                     if (!out.has_grad()) return;
                     const T* g = out.grad().data();
                     std::size_t row = 0;
                     for (auto& l : levels) {
                       const std::size_t h = l.dim(2), w = l.dim(3);
                       if (!l.requires_grad()) {
                         row += anchors_per_cell * h * w;
                         continue;
                       }
                       T* gl = l.mutable_grad().data();
                       for (std::size_t y = 0; y < h; ++y) {
                         for (std::size_t x = 0; x < w; ++x) {
                           for (std::size_t a = 0; a < anchors_per_cell; ++a, ++row) {
                             for (std::size_t v = 0; v < values; ++v) {
                               gl[((a * values + v) * h + y) * w + x] += g[row * values + v];
                             }
                           }
                         }
                       }
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward and optimization

/// Replays the active tape from a scalar loss, filling gradients of every
/// tensor that requires them.
template <class T>
void backward(BasicTensor<T> loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  Tape* tape = Tape::active();
  if (tape == nullptr || !loss.requires_grad()) {
    throw std::logic_error("backward: loss is not connected to an active tape");
  }
  loss.mutable_grad()[0] += T{1};
  tape->replay();
}

/// p <- p - lr * (grad + weight_decay * p), then clears the gradient.
template <class T>
void sgd_step(std::span<BasicTensor<T>> params, double learning_rate, double weight_decay) {
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw std::logic_error("sgd_step: parameter of shape " + shape_string(p.shape()) +
                             " has no gradient");
    }
  }
  for (auto& p : params) {
    T* v = p.mutable_ptr();
    const T* g = p.grad().data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = static_cast<T>(v[i] - learning_rate * (g[i] + weight_decay * v[i]));
    }
    p.clear_grad();
  }
}

template <class T>
void sgd_step(std::vector<BasicTensor<T>>& params, double learning_rate, double weight_decay) {
  sgd_step(std::span<BasicTensor<T>>(params), learning_rate, weight_decay);
}

/// Uniform Glorot initialization in +-sqrt(6 / (fan_in + fan_out)).
template <class T, class Rng>
void glorot_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

}  // namespace fogfuse
