#pragma once

// Minimal tape-free reverse-mode autodiff over Tensor<T>. Every op records
// its inputs and a backward closure on the result node; backward() walks the
// graph in reverse topological order. Only what the networks and losses need
// is implemented.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "space/tensor.hpp"

namespace space {

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Only meaningful on leaves; interior nodes derive the flag from inputs.
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Gradient accumulated by backward(); zeros if nothing reached this node.
  Tensor<T> grad() const {
    if (node_->grad.shape() == node_->value.shape()) return node_->grad;
    return Tensor<T>(node_->value.shape());
  }
  void zero_grad() {
    if (node_->grad.shape() == node_->value.shape()) node_->grad.fill(T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void accumulate(Node<T>& target, const T* src) {
  if (!target.requires_grad) return;
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace detail

// Runs reverse-mode accumulation from a scalar root. Gradients add into
// existing buffers, so callers zero parameter grads between steps.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw ContractError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node<T>* child = n->inputs[idx++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior grads are scratch space for this pass.
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad = Tensor<T>(n->value.shape());
  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// Same value, no path back to the inputs.
template <typename T>
Var<T> stop_gradient(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(*n.inputs[0], n.grad.data());
    detail::accumulate(*n.inputs[1], n.grad.data());
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(*n.inputs[0], n.grad.data());
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

// (a - b)^2 elementwise.
template <typename T>
Var<T> sq_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sq_diff");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T d = a.value()[i] - b.value()[i];
    out[i] = d * d;
  }
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += T{2} * (av[i] - bv[i]) * n.grad[i];
    }
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= T{2} * (av[i] - bv[i]) * n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  require_same_shape(a.shape(), c.shape(), "mul_const");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  return detail::make_result<T>(std::move(out), {a}, [c](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c[i] * n.grad[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return detail::make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

// Sum of all elements; accumulates in long double for order-insensitive precision.
template <typename T>
Var<T> sum(const Var<T>& a) {
  long double acc = 0;
  for (T v : a.value().vec()) acc += v;
  return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    auto& g = n.inputs[0]->grad_buffer();
    const T up = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > T{0} ? a.value()[i] : T{0};
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (n.value[i] > T{0}) g[i] += n.grad[i];
  });
}

struct ConvGeometry {
  std::size_t in_c, in_h, in_w, kernel, stride, pad, out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& x, std::size_t kernel, std::size_t stride,
                                  std::size_t pad) {
  if (x.size() != 3) throw ContractError("conv input must be rank 3, got " + shape_str(x));
  if (x[1] + 2 * pad < kernel || x[2] + 2 * pad < kernel)
    throw ContractError("conv kernel " + std::to_string(kernel) + " larger than padded input " +
                        shape_str(x));
  return {x[0],
          x[1],
          x[2],
          kernel,
          stride,
          pad,
          (x[1] + 2 * pad - kernel) / stride + 1,
          (x[2] + 2 * pad - kernel) / stride + 1};
}

namespace detail {

// cols: (in_c*k*k) x (out_h*out_w)
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T{0} : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* dst = dx + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

// 2-D convolution of a (Cin, H, W) input with (Cout, Cin, K, K) weights and
// (Cout) bias, zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[2] != ws[3]) throw ContractError("conv weight must be (Cout,Cin,K,K)");
  if (x.shape().size() != 3 || ws[1] != x.shape()[0])
    throw ContractError("conv input " + shape_str(x.shape()) + " does not match weight " +
                        shape_str(ws));
  if (bias.shape() != Shape{ws[0]}) throw ContractError("conv bias must be (Cout)");
  const ConvGeometry g = conv_geometry(x.shape(), ws[2], stride, pad);
  const std::size_t out_c = ws[0];
  const std::size_t patch = g.in_c * g.kernel * g.kernel;
  const std::size_t hw = g.out_h * g.out_w;

  auto cols = std::make_shared<std::vector<T>>(patch * hw);
  detail::im2col(x.value().data(), g, cols->data());

  Tensor<T> out({out_c, g.out_h, g.out_w});
  detail::MatMap<T> y(out.data(), out_c, hw);
  detail::ConstMatMap<T> w(weight.value().data(), out_c, patch);
  detail::ConstMatMap<T> cm(cols->data(), patch, hw);
  y.noalias() = w * cm;
  for (std::size_t o = 0; o < out_c; ++o) y.row(o).array() += bias.value()[o];

  return detail::make_result<T>(
      std::move(out), {x, weight, bias}, [g, cols, out_c, patch, hw](Node<T>& n) {
        detail::ConstMatMap<T> dy(n.grad.data(), out_c, hw);
        Node<T>& xin = *n.inputs[0];
        Node<T>& win = *n.inputs[1];
        Node<T>& bin = *n.inputs[2];
        if (win.requires_grad) {
          detail::MatMap<T> dw(win.grad_buffer().data(), out_c, patch);
          detail::ConstMatMap<T> cm(cols->data(), patch, hw);
          dw.noalias() += dy * cm.transpose();
        }
        if (bin.requires_grad) {
          auto& db = bin.grad_buffer();
          for (std::size_t o = 0; o < out_c; ++o) db[o] += dy.row(o).sum();
        }
        if (xin.requires_grad) {
          std::vector<T> dcols(patch * hw);
          detail::MatMap<T> dc(dcols.data(), patch, hw);
          detail::ConstMatMap<T> w(win.value.data(), out_c, patch);
          dc.noalias() = w.transpose() * dy;
          detail::col2im_add(dcols.data(), g, xin.grad_buffer().data());
        }
      });
}

// Average pooling with zero padding counted in the divisor.
template <typename T>
Var<T> avg_pool2d(const Var<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad = 0) {
  const ConvGeometry g = conv_geometry(x.shape(), kernel, stride, pad);
  Tensor<T> out({g.in_c, g.out_h, g.out_w});
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  auto visit = [g](auto&& fn) {
    for (std::size_t c = 0; c < g.in_c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox)
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
              fn((c * g.out_h + oy) * g.out_w + ox,
                 (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                     static_cast<std::size_t>(ix));
            }
          }
  };
  const T* xv = x.value().data();
  visit([&](std::size_t o, std::size_t i) { out[o] += xv[i] * inv; });
  return detail::make_result<T>(std::move(out), {x}, [visit, inv](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    T* gx = n.inputs[0]->grad_buffer().data();
    const T* gy = n.grad.data();
    visit([&](std::size_t o, std::size_t i) { gx[i] += gy[o] * inv; });
  });
}

// Per-axis bilinear sampling table (half-pixel centers, edge clamped).
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

inline LinearTaps linear_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

// Bilinear resize of a (C, H, W) tensor; plain-tensor version.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ContractError("resize_bilinear expects (C,H,W)");
  const std::size_t c = x.dim(0), in_h = x.dim(1), in_w = x.dim(2);
  if (in_h == out_h && in_w == out_w) return x;
  const LinearTaps ty = linear_taps(in_h, out_h), tx = linear_taps(in_w, out_w);
  Tensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = ty.frac[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const double fx = tx.frac[xx];
        const double v00 = x(ch, ty.lo[y], tx.lo[xx]), v01 = x(ch, ty.lo[y], tx.hi[xx]);
        const double v10 = x(ch, ty.hi[y], tx.lo[xx]), v11 = x(ch, ty.hi[y], tx.hi[xx]);
        out(ch, y, xx) = static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                        fy * ((1 - fx) * v10 + fx * v11));
      }
    }
  return out;
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape in = x.shape();
  if (in.size() == 3 && in[1] == out_h && in[2] == out_w) return x;
  Tensor<T> out = resize_bilinear(x.value(), out_h, out_w);
  return detail::make_result<T>(std::move(out), {x}, [in, out_h, out_w](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    const LinearTaps ty = linear_taps(in[1], out_h), tx = linear_taps(in[2], out_w);
    auto& gx = n.inputs[0]->grad_buffer();
    for (std::size_t ch = 0; ch < in[0]; ++ch)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const T g = n.grad(ch, y, xx);
          const T fy = static_cast<T>(ty.frac[y]), fx = static_cast<T>(tx.frac[xx]);
          gx(ch, ty.lo[y], tx.lo[xx]) += (1 - fy) * (1 - fx) * g;
          gx(ch, ty.lo[y], tx.hi[xx]) += (1 - fy) * fx * g;
          gx(ch, ty.hi[y], tx.lo[xx]) += fy * (1 - fx) * g;
          gx(ch, ty.hi[y], tx.hi[xx]) += fy * fx * g;
        }
  });
}

}  // namespace space
