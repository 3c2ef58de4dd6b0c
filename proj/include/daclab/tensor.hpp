#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "daclab/util.hpp"

namespace daclab {

// Dense row-major tensor with reverse-mode differentiation. Each op builds a
// graph node whose backward closure accumulates into the parents' grads.
// Graphs are values confined to one worker; parameters are long-lived leaves.
template <class T>
class Tensor {
 public:
  struct Node {
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily; empty means all-zero
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    std::size_t numel() const { return value.size(); }
    std::vector<T>& ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, T(0));
  }

  static Tensor full(std::vector<std::size_t> shape, T fill, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, fill);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_values({}, {v}, requires_grad);
  }

  static Tensor from_values(std::vector<std::size_t> shape, std::vector<T> values,
                            bool requires_grad = false) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != values.size()) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  // Identity matrix, exact.
  static Tensor identity(std::size_t d, bool requires_grad = false) {
    std::vector<T> v(d * d, T(0));
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = T(1);
    return from_values({d, d}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op_name() const { return node_->op; }

  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& mutable_values() { return node_->value; }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    }
    return node_->value[0];
  }

  // Gradient as a vector; zeros if backward never reached this tensor.
  std::vector<T> grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return std::vector<T>(node_->value.size(), T(0));
  }

  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the values (fresh leaf, no graph).
  Tensor detach(bool requires_grad = false) const {
    return from_values(node_->shape, node_->value, requires_grad);
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls.
  void backward() const {
    if (numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(node_->shape));
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    topo(node_.get(), seen, order);
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && n->requires_grad) n->backward(*n);
    }
  }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<T>&&, bool requires_grad,
                          T fill) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.assign(n, fill);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
    if (!n->requires_grad || seen.count(n)) return;
    seen.insert(n);
    // Iterative DFS; graphs can be a few thousand nodes deep over training.
    struct Frame { Node* node; std::size_t next; };
    std::vector<Frame> stack{{n, 0}};
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        Node* p = f.node->parents[f.next++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
std::shared_ptr<typename Tensor<T>::Node> make_node(std::vector<std::size_t> shape,
                                                    std::vector<T> value, const char* op,
                                                    std::vector<Tensor<T>> parents) {
  auto node = std::make_shared<typename Tensor<T>::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (auto& p : parents) {
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(p.node());
  }
  return node;
}

template <class T>
[[noreturn]] void shape_error(const char* op, const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

}  // namespace detail

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) {
    std::vector<T> v(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    auto node = detail::make_node<T>(sa, std::move(v), "add", {a, b});
    node->backward = [](typename Tensor<T>::Node& self) {
      for (int pi = 0; pi < 2; ++pi) {
        auto& p = *self.parents[pi];
        if (!p.requires_grad) continue;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
    return Tensor<T>(node);
  }
  // Bias broadcast: (B,D)+(D) over rows, or (B,C,H,W)+(C) over channels.
  if (sa.size() == 2 && sb.size() == 1 && sb[0] == sa[1]) {
    std::size_t rows = sa[0], cols = sa[1];
    std::vector<T> v(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = av[r * cols + c] + bv[c];
    auto node = detail::make_node<T>(sa, std::move(v), "add", {a, b});
    node->backward = [rows, cols](typename Tensor<T>::Node& self) {
      auto& pa = *self.parents[0];
      if (pa.requires_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      auto& pb = *self.parents[1];
      if (pb.requires_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    };
    return Tensor<T>(node);
  }
  if (sa.size() == 4 && sb.size() == 1 && sb[0] == sa[1]) {
    std::size_t batch = sa[0], ch = sa[1], hw = sa[2] * sa[3];
    std::vector<T> v(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < ch; ++c) {
        T bias = bv[c];
        std::size_t base = (n * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) v[base + i] = av[base + i] + bias;
      }
    auto node = detail::make_node<T>(sa, std::move(v), "add", {a, b});
    node->backward = [batch, ch, hw](typename Tensor<T>::Node& self) {
      auto& pa = *self.parents[0];
      if (pa.requires_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      auto& pb = *self.parents[1];
      if (pb.requires_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < ch; ++c) {
            std::size_t base = (n * ch + c) * hw;
            T acc = T(0);
            for (std::size_t i = 0; i < hw; ++i) acc += self.grad[base + i];
            g[c] += acc;
          }
      }
    };
    return Tensor<T>(node);
  }
  detail::shape_error<T>("add", sa, sb);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_error<T>("sub", a.shape(), b.shape());
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  auto node = detail::make_node<T>(a.shape(), std::move(v), "sub", {a, b});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& pa = *self.parents[0];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_error<T>("mul", a.shape(), b.shape());
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto node = detail::make_node<T>(a.shape(), std::move(v), "mul", {a, b});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> scalar_mul(const Tensor<T>& a, T c) {
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
  auto node = detail::make_node<T>(a.shape(), std::move(v), "scalar_mul", {a});
  node->backward = [c](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] > T(0) ? av[i] : T(0);
  auto node = detail::make_node<T>(a.shape(), std::move(v), "relu", {a});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > T(0)) g[i] += self.grad[i];
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * av[i];
  auto node = detail::make_node<T>(a.shape(), std::move(v), "square", {a});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * T(2) * p.value[i];
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(av[i]);
  auto node = detail::make_node<T>(a.shape(), std::move(v), "exp", {a});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  };
  return Tensor<T>(node);
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.values()) acc += x;
  auto node = detail::make_node<T>({}, {acc}, "sum", {a});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  T acc = T(0);
  for (T x : a.values()) acc += x;
  T inv = T(1) / T(a.numel());
  auto node = detail::make_node<T>({}, {acc * inv}, "mean", {a});
  node->backward = [inv](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * inv;
  };
  return Tensor<T>(node);
}

// ---- shape ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (n != a.numel()) detail::shape_error<T>("reshape", a.shape(), shape);
  auto node = detail::make_node<T>(std::move(shape), a.values(), "reshape", {a});
  node->backward = [](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  };
  return Tensor<T>(node);
}

// ---- linear algebra ----

// (B,I) x (I,O) -> (B,O)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    detail::shape_error<T>("matmul", a.shape(), b.shape());
  std::size_t B = a.shape()[0], I = a.shape()[1], O = b.shape()[1];
  std::vector<T> v(B * O, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t k = 0; k < I; ++k) {
      T x = av[r * I + k];
      const T* brow = bv + k * O;
      T* out = v.data() + r * O;
      for (std::size_t c = 0; c < O; ++c) out[c] += x * brow[c];
    }
  auto node = detail::make_node<T>({B, O}, std::move(v), "matmul", {a, b});
  node->backward = [B, I, O](typename Tensor<T>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t c = 0; c < O; ++c) {
          T gv = self.grad[r * O + c];
          for (std::size_t k = 0; k < I; ++k) g[r * I + k] += gv * pb.value[k * O + c];
        }
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t k = 0; k < I; ++k) {
          T x = pa.value[r * I + k];
          for (std::size_t c = 0; c < O; ++c) g[k * O + c] += x * self.grad[r * O + c];
        }
    }
  };
  return Tensor<T>(node);
}

// Dense layer / projection: (B,I) x W(O,I) -> (B,O), y = x W^T.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
    detail::shape_error<T>("linear", x.shape(), w.shape());
  std::size_t B = x.shape()[0], I = x.shape()[1], O = w.shape()[0];
  std::vector<T> v(B * O, T(0));
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t c = 0; c < O; ++c) {
      const T* xr = xv + r * I;
      const T* wr = wv + c * I;
      T acc = T(0);
      for (std::size_t k = 0; k < I; ++k) acc += xr[k] * wr[k];
      v[r * O + c] = acc;
    }
  auto node = detail::make_node<T>({B, O}, std::move(v), "linear", {x, w});
  node->backward = [B, I, O](typename Tensor<T>::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t c = 0; c < O; ++c) {
          T gv = self.grad[r * O + c];
          const T* wr = pw.value.data() + c * I;
          T* gr = g.data() + r * I;
          for (std::size_t k = 0; k < I; ++k) gr[k] += gv * wr[k];
        }
    }
    if (pw.requires_grad) {
      auto& g = pw.ensure_grad();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t c = 0; c < O; ++c) {
          T gv = self.grad[r * O + c];
          const T* xr = px.value.data() + r * I;
          T* gw = g.data() + c * I;
          for (std::size_t k = 0; k < I; ++k) gw[k] += gv * xr[k];
        }
    }
  };
  return Tensor<T>(node);
}

// ---- convolution ----

enum class Padding { valid, same };

// x (B,C,H,W), w (O,C,kh,kw), stride >= 1. "same" pads so out = ceil(in/stride).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1,
                 Padding padding = Padding::valid) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || x.shape()[1] != w.shape()[1])
    detail::shape_error<T>("conv2d", x.shape(), w.shape());
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  std::size_t O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];

  std::size_t pad_top = 0, pad_left = 0, oh, ow;
  if (padding == Padding::same) {
    oh = (H + stride - 1) / stride;
    ow = (W + stride - 1) / stride;
    std::size_t ph = (oh - 1) * stride + kh > H ? (oh - 1) * stride + kh - H : 0;
    std::size_t pw = (ow - 1) * stride + kw > W ? (ow - 1) * stride + kw - W : 0;
    pad_top = ph / 2;
    pad_left = pw / 2;
  } else {
    if (H < kh || W < kw) detail::shape_error<T>("conv2d", x.shape(), w.shape());
    oh = (H - kh) / stride + 1;
    ow = (W - kw) / stride + 1;
  }

  std::vector<T> v(B * O * oh * ow, T(0));
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          T acc = T(0);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i) {
              std::ptrdiff_t iy = std::ptrdiff_t(y * stride + i) - std::ptrdiff_t(pad_top);
              if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
              for (std::size_t j = 0; j < kw; ++j) {
                std::ptrdiff_t ix = std::ptrdiff_t(xx * stride + j) - std::ptrdiff_t(pad_left);
                if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                acc += xv[((n * C + c) * H + iy) * W + ix] * wv[((o * C + c) * kh + i) * kw + j];
              }
            }
          v[((n * O + o) * oh + y) * ow + xx] = acc;
        }

  auto node = detail::make_node<T>({B, O, oh, ow}, std::move(v), "conv2d", {x, w});
  node->backward = [B, C, H, W, O, kh, kw, oh, ow, stride, pad_top,
                    pad_left](typename Tensor<T>::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    T* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
    T* gw = pw.requires_grad ? pw.ensure_grad().data() : nullptr;
    const T* xv = px.value.data();
    const T* wv = pw.value.data();
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            T gv = self.grad[((n * O + o) * oh + y) * ow + xx];
            if (gv == T(0)) continue;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < kh; ++i) {
                std::ptrdiff_t iy = std::ptrdiff_t(y * stride + i) - std::ptrdiff_t(pad_top);
                if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
                for (std::size_t j = 0; j < kw; ++j) {
                  std::ptrdiff_t ix = std::ptrdiff_t(xx * stride + j) - std::ptrdiff_t(pad_left);
                  if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                  std::size_t xi = ((n * C + c) * H + iy) * W + ix;
                  std::size_t wi = ((o * C + c) * kh + i) * kw + j;
                  if (gx) gx[xi] += gv * wv[wi];
                  if (gw) gw[wi] += gv * xv[xi];
                }
              }
          }
  };
  return Tensor<T>(node);
}

// Max pooling, window k x k, stride = k. Ties resolve to the first element.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k) {
  if (x.shape().size() != 4) {
    throw std::invalid_argument("maxpool2d: expected 4-d input, got " + shape_str(x.shape()));
  }
  if (k == 0 || x.shape()[2] < k || x.shape()[3] < k)
    throw std::invalid_argument("maxpool2d: window " + std::to_string(k) +
                                " does not fit input " + shape_str(x.shape()));
  std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  std::size_t oh = H / k, ow = W / k;
  std::vector<T> v(B * C * oh * ow);
  std::vector<std::size_t> argmax(v.size());
  const T* xv = x.values().data();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              std::size_t idx = ((n * C + c) * H + y * k + i) * W + xx * k + j;
              if (xv[idx] > best) {
                best = xv[idx];
                best_i = idx;
              }
            }
          std::size_t oi = ((n * C + c) * oh + y) * ow + xx;
          v[oi] = best;
          argmax[oi] = best_i;
        }
  auto node = detail::make_node<T>({B, C, oh, ow}, std::move(v), "maxpool2d", {x});
  node->backward = [argmax](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[argmax[i]] += self.grad[i];
  };
  return Tensor<T>(node);
}

// ---- softmax family ----

// Log-softmax over the last axis, max-shifted for stability.
template <class T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  if (a.shape().empty()) {
    throw std::invalid_argument("log_softmax: scalar input");
  }
  std::size_t cols = a.shape().back();
  std::size_t rows = a.numel() / cols;
  std::vector<T> v(a.numel());
  const T* av = a.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = av + r * cols;
    T* out = v.data() + r * cols;
    T mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    T acc = T(0);
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(in[c] - mx);
    T lse = mx + std::log(acc);
    for (std::size_t c = 0; c < cols; ++c) out[c] = in[c] - lse;
  }
  auto node = detail::make_node<T>(a.shape(), std::move(v), "log_softmax", {a});
  node->backward = [rows, cols](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      T gsum = T(0);
      for (std::size_t c = 0; c < cols; ++c) gsum += self.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t i = r * cols + c;
        g[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
      }
    }
  };
  return Tensor<T>(node);
}

// Mean negative log-likelihood of the target class per row.
// logp (B,C) should come from log_softmax; labels are class indices.
template <class T>
Tensor<T> nll_loss(const Tensor<T>& logp, const std::vector<std::size_t>& labels) {
  if (logp.shape().size() != 2 || logp.shape()[0] != labels.size()) {
    throw std::invalid_argument("nll_loss: logp " + shape_str(logp.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  std::size_t B = logp.shape()[0], C = logp.shape()[1];
  for (std::size_t b = 0; b < B; ++b)
    if (labels[b] >= C)
      throw std::invalid_argument("nll_loss: label " + std::to_string(labels[b]) +
                                  " out of range for " + std::to_string(C) + " classes");
  T acc = T(0);
  const T* lp = logp.values().data();
  for (std::size_t b = 0; b < B; ++b) acc -= lp[b * C + labels[b]];
  T inv = T(1) / T(B);
  auto node = detail::make_node<T>({}, {acc * inv}, "nll_loss", {logp});
  node->backward = [labels, C, inv](typename Tensor<T>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t b = 0; b < labels.size(); ++b) g[b * C + labels[b]] -= self.grad[0] * inv;
  };
  return Tensor<T>(node);
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  return nll_loss(log_softmax(logits), labels);
}

// Named map of trainable tensors; iteration is lexicographic by name.
template <class T>
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void insert(const std::string& name, Tensor<T> t) {
    if (params_.count(name))
      throw std::invalid_argument("parameter set: duplicate name '" + name + "'");
    params_.emplace(name, std::move(t));
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("parameter set: unknown name '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("parameter set: unknown name '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  // Deep copy with fresh leaves (no shared graph state).
  ParameterSet clone(bool requires_grad) const {
    ParameterSet out;
    for (const auto& [name, t] : params_) out.insert(name , t.detach(requires_grad));
    return out;
  }

 private:
  Map params_;
};

}  // namespace daclab
