// Reverse-mode automatic differentiation on dense tensors.
//
// A Tape records executed operations in order; backward() replays adjoints in
// exact reverse execution order. Leaves (parameters, constants) live outside
// the recorded order, so parameter gradients accumulate across backward calls
// until an optimizer clears them. Everything is single-threaded per tape.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cdsp/tensor.hpp"

namespace cdsp {

template <class T>
class Tape;

template <class T>
struct Node {
  TensorData<T> value;
  TensorData<T> grad;  // empty vector means "absent"
  bool requires_grad = false;
  Tape<T>* tape = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  bool has_grad() const { return !grad.data.empty(); }
  TensorData<T>& ensure_grad() {
    if (!has_grad()) grad = TensorData<T>::zeros(value.shape);
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const TensorData<T>& value() const { return node_->value; }
  TensorData<T>& value() { return node_->value; }
  const TensorData<T>& grad() const {
    CDSP_CHECK(node_->has_grad(), "gradient absent; run backward() first");
    return node_->grad;
  }
  bool has_grad() const { return node_ && node_->has_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_ && node_->has_grad())
      std::fill(node_->grad.data.begin(), node_->grad.data.end(), T(0));
  }

  std::shared_ptr<Node<T>> node() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
class Tape {
 public:
  Var<T> leaf(TensorData<T> v, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    n->tape = this;
    return Var<T>(n);
  }
  Var<T> constant(TensorData<T> v) { return leaf(std::move(v), false); }

  Var<T> record(TensorData<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->tape = this;
    for (auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->parents = std::move(parents);
    if (n->requires_grad) {
      n->backprop = std::move(backprop);
      order_.push_back(n);
    }
    return Var<T>(n);
  }

  // Populates grads of every requires_grad ancestor of `loss`.
  void backward(const Var<T>& loss) {
    CDSP_CHECK(loss, "backward on empty Var");
    CDSP_CHECK(loss.value().numel() == 1,
               "backward requires a scalar loss, got shape ", shape_str(loss.value().shape));
    CDSP_CHECK(loss.node()->tape == this, "loss was not produced on this tape");
    CDSP_CHECK(!backward_done_, "backward already called on this tape; reset() first");
    CDSP_CHECK(loss.requires_grad(), "loss is detached from every differentiable input");
    backward_done_ = true;
    loss.node()->ensure_grad().data[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.backprop && n.has_grad()) n.backprop(n);
    }
  }

  // Drops recorded operations. Leaf nodes (and their accumulated grads)
  // survive, which is what per-sample accumulation over a batch needs.
  void reset() {
    order_.clear();
    backward_done_ = false;
  }

  size_t recorded_ops() const { return order_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> order_;
  bool backward_done_ = false;
};

namespace detail {

template <class T>
Tape<T>* tape_of(const Var<T>& a) {
  CDSP_CHECK(a, "operation on empty Var");
  return a.node()->tape;
}

template <class T>
Tape<T>* same_tape(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = tape_of(a);
  CDSP_CHECK(t == tape_of(b), "operands recorded on different tapes");
  return t;
}

struct AxisView {
  int64_t outer, n, inner;
};

inline AxisView axis_view(const Shape& s, int axis) {
  CDSP_CHECK(axis >= 0 && axis < static_cast<int>(s.size()),
             "axis ", axis, " out of range for shape ", shape_str(s));
  AxisView v{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace detail

// ---- elementwise ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::same_tape(a, b);
  CDSP_CHECK(a.value().same_shape(b.value()), "add: shape mismatch ",
             shape_str(a.value().shape), " vs ", shape_str(b.value().shape));
  TensorData<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return t->record(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = *self.parents[static_cast<size_t>(pi)];
      if (!p.requires_grad) continue;
      auto& pg = p.ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) pg[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::same_tape(a, b);
  CDSP_CHECK(a.value().same_shape(b.value()), "sub: shape mismatch ",
             shape_str(a.value().shape), " vs ", shape_str(b.value().shape));
  TensorData<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return t->record(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::same_tape(a, b);
  CDSP_CHECK(a.value().same_shape(b.value()), "mul: shape mismatch ",
             shape_str(a.value().shape), " vs ", shape_str(b.value().shape));
  TensorData<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return t->record(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tape<T>* t = detail::tape_of(a);
  TensorData<T> out = a.value();
  for (auto& v : out.data) v *= s;
  return t->record(std::move(out), {a.node()}, [s](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += s * self.grad[i];
  });
}

// Multiply by a learnable 1-element tensor (the LoRM delta).
template <class T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  Tape<T>* t = detail::same_tape(a, s);
  CDSP_CHECK(s.value().numel() == 1, "scale_by expects a 1-element scale");
  T sv = s.value()[0];
  TensorData<T> out = a.value();
  for (auto& v : out.data) v *= sv;
  return t->record(std::move(out), {a.node(), s.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& ps = *self.parents[1];
    T sv = ps.value[0];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += sv * self.grad[i];
    }
    if (ps.requires_grad) {
      T acc = 0;
      for (int64_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * pa.value[i];
      ps.ensure_grad()[0] += acc;
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tape<T>* t = detail::tape_of(a);
  TensorData<T> out = a.value();
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return t->record(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (p.value[i] > T(0)) g[i] += self.grad[i];
  });
}

inline constexpr double kLogGuard = 1e-12;

// log(max(x, eps)). Every loss log in the library goes through this guard.
template <class T>
Var<T> log_guard(const Var<T>& a, T eps = T(kLogGuard)) {
  Tape<T>* t = detail::tape_of(a);
  TensorData<T> out = a.value();
  for (auto& v : out.data) v = std::log(std::max(v, eps));
  return t->record(std::move(out), {a.node()}, [eps](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (p.value[i] > eps) g[i] += self.grad[i] / p.value[i];
  });
}

// Strict log: domain error on nonpositive input.
template <class T>
Var<T> log_strict(const Var<T>& a) {
  for (const auto& v : a.value().data)
    CDSP_CHECK(v > T(0), "log of nonpositive value ", v);
  Tape<T>* t = detail::tape_of(a);
  TensorData<T> out = a.value();
  for (auto& v : out.data) v = std::log(v);
  return t->record(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] / p.value[i];
  });
}

template <class T>
Var<T> exp_op(const Var<T>& a) {
  Tape<T>* t = detail::tape_of(a);
  TensorData<T> out = a.value();
  for (auto& v : out.data) v = std::exp(v);
  return t->record(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

// ---- linear algebra ----

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  CDSP_CHECK(av.rank() == 2 && bv.rank() == 2, "matmul expects 2-D operands");
  CDSP_CHECK(av.shape[1] == bv.shape[0], "matmul dimension mismatch: ",
             shape_str(av.shape), " x ", shape_str(bv.shape));
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  TensorData<T> out({m, n});
  // i,k,j order: contributions for each out[i,j] still arrive with k ascending,
  // so results match a plain i,j,k oracle bit for bit.
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      T aik = av.at(i, kk);
      if (aik == T(0)) continue;
      const T* brow = &bv.data[static_cast<size_t>(kk) * n];
      T* orow = &out.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  return t->record(std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& da = pa.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          T gij = g.at(i, j);
          if (gij == T(0)) continue;
          for (int kk = 0; kk < k; ++kk) da.at(i, kk) += gij * pb.value.at(kk, j);
        }
    }
    if (pb.requires_grad) {
      auto& db = pb.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          T aik = pa.value.at(i, kk);
          if (aik == T(0)) continue;
          for (int j = 0; j < n; ++j) db.at(kk, j) += aik * g.at(i, j);
        }
    }
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  Tape<T>* t = detail::tape_of(a);
  const auto& av = a.value();
  CDSP_CHECK(av.rank() == 2, "transpose expects a 2-D tensor");
  const int m = av.shape[0], n = av.shape[1];
  TensorData<T> out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return t->record(std::move(out), {a.node()}, [m, n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g.at(i, j) += self.grad.at(j, i);
  });
}

// Scales column j of a by v[j]: out[i,j] = a[i,j] * v[j].
template <class T>
Var<T> scale_columns(const Var<T>& a, const Var<T>& v) {
  Tape<T>* t = detail::same_tape(a, v);
  const auto& av = a.value();
  const auto& vv = v.value();
  CDSP_CHECK(av.rank() == 2 && vv.rank() == 1, "scale_columns expects matrix and vector");
  CDSP_CHECK(av.shape[1] == vv.shape[0], "scale_columns size mismatch: ",
             shape_str(av.shape), " vs ", shape_str(vv.shape));
  const int m = av.shape[0], n = av.shape[1];
  TensorData<T> out = av;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) *= vv[j];
  return t->record(std::move(out), {a.node(), v.node()}, [m, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pv = *self.parents[1];
    if (pa.requires_grad) {
      auto& da = pa.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) da.at(i, j) += self.grad.at(i, j) * pv.value[j];
    }
    if (pv.requires_grad) {
      auto& dv = pv.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dv[j] += self.grad.at(i, j) * pa.value.at(i, j);
    }
  });
}

// ---- normalization ----

template <class T>
Var<T> softmax(const Var<T>& a, int axis) {
  Tape<T>* t = detail::tape_of(a);
  const auto& av = a.value();
  auto view = detail::axis_view(av.shape, axis);
  TensorData<T> out(av.shape);
  for (int64_t o = 0; o < view.outer; ++o)
    for (int64_t in = 0; in < view.inner; ++in) {
      const int64_t base = o * view.n * view.inner + in;
      T mx = av[base];
      for (int64_t i = 1; i < view.n; ++i) mx = std::max(mx, av[base + i * view.inner]);
      T sum = 0;
      for (int64_t i = 0; i < view.n; ++i) {
        T e = std::exp(av[base + i * view.inner] - mx);
        out[base + i * view.inner] = e;
        sum += e;
      }
      for (int64_t i = 0; i < view.n; ++i) out[base + i * view.inner] /= sum;
    }
  return t->record(std::move(out), {a.node()}, [view](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t o = 0; o < view.outer; ++o)
      for (int64_t in = 0; in < view.inner; ++in) {
        const int64_t base = o * view.n * view.inner + in;
        T dot = 0;
        for (int64_t i = 0; i < view.n; ++i) {
          const int64_t ix = base + i * view.inner;
          dot += self.grad[ix] * self.value[ix];
        }
        for (int64_t i = 0; i < view.n; ++i) {
          const int64_t ix = base + i * view.inner;
          g[ix] += self.value[ix] * (self.grad[ix] - dot);
        }
      }
  });
}

// Each slice along `axis` is divided by max(L2 norm, eps).
template <class T>
Var<T> l2_normalize(const Var<T>& a, int axis, T eps = T(1e-8)) {
  CDSP_CHECK(eps > T(0), "l2_normalize eps must be positive");
  Tape<T>* t = detail::tape_of(a);
  const auto& av = a.value();
  auto view = detail::axis_view(av.shape, axis);
  TensorData<T> out(av.shape);
  for (int64_t o = 0; o < view.outer; ++o)
    for (int64_t in = 0; in < view.inner; ++in) {
      const int64_t base = o * view.n * view.inner + in;
      T ss = 0;
      for (int64_t i = 0; i < view.n; ++i) {
        T x = av[base + i * view.inner];
        ss += x * x;
      }
      T norm = std::sqrt(ss);
      T denom = std::max(norm, eps);
      for (int64_t i = 0; i < view.n; ++i)
        out[base + i * view.inner] = av[base + i * view.inner] / denom;
    }
  return t->record(std::move(out), {a.node()}, [view, eps](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t o = 0; o < view.outer; ++o)
      for (int64_t in = 0; in < view.inner; ++in) {
        const int64_t base = o * view.n * view.inner + in;
        T ss = 0;
        for (int64_t i = 0; i < view.n; ++i) {
          T x = p.value[base + i * view.inner];
          ss += x * x;
        }
        T norm = std::sqrt(ss);
        if (norm > eps) {
          T dot = 0;
          for (int64_t i = 0; i < view.n; ++i) {
            const int64_t ix = base + i * view.inner;
            dot += self.grad[ix] * self.value[ix];
          }
          for (int64_t i = 0; i < view.n; ++i) {
            const int64_t ix = base + i * view.inner;
            g[ix] += (self.grad[ix] - self.value[ix] * dot) / norm;
          }
        } else {
          for (int64_t i = 0; i < view.n; ++i) {
            const int64_t ix = base + i * view.inner;
            g[ix] += self.grad[ix] / eps;
          }
        }
      }
  });
}

// ---- convolution and resampling ----

// Cross-correlation over CHW input with OIkk kernel, zero padding.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride = 1,
              int pad = 0) {
  Tape<T>* t = detail::same_tape(x, w);
  const auto& xv = x.value();
  const auto& wv = w.value();
  CDSP_CHECK(xv.rank() == 3, "conv2d input must be CxHxW, got ", shape_str(xv.shape));
  CDSP_CHECK(wv.rank() == 4, "conv2d kernel must be OxIxKxK, got ", shape_str(wv.shape));
  CDSP_CHECK(wv.shape[1] == xv.shape[0], "conv2d channel mismatch: input has ",
             xv.shape[0], " channels, kernel expects ", wv.shape[1]);
  CDSP_CHECK(wv.shape[2] == wv.shape[3], "conv2d kernel must be square");
  CDSP_CHECK(stride >= 1, "conv2d stride must be >= 1");
  CDSP_CHECK(pad >= 0, "conv2d pad must be >= 0");
  const int ci = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
  const int co = wv.shape[0], k = wv.shape[2];
  CDSP_CHECK(h + 2 * pad >= k && wd + 2 * pad >= k,
             "conv2d kernel ", k, "x", k, " does not fit padded input ",
             shape_str(xv.shape), " with pad ", pad);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;

  bool has_bias = static_cast<bool>(bias);
  if (has_bias) {
    detail::same_tape(x, bias);
    CDSP_CHECK(bias.value().rank() == 1 && bias.value().shape[0] == co,
               "conv2d bias must have one value per output channel");
  }

  TensorData<T> out({co, ho, wo});
  for (int oc = 0; oc < co; ++oc) {
    T b = has_bias ? bias.value()[oc] : T(0);
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = b;
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += xv.at(ic, iy, ix) * wv.data[((static_cast<size_t>(oc) * ci + ic) * k + ky) * k + kx];
            }
          }
        out.at(oc, oy, ox) = acc;
      }
  }

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  auto bp = [ci, h, wd, co, k, ho, wo, stride, pad, has_bias](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const auto& g = self.grad;
    if (px.requires_grad) {
      auto& dx = px.ensure_grad();
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            T go = g.at(oc, oy, ox);
            if (go == T(0)) continue;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= wd) continue;
                  dx.at(ic, iy, ix) +=
                      go * pw.value.data[((static_cast<size_t>(oc) * ci + ic) * k + ky) * k + kx];
                }
              }
          }
    }
    if (pw.requires_grad) {
      auto& dw = pw.ensure_grad();
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            T go = g.at(oc, oy, ox);
            if (go == T(0)) continue;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= wd) continue;
                  dw.data[((static_cast<size_t>(oc) * ci + ic) * k + ky) * k + kx] +=
                      go * px.value.at(ic, iy, ix);
                }
              }
          }
    }
    if (has_bias) {
      auto& pb = *self.parents[2];
      if (pb.requires_grad) {
        auto& db = pb.ensure_grad();
        for (int oc = 0; oc < co; ++oc) {
          T acc = 0;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) acc += g.at(oc, oy, ox);
          db[oc] += acc;
        }
      }
    }
  };
  return t->record(std::move(out), std::move(parents), std::move(bp));
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride = 1, int pad = 0) {
  return conv2d(x, w, Var<T>(), stride, pad);
}

template <class T>
Var<T> upsample_nearest(const Var<T>& a, int factor) {
  CDSP_CHECK(factor >= 1, "upsample factor must be >= 1, got ", factor);
  Tape<T>* t = detail::tape_of(a);
  const auto& av = a.value();
  CDSP_CHECK(av.rank() == 3, "upsample_nearest expects CxHxW");
  const int c = av.shape[0], h = av.shape[1], w = av.shape[2];
  TensorData<T> out({c, h * factor, w * factor});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h * factor; ++y)
      for (int x = 0; x < w * factor; ++x)
        out.at(ch, y, x) = av.at(ch, y / factor, x / factor);
  return t->record(std::move(out), {a.node()}, [c, h, w, factor](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * factor; ++y)
        for (int x = 0; x < w * factor; ++x)
          g.at(ch, y / factor, x / factor) += self.grad.at(ch, y, x);
  });
}

// ---- reductions ----

template <class T>
Var<T> sum(const Var<T>& a) {
  Tape<T>* t = detail::tape_of(a);
  T acc = 0;
  for (const auto& v : a.value().data) acc += v;
  return t->record(TensorData<T>::scalar(acc), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  Tape<T>* t = detail::tape_of(a);
  const int64_t n = a.value().numel();
  CDSP_CHECK(n > 0, "mean of empty tensor");
  T acc = 0;
  for (const auto& v : a.value().data) acc += v;
  acc /= static_cast<T>(n);
  return t->record(TensorData<T>::scalar(acc), {a.node()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    const T s = self.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s;
  });
}

// CxHxW -> C, averaging each channel plane.
template <class T>
Var<T> global_avg_pool(const Var<T>& a) {
  Tape<T>* t = detail::tape_of(a);
  const auto& av = a.value();
  CDSP_CHECK(av.rank() == 3, "global_avg_pool expects CxHxW");
  const int c = av.shape[0];
  const int64_t plane = static_cast<int64_t>(av.shape[1]) * av.shape[2];
  CDSP_CHECK(plane > 0, "global_avg_pool on empty plane");
  TensorData<T> out({c});
  for (int ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (int64_t i = 0; i < plane; ++i) acc += av[ch * plane + i];
    out[ch] = acc / static_cast<T>(plane);
  }
  return t->record(std::move(out), {a.node()}, [c, plane](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const T s = self.grad[ch] / static_cast<T>(plane);
      for (int64_t i = 0; i < plane; ++i) g[ch * plane + i] += s;
    }
  });
}

// Mean of squared differences over all elements.
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = detail::same_tape(a, b);
  CDSP_CHECK(a.value().same_shape(b.value()), "mse: shape mismatch ",
             shape_str(a.value().shape), " vs ", shape_str(b.value().shape));
  const int64_t n = a.value().numel();
  CDSP_CHECK(n > 0, "mse of empty tensors");
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    T d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  acc /= static_cast<T>(n);
  return t->record(TensorData<T>::scalar(acc), {a.node(), b.node()}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T s = T(2) * self.grad[0] / static_cast<T>(n);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < n; ++i) g[i] += s * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int64_t i = 0; i < n; ++i) g[i] -= s * (pa.value[i] - pb.value[i]);
    }
  });
}

// ---- shape ----

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tape<T>* t = detail::tape_of(a);
  CDSP_CHECK(shape_numel(s) == a.value().numel(), "reshape to ", shape_str(s),
             " changes element count of ", shape_str(a.value().shape));
  TensorData<T> out(std::move(s), a.value().data);
  return t->record(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

// Copies the value into a fresh constant leaf; gradient flow stops here.
template <class T>
Var<T> detach(const Var<T>& a) {
  return detail::tape_of(a)->constant(a.value());
}

// ---- classification head ----

// Mean over classes of the numerically stable binary cross entropy with
// logits; targets are a constant multi-hot vector.
template <class T>
Var<T> multilabel_bce_logits(const Var<T>& logits, const TensorData<T>& targets) {
  Tape<T>* t = detail::tape_of(logits);
  const auto& z = logits.value();
  CDSP_CHECK(z.same_shape(targets), "bce: logits ", shape_str(z.shape),
             " vs targets ", shape_str(targets.shape));
  const int64_t n = z.numel();
  CDSP_CHECK(n > 0, "bce on empty logits");
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    T zi = z[i];
    acc += std::max(zi, T(0)) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  acc /= static_cast<T>(n);
  TensorData<T> y = targets;
  return t->record(TensorData<T>::scalar(acc), {logits.node()}, [n, y](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    const T s = self.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) {
      T sig = T(1) / (T(1) + std::exp(-p.value[i]));
      g[i] += s * (sig - y[i]);
    }
  });
}

}  // namespace cdsp
