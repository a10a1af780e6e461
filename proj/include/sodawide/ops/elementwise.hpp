#pragma once

#include <cmath>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

namespace detail {
inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + " shape mismatch: " + a.str() + " vs " + b.str());
}
}  // namespace detail

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  if (detail::pattern_tape().mode == detail::PatternTape::Mode::off) {
    // NaN passes through rather than becoming 0.
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] > T{0} || std::isnan(xv[i]) ? xv[i] : T{0};
  } else {
    std::vector<std::size_t> mask(y.numel());
    for (std::size_t i = 0; i < y.numel(); ++i) mask[i] = xv[i] > T{0} || std::isnan(xv[i]);
    detail::sync_pattern(mask);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = mask[i] ? xv[i] : T{0};
  }
  return record<T>("relu", std::move(y), {x}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Tensor<T> g(in.value.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = in.value[i] > T{0} ? self.grad[i] : T{0};
    in.accumulate(std::move(g));
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = sigmoid_scalar(x.value()[i]);
  return record<T>("sigmoid", y, {x}, [y](Node<T>& self) {
    Tensor<T> g(y.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * y[i] * (T{1} - y[i]);
    self.inputs[0]->accumulate(std::move(g));
  });
}

enum class Activation { relu, sigmoid };

template <class T>
Var<T> activation(const Var<T>& x, Activation kind) {
  return kind == Activation::relu ? relu(x) : sigmoid(x);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y = a.value();
  y += b.value();
  return record<T>("add", std::move(y), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  return record<T>("mul", std::move(y), {a, b}, [](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    if (na.requires_grad) {
      Tensor<T> g(na.value.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * nb.value[i];
      na.accumulate(std::move(g));
    }
    if (nb.requires_grad) {
      Tensor<T> g(nb.value.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * na.value[i];
      nb.accumulate(std::move(g));
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] * factor;
  return record<T>("scale", std::move(y), {x}, [factor](Node<T>& self) {
    Tensor<T> g(self.grad.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * factor;
    self.inputs[0]->accumulate(std::move(g));
  });
}

/// Sum of every element, as a 1x1x1x1 tensor.
template <class T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  const Shape in_shape = x.shape();
  return record<T>("sum", Tensor<T>(Shape{}, acc), {x}, [in_shape](Node<T>& self) {
    self.inputs[0]->accumulate(Tensor<T>(in_shape, self.grad.item()));
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().numel()));
}

/// Sum of several tensors of equal shape.
template <class T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("add_n of empty list");
  Var<T> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

/// Channel-axis concatenation, input order preserved.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat of empty list");
  Shape out = xs[0].shape();
  out.c = 0;
  for (const auto& x : xs) {
    const Shape s = x.shape();
    if (s.n != out.n || s.h != out.h || s.w != out.w) {
      throw ShapeError("concat spatial/batch mismatch: " + xs[0].shape().str() + " vs " + s.str());
    }
    out.c += s.c;
  }
  Tensor<T> y(out);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const Shape s = x.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      std::copy_n(x.value().plane(n, 0), s.c * s.plane(), y.plane(n, off));
    off += s.c;
  }
  return record<T>("concat", std::move(y), xs, [offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node<T>& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      const Shape s = in.value.shape();
      Tensor<T> g(s);
      for (std::size_t n = 0; n < s.n; ++n)
        std::copy_n(self.grad.plane(n, offsets[k]), s.c * s.plane(), g.plane(n, 0));
      in.accumulate(std::move(g));
    }
  });
}

/// Channels [begin, begin + count) of x.
template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (count == 0 || begin + count > s.c) {
    throw ShapeError("slice_channels [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + s.str());
  }
  Tensor<T> y(Shape{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) std::copy_n(x.value().plane(n, begin), count * s.plane(), y.plane(n, 0));
  return record<T>("slice_channels", std::move(y), {x}, [s, begin, count](Node<T>& self) {
    Tensor<T> g(s);
    for (std::size_t n = 0; n < s.n; ++n) std::copy_n(self.grad.plane(n, 0), count * s.plane(), g.plane(n, begin));
    self.inputs[0]->accumulate(std::move(g));
  });
}

}  // namespace sodawide
