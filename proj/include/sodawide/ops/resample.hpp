#pragma once

#include <cmath>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

namespace detail {

// Half-pixel-center source coordinates (align_corners off): src = (dst + 0.5) * in/out - 0.5,
// clamped to the valid range.
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

inline LinearTaps linear_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

namespace kernels {

template <class T>
Tensor<T> bilinear_resize_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear resize target must be >= 1");
  const auto ty = detail::linear_taps(s.h, out_h);
  const auto tx = detail::linear_taps(s.w, out_w);
  Tensor<T> y(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* xp = x.data().data() + nc * s.plane();
    T* yp = y.data().data() + nc * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = xp + ty.lo[oy] * s.w;
      const T* r1 = xp + ty.hi[oy] * s.w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T top = r0[tx.lo[ox]] * (T{1} - fx) + r0[tx.hi[ox]] * fx;
        const T bot = r1[tx.lo[ox]] * (T{1} - fx) + r1[tx.hi[ox]] * fx;
        yp[oy * out_w + ox] = top * (T{1} - fy) + bot * fy;
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& gy, const Shape& in_shape) {
  const Shape os = gy.shape();
  const auto ty = detail::linear_taps(in_shape.h, os.h);
  const auto tx = detail::linear_taps(in_shape.w, os.w);
  Tensor<T> gx(in_shape);
  for (std::size_t nc = 0; nc < in_shape.n * in_shape.c; ++nc) {
    T* gp = gx.data().data() + nc * in_shape.plane();
    const T* gyp = gy.data().data() + nc * os.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      T* r0 = gp + ty.lo[oy] * in_shape.w;
      T* r1 = gp + ty.hi[oy] * in_shape.w;
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T g = gyp[oy * os.w + ox];
        r0[tx.lo[ox]] += g * (T{1} - fy) * (T{1} - fx);
        r0[tx.hi[ox]] += g * (T{1} - fy) * fx;
        r1[tx.lo[ox]] += g * fy * (T{1} - fx);
        r1[tx.hi[ox]] += g * fy * fx;
      }
    }
  }
  return gx;
}

}  // namespace kernels

template <class T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape in_shape = x.shape();
  return record<T>("bilinear_resize", kernels::bilinear_resize_forward(x.value(), out_h, out_w), {x},
                   [in_shape](Node<T>& self) {
                     self.inputs[0]->accumulate(kernels::bilinear_resize_backward(self.grad, in_shape));
                   });
}

template <class T>
Var<T> upsample(const Var<T>& x, std::size_t factor) {
  if (factor < 2) throw ShapeError("upsample factor must be >= 2");
  return bilinear_resize(x, x.shape().h * factor, x.shape().w * factor);
}

}  // namespace sodawide
