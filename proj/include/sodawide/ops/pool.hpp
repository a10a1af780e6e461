#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

enum class PoolMode { max, avg };

struct PoolOptions {
  PoolMode mode = PoolMode::max;
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

inline std::size_t pool_out_dim(std::size_t in, const PoolOptions& opt) {
  if (opt.kernel < 1 || opt.stride < 1) throw ShapeError("pool2d requires kernel and stride >= 1");
  if (2 * opt.padding > opt.kernel) throw ShapeError("pool2d padding must be at most half the kernel");
  if (in + 2 * opt.padding < opt.kernel) {
    throw ShapeError("pool2d kernel " + std::to_string(opt.kernel) + " exceeds padded input " +
                     std::to_string(in + 2 * opt.padding));
  }
  return (in + 2 * opt.padding - opt.kernel) / opt.stride + 1;
}

namespace kernels {

/// Max mode ignores padded positions; avg mode divides by kernel^2 (padding
/// counts as zeros). `argmax` receives the in-plane source index per output.
template <class T>
Tensor<T> pool2d_forward(const Tensor<T>& x, const PoolOptions& opt, std::vector<std::size_t>* argmax) {
  const Shape s = x.shape();
  const std::size_t oh = pool_out_dim(s.h, opt);
  const std::size_t ow = pool_out_dim(s.w, opt);
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  if (argmax) argmax->assign(y.numel(), 0);
  const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
  const T inv_area = T{1} / static_cast<T>(opt.kernel * opt.kernel);
  std::size_t out_index = 0;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* xp = x.data().data() + nc * s.plane();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++out_index) {
        const auto y0 = static_cast<std::ptrdiff_t>(oy * opt.stride) - pad;
        const auto x0 = static_cast<std::ptrdiff_t>(ox * opt.stride) - pad;
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_index = 0;
        T acc{0};
        for (std::size_t ky = 0; ky < opt.kernel; ++ky) {
          const auto iy = y0 + static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t kx = 0; kx < opt.kernel; ++kx) {
            const auto ix = x0 + static_cast<std::ptrdiff_t>(kx);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix);
            const T v = xp[idx];
            if (v > best || (std::isnan(v) && !std::isnan(best))) {  // NaN propagates
              best = v;
              best_index = idx;
            }
            acc += v;
          }
        }
        if (opt.mode == PoolMode::max) {
          y[out_index] = best;
          if (argmax) (*argmax)[out_index] = best_index;
        } else {
          y[out_index] = acc * inv_area;
        }
      }
    }
  }
  return y;
}

}  // namespace kernels

template <class T>
Var<T> pool2d(const Var<T>& x, const PoolOptions& opt) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor<T> y = kernels::pool2d_forward(x.value(), opt, opt.mode == PoolMode::max ? argmax.get() : nullptr);
  if (opt.mode == PoolMode::max && detail::pattern_tape().mode != detail::PatternTape::Mode::off) {
    detail::sync_pattern(*argmax);
    const std::size_t out_plane = y.shape().plane(), in_plane = x.shape().plane();
    for (std::size_t o = 0; o < y.numel(); ++o) y[o] = x.value()[(o / out_plane) * in_plane + (*argmax)[o]];
  }
  const Shape in_shape = x.shape();
  const Shape out_shape = y.shape();
  return record<T>("pool2d", std::move(y), {x}, [opt, argmax, in_shape, out_shape](Node<T>& self) {
    Tensor<T> gx(in_shape);
    const std::size_t out_plane = out_shape.plane();
    const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
    const T inv_area = T{1} / static_cast<T>(opt.kernel * opt.kernel);
    for (std::size_t nc = 0; nc < in_shape.n * in_shape.c; ++nc) {
      T* gp = gx.data().data() + nc * in_shape.plane();
      const T* gyp = self.grad.data().data() + nc * out_plane;
      for (std::size_t o = 0; o < out_plane; ++o) {
        if (opt.mode == PoolMode::max) {
          gp[(*argmax)[nc * out_plane + o]] += gyp[o];
          continue;
        }
        const auto y0 = static_cast<std::ptrdiff_t>((o / out_shape.w) * opt.stride) - pad;
        const auto x0 = static_cast<std::ptrdiff_t>((o % out_shape.w) * opt.stride) - pad;
        const T g = gyp[o] * inv_area;
        for (std::size_t ky = 0; ky < opt.kernel; ++ky) {
          const auto iy = y0 + static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_shape.h)) continue;
          for (std::size_t kx = 0; kx < opt.kernel; ++kx) {
            const auto ix = x0 + static_cast<std::ptrdiff_t>(kx);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_shape.w)) continue;
            gp[static_cast<std::size_t>(iy) * in_shape.w + static_cast<std::size_t>(ix)] += g;
          }
        }
      }
    }
    self.inputs[0]->accumulate(std::move(gx));
  });
}

template <class T>
Var<T> max_pool2(const Var<T>& x) {
  return pool2d(x, PoolOptions{PoolMode::max, 2, 2, 0});
}

template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  return pool2d(x, PoolOptions{PoolMode::avg, 2, 2, 0});
}

}  // namespace sodawide
