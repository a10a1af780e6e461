#pragma once

#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

/// floor((in + 2p - d(k-1) - 1)/s) + 1; throws when the dilated kernel does
/// not fit inside the padded input.
inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                                std::size_t dilation) {
  const std::size_t extent = dilation * (kernel - 1) + 1;
  if (in + 2 * padding < extent) {
    throw ShapeError("effective kernel extent " + std::to_string(extent) + " exceeds padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - extent) / stride + 1;
}

namespace detail {

// Row-major C[MxN] (+)= op(A) * op(B). The three layouts needed by the conv
// forward/backward passes; loops ordered so the inner loop is contiguous.
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T{0});
  for (std::size_t i = 0; i < M; ++i) {
    T* crow = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      if (a == T{0}) continue;
      const T* brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[MxN] (+)= A[MxK] * B[NxK]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* arow = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* brow = B + j * K;
      T acc{0};
      for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      C[i * N + j] = accumulate ? C[i * N + j] + acc : acc;
    }
  }
}

// C[MxN] (+)= A[KxM]^T * B[KxN]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T{0});
  for (std::size_t k = 0; k < K; ++k) {
    const T* brow = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T{0}) continue;
      T* crow = C + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t cin, cout, cin_g, cout_g, kh, kw, ih, iw, oh, ow;
  Conv2dOptions opt;
  std::size_t patch() const { return cin_g * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
  }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Conv2dOptions& opt) {
  if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1) {
    throw ShapeError("conv2d requires stride, dilation and groups >= 1");
  }
  if (w.n % opt.groups != 0 || x.c % opt.groups != 0) {
    throw ShapeError("conv2d channels not divisible by groups: input " + x.str() + ", kernel " + w.str());
  }
  if (x.c != w.c * opt.groups) {
    throw ShapeError("conv2d channel mismatch: input " + x.str() + " vs kernel " + w.str());
  }
  ConvGeometry g{};
  g.cin = x.c;
  g.cout = w.n;
  g.cin_g = w.c;
  g.cout_g = w.n / opt.groups;
  g.kh = w.h;
  g.kw = w.w;
  g.ih = x.h;
  g.iw = x.w;
  g.oh = conv_out_dim(x.h, w.h, opt.stride, opt.padding, opt.dilation);
  g.ow = conv_out_dim(x.w, w.w, opt.stride, opt.padding, opt.dilation);
  g.opt = opt;
  return g;
}

// col[(ci*kh + ky)*kw + kx][oy*ow + ox] for channels [c0, c0 + cin_g) of one sample.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
  for (std::size_t ci = 0; ci < g.cin_g; ++ci) {
    const T* xp = x + ci * g.ih * g.iw;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride + ky * g.opt.dilation) - pad;
          T* out = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.ih)) {
            std::fill(out, out + g.ow, T{0});
            continue;
          }
          const T* xrow = xp + static_cast<std::size_t>(iy) * g.iw;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.opt.stride + kx * g.opt.dilation) - pad;
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.iw)) ? T{0} : xrow[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
  for (std::size_t ci = 0; ci < g.cin_g; ++ci) {
    T* xp = dx + ci * g.ih * g.iw;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride + ky * g.opt.dilation) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.ih)) continue;
          T* xrow = xp + static_cast<std::size_t>(iy) * g.iw;
          const T* in = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.opt.stride + kx * g.opt.dilation) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.iw)) xrow[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

namespace kernels {

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const Conv2dOptions& opt) {
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), w.shape(), opt);
  if (bias && bias->numel() != g.cout) {
    throw ShapeError("conv2d bias length " + std::to_string(bias->numel()) + " != out channels " +
                     std::to_string(g.cout));
  }
  const std::size_t batch = x.shape().n;
  Tensor<T> y(Shape{batch, g.cout, g.oh, g.ow});
  std::vector<T> col(g.pointwise() ? 0 : g.patch() * g.pixels());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t grp = 0; grp < opt.groups; ++grp) {
      const T* xg = x.plane(n, grp * g.cin_g);
      const T* src = xg;
      if (!g.pointwise()) {
        detail::im2col(xg, g, col.data());
        src = col.data();
      }
      const T* wg = w.data().data() + grp * g.cout_g * g.patch();
      detail::gemm_nn(g.cout_g, g.pixels(), g.patch(), wg, src, y.plane(n, grp * g.cout_g), false);
    }
    if (bias) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        T* p = y.plane(n, co);
        const T b = (*bias)[co];
        for (std::size_t i = 0; i < g.pixels(); ++i) p[i] += b;
      }
    }
  }
  return y;
}

/// Gradients of conv2d. Outputs left empty when not requested.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, const Conv2dOptions& opt,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), w.shape(), opt);
  const std::size_t batch = x.shape().n;
  if (gx) *gx = Tensor<T>(x.shape());
  if (gw) *gw = Tensor<T>(w.shape());
  if (gb) *gb = Tensor<T>(channel_vector(g.cout));
  std::vector<T> col(g.patch() * g.pixels());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t grp = 0; grp < opt.groups; ++grp) {
      const T* gyg = gy.plane(n, grp * g.cout_g);
      const T* wg = w.data().data() + grp * g.cout_g * g.patch();
      if (gw) {
        const T* src = x.plane(n, grp * g.cin_g);
        if (!g.pointwise()) {
          detail::im2col(src, g, col.data());
          src = col.data();
        }
        detail::gemm_nt(g.cout_g, g.patch(), g.pixels(), gyg, src, gw->data().data() + grp * g.cout_g * g.patch(),
                        true);
      }
      if (gx) {
        T* dst = gx->plane(n, grp * g.cin_g);
        if (g.pointwise()) {
          detail::gemm_tn(g.patch(), g.pixels(), g.cout_g, wg, gyg, dst, true);
        } else {
          detail::gemm_tn(g.patch(), g.pixels(), g.cout_g, wg, gyg, col.data(), false);
          detail::col2im(col.data(), g, dst);
        }
      }
    }
    if (gb) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const T* p = gy.plane(n, co);
        T acc{0};
        for (std::size_t i = 0; i < g.pixels(); ++i) acc += p[i];
        (*gb)[co] += acc;
      }
    }
  }
}

}  // namespace kernels

/// 2-D convolution (cross-correlation) with optional bias of shape 1xCoutx1x1.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<std::type_identity_t<T>>>& bias,
              const Conv2dOptions& opt) {
  const Tensor<T>* b = bias ? &bias->value() : nullptr;
  Tensor<T> y = kernels::conv2d_forward(x.value(), weight.value(), b, opt);
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return record<T>("conv2d", std::move(y), std::move(inputs), [opt](Node<T>& self) {
    Node<T>& nx = *self.inputs[0];
    Node<T>& nw = *self.inputs[1];
    Node<T>* nb = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    Tensor<T> gx, gw, gb;
    kernels::conv2d_backward(nx.value, nw.value, self.grad, opt, nx.requires_grad ? &gx : nullptr,
                             nw.requires_grad ? &gw : nullptr, (nb && nb->requires_grad) ? &gb : nullptr);
    if (nx.requires_grad) nx.accumulate(std::move(gx));
    if (nw.requires_grad) nw.accumulate(std::move(gw));
    if (nb && nb->requires_grad) nb->accumulate(std::move(gb));
  });
}

}  // namespace sodawide
