#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

// Token tensors reuse the rank-4 container as (batch, heads, tokens, head_dim).

namespace detail {

template <class T>
Tensor<T> feature_to_tokens(const Tensor<T>& x, std::size_t heads) {
  const Shape s = x.shape();
  const std::size_t d = s.c / heads;
  Tensor<T> t(Shape{s.n, heads, s.plane(), d});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < d; ++j) {
        const T* src = x.plane(n, h * d + j);
        for (std::size_t p = 0; p < s.plane(); ++p) t.at(n, h, p, j) = src[p];
      }
  return t;
}

template <class T>
Tensor<T> tokens_to_feature(const Tensor<T>& t, std::size_t height, std::size_t width) {
  const Shape s = t.shape();
  Tensor<T> x(Shape{s.n, s.c * s.w, height, width});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t h = 0; h < s.c; ++h)
      for (std::size_t j = 0; j < s.w; ++j) {
        T* dst = x.plane(n, h * s.w + j);
        for (std::size_t p = 0; p < s.h; ++p) dst[p] = t.at(n, h, p, j);
      }
  return x;
}

}  // namespace detail

/// NxCxHxW feature map -> Nxheadsx(H*W)x(C/heads) token tensor.
template <class T>
Var<T> to_tokens(const Var<T>& x, std::size_t heads) {
  const Shape s = x.shape();
  if (heads < 1 || s.c % heads != 0) {
    throw ShapeError("to_tokens: channels of " + s.str() + " not divisible by heads " + std::to_string(heads));
  }
  return record<T>("to_tokens", detail::feature_to_tokens(x.value(), heads), {x}, [s](Node<T>& self) {
    self.inputs[0]->accumulate(detail::tokens_to_feature(self.grad, s.h, s.w));
  });
}

/// Inverse of to_tokens for a height x width grid.
template <class T>
Var<T> from_tokens(const Var<T>& t, std::size_t height, std::size_t width) {
  const Shape s = t.shape();
  if (s.h != height * width) {
    throw ShapeError("from_tokens: " + std::to_string(s.h) + " tokens do not fill a " + std::to_string(height) +
                     "x" + std::to_string(width) + " grid");
  }
  const std::size_t heads = s.c;
  return record<T>("from_tokens", detail::tokens_to_feature(t.value(), height, width), {t}, [heads](Node<T>& self) {
    self.inputs[0]->accumulate(detail::feature_to_tokens(self.grad, heads));
  });
}

/// softmax(Q K^T / sqrt(d)) V per (batch, head). Q: BxhxNqxd, K and V: BxhxNkxd.
template <class T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const Shape qs = q.shape(), ks = k.shape(), vs = v.shape();
  if (qs.w != ks.w || vs.w != ks.w) {
    throw ShapeError("attention head dimension mismatch: Q " + qs.str() + ", K " + ks.str() + ", V " + vs.str());
  }
  if (qs.n != ks.n || qs.c != ks.c || ks != vs) {
    throw ShapeError("attention key/value mismatch: Q " + qs.str() + ", K " + ks.str() + ", V " + vs.str());
  }
  const std::size_t B = qs.n, H = qs.c, Nq = qs.h, Nk = ks.h, d = qs.w;
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  // probs holds softmax rows for every (batch, head): B*H*Nq*Nk.
  auto probs = std::make_shared<std::vector<T>>(B * H * Nq * Nk);
  Tensor<T> out(Shape{B, H, Nq, d});
  for (std::size_t bh = 0; bh < B * H; ++bh) {
    const T* Q = q.value().data().data() + bh * Nq * d;
    const T* K = k.value().data().data() + bh * Nk * d;
    const T* V = v.value().data().data() + bh * Nk * d;
    T* O = out.data().data() + bh * Nq * d;
    T* P = probs->data() + bh * Nq * Nk;
    for (std::size_t i = 0; i < Nq; ++i) {
      T* row = P + i * Nk;
      T row_max = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < Nk; ++j) {
        T s{0};
        for (std::size_t t = 0; t < d; ++t) s += Q[i * d + t] * K[j * d + t];
        row[j] = s * inv_sqrt_d;
        row_max = std::max(row_max, row[j]);
      }
      T total{0};
      for (std::size_t j = 0; j < Nk; ++j) {
        row[j] = std::exp(row[j] - row_max);
        total += row[j];
      }
      const T inv_total = T{1} / total;
      T* orow = O + i * d;
      for (std::size_t j = 0; j < Nk; ++j) {
        row[j] *= inv_total;
        const T p = row[j];
        const T* vrow = V + j * d;
        for (std::size_t t = 0; t < d; ++t) orow[t] += p * vrow[t];
      }
    }
  }

  return record<T>("attention", std::move(out), {q, k, v}, [probs, B, H, Nq, Nk, d, inv_sqrt_d](Node<T>& self) {
    Node<T>& nq = *self.inputs[0];
    Node<T>& nk = *self.inputs[1];
    Node<T>& nv = *self.inputs[2];
    Tensor<T> gq(nq.value.shape()), gk(nk.value.shape()), gv(nv.value.shape());
    std::vector<T> dS(Nq * Nk);
    for (std::size_t bh = 0; bh < B * H; ++bh) {
      const T* Q = nq.value.data().data() + bh * Nq * d;
      const T* K = nk.value.data().data() + bh * Nk * d;
      const T* V = nv.value.data().data() + bh * Nk * d;
      const T* P = probs->data() + bh * Nq * Nk;
      const T* dO = self.grad.data().data() + bh * Nq * d;
      T* dQ = gq.data().data() + bh * Nq * d;
      T* dK = gk.data().data() + bh * Nk * d;
      T* dV = gv.data().data() + bh * Nk * d;
      for (std::size_t i = 0; i < Nq; ++i) {
        const T* prow = P + i * Nk;
        const T* dorow = dO + i * d;
        T* ds = dS.data() + i * Nk;
        T dot{0};
        for (std::size_t j = 0; j < Nk; ++j) {
          T dp{0};
          for (std::size_t t = 0; t < d; ++t) dp += dorow[t] * V[j * d + t];
          ds[j] = dp;
          dot += dp * prow[j];
          for (std::size_t t = 0; t < d; ++t) dV[j * d + t] += prow[j] * dorow[t];
        }
        for (std::size_t j = 0; j < Nk; ++j) ds[j] = prow[j] * (ds[j] - dot) * inv_sqrt_d;
      }
      for (std::size_t i = 0; i < Nq; ++i) {
        const T* ds = dS.data() + i * Nk;
        for (std::size_t j = 0; j < Nk; ++j) {
          const T s = ds[j];
          if (s == T{0}) continue;
          for (std::size_t t = 0; t < d; ++t) {
            dQ[i * d + t] += s * K[j * d + t];
            dK[j * d + t] += s * Q[i * d + t];
          }
        }
      }
    }
    if (nq.requires_grad) nq.accumulate(std::move(gq));
    if (nk.requires_grad) nk.accumulate(std::move(gk));
    if (nv.requires_grad) nv.accumulate(std::move(gv));
  });
}

}  // namespace sodawide
