#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;
};

namespace detail {

inline void check_affine(const Shape& x, const Shape& gamma, const Shape& beta, const char* op) {
  if (gamma.numel() != x.c || beta.numel() != x.c) {
    throw ShapeError(std::string(op) + " scale/shift length must equal channels of " + x.str());
  }
}

// Shared backward for "normalize over a set of elements then affine": given
// x_hat, inverse std per statistic group, and an index map from element to
// group, computes dx. `count` is the number of elements per group.
template <class T>
void normalized_backward(const std::vector<T>& dxhat, const std::vector<T>& xhat, const std::vector<double>& inv_std,
                         const std::vector<std::size_t>& group_of, std::size_t groups, double count,
                         std::vector<T>& dx) {
  std::vector<double> sum_d(groups, 0.0), sum_dx(groups, 0.0);
  for (std::size_t i = 0; i < dxhat.size(); ++i) {
    sum_d[group_of[i]] += dxhat[i];
    sum_dx[group_of[i]] += static_cast<double>(dxhat[i]) * xhat[i];
  }
  dx.resize(dxhat.size());
  for (std::size_t i = 0; i < dxhat.size(); ++i) {
    const std::size_t g = group_of[i];
    dx[i] = static_cast<T>(inv_std[g] / count * (count * dxhat[i] - sum_d[g] - xhat[i] * sum_dx[g]));
  }
}

}  // namespace detail

/// Batch normalization with per-channel statistics over (N, H, W). In training
/// mode uses batch statistics and updates the running estimates in place
/// (unbiased variance for the running estimate); otherwise uses them.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, const BatchNormOptions& opt) {
  const Shape s = x.shape();
  detail::check_affine(s, gamma.shape(), beta.shape(), "batch_norm");
  if (running_mean.numel() != s.c || running_var.numel() != s.c) {
    throw ShapeError("batch_norm running statistics length must equal channels of " + s.str());
  }
  const std::size_t per_channel = s.n * s.plane();
  std::vector<double> mean(s.c, 0.0), inv_std(s.c, 0.0);
  if (opt.training) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      }
      mean[c] = acc / static_cast<double>(per_channel);
      double var = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = p[i] - mean[c];
          var += d * d;
        }
      }
      var /= static_cast<double>(per_channel);
      inv_std[c] = 1.0 / std::sqrt(var + opt.eps);
      const double unbiased = per_channel > 1 ? var * per_channel / (per_channel - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - opt.momentum) * running_mean[c] + opt.momentum * mean[c]);
      running_var[c] = static_cast<T>((1.0 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < s.c; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(s.numel());
  Tensor<T> y(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      const std::size_t base = x.value().index(n, c, 0, 0);
      const T g = gamma.value()[c];
      const T b = beta.value()[c];
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const T xh = static_cast<T>((p[i] - mean[c]) * inv_std[c]);
        (*xhat)[base + i] = xh;
        y[base + i] = g * xh + b;
      }
    }

  const bool training = opt.training;
  return record<T>("batch_norm", std::move(y), {x, gamma, beta}, [s, xhat, inv_std, training](Node<T>& self) {
    Node<T>& nx = *self.inputs[0];
    Node<T>& ng = *self.inputs[1];
    Node<T>& nb = *self.inputs[2];
    const Tensor<T>& gy = self.grad;
    if (ng.requires_grad || nb.requires_grad) {
      Tensor<T> gg(channel_vector(s.c)), gb(channel_vector(s.c));
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t base = gy.index(n, c, 0, 0);
          for (std::size_t i = 0; i < s.plane(); ++i) {
            gg[c] += gy[base + i] * (*xhat)[base + i];
            gb[c] += gy[base + i];
          }
        }
      if (ng.requires_grad) ng.accumulate(std::move(gg));
      if (nb.requires_grad) nb.accumulate(std::move(gb));
    }
    if (!nx.requires_grad) return;
    std::vector<T> dxhat(s.numel());
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t base = gy.index(n, c, 0, 0);
        const T g = ng.value[c];
        for (std::size_t i = 0; i < s.plane(); ++i) dxhat[base + i] = gy[base + i] * g;
      }
    std::vector<T> dx(s.numel());
    if (training) {
      std::vector<std::size_t> group_of(s.numel());
      for (std::size_t i = 0; i < s.numel(); ++i) group_of[i] = (i / s.plane()) % s.c;
      detail::normalized_backward(dxhat, *xhat, inv_std, group_of, s.c, static_cast<double>(s.n * s.plane()), dx);
    } else {
      for (std::size_t i = 0; i < s.numel(); ++i) dx[i] = static_cast<T>(dxhat[i] * inv_std[(i / s.plane()) % s.c]);
    }
    nx.accumulate(Tensor<T>(s, std::move(dx)));
  });
}

/// Group normalization: statistics per (sample, channel group), independent of
/// batch size; biased variance.
template <class T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5) {
  const Shape s = x.shape();
  detail::check_affine(s, gamma.shape(), beta.shape(), "group_norm");
  if (groups < 1 || s.c % groups != 0) {
    throw ShapeError("group_norm: channels " + std::to_string(s.c) + " not divisible by groups " +
                     std::to_string(groups));
  }
  const std::size_t group_size = (s.c / groups) * s.plane();
  const std::size_t stat_groups = s.n * groups;
  std::vector<double> inv_std(stat_groups);
  auto xhat = std::make_shared<std::vector<T>>(s.numel());
  Tensor<T> y(s);
  const auto& xv = x.value().vec();
  // NCHW layout makes each (n, group) a contiguous run of group_size elements.
  for (std::size_t g = 0; g < stat_groups; ++g) {
    const std::size_t base = g * group_size;
    double mean = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) mean += xv[base + i];
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const double d = xv[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    inv_std[g] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t idx = base + i;
      const std::size_t c = (idx / s.plane()) % s.c;
      const T xh = static_cast<T>((xv[idx] - mean) * inv_std[g]);
      (*xhat)[idx] = xh;
      y[idx] = gamma.value()[c] * xh + beta.value()[c];
    }
  }
  return record<T>("group_norm", std::move(y), {x, gamma, beta},
                   [s, xhat, inv_std, group_size, stat_groups](Node<T>& self) {
                     Node<T>& nx = *self.inputs[0];
                     Node<T>& ng = *self.inputs[1];
                     Node<T>& nb = *self.inputs[2];
                     const Tensor<T>& gy = self.grad;
                     if (ng.requires_grad || nb.requires_grad) {
                       Tensor<T> gg(channel_vector(s.c)), gb(channel_vector(s.c));
                       for (std::size_t i = 0; i < s.numel(); ++i) {
                         const std::size_t c = (i / s.plane()) % s.c;
                         gg[c] += gy[i] * (*xhat)[i];
                         gb[c] += gy[i];
                       }
                       if (ng.requires_grad) ng.accumulate(std::move(gg));
                       if (nb.requires_grad) nb.accumulate(std::move(gb));
                     }
                     if (!nx.requires_grad) return;
                     std::vector<T> dxhat(s.numel());
                     std::vector<std::size_t> group_of(s.numel());
                     for (std::size_t i = 0; i < s.numel(); ++i) {
                       dxhat[i] = gy[i] * ng.value[(i / s.plane()) % s.c];
                       group_of[i] = i / group_size;
                     }
                     std::vector<T> dx;
                     detail::normalized_backward(dxhat, *xhat, inv_std, group_of, stat_groups,
                                                 static_cast<double>(group_size), dx);
                     nx.accumulate(Tensor<T>(s, std::move(dx)));
                   });
}

}  // namespace sodawide
