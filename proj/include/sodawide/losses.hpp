#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sodawide/ops.hpp"

namespace sodawide {

enum class WeightMode { alpha, one_plus_lambda_alpha };
enum class WeightNorm { weight_sum, pixel_count };

struct LossOptions {
  std::size_t alpha_window = 31;
  WeightMode weight_mode = WeightMode::alpha;
  double lambda = 0.0;
  WeightNorm normalization = WeightNorm::weight_sum;
};

inline constexpr double kContourBceWeight = 0.001;

/// Named loss terms with their coefficients; total is the weighted sum.
struct LossReport {
  std::map<std::string, double> terms;
  std::map<std::string, double> coefficients;

  double total() const {
    double t = 0.0;
    for (const auto& [name, value] : terms) t += coefficients.at(name) * value;
    return t;
  }
};

/// Loss value on the tape plus its decomposition.
template <class T>
struct LossResult {
  Var<T> total;
  LossReport report;
};

namespace detail {

inline void require_single_channel(const Shape& logits, const Shape& gt, const char* op) {
  if (logits != gt) throw ShapeError(std::string(op) + ": logits " + logits.str() + " vs target " + gt.str());
  if (logits.c != 1) throw ShapeError(std::string(op) + " expects single-channel maps, got " + logits.str());
}

// Mean over the batch of a per-sample loss. `f(x, g, n, grad)` returns the
// loss of sample n (planes of length H*W) and, when grad is non-null, writes
// dloss/dx for that sample.
template <class T, class F>
Var<T> per_sample_loss(const char* op, const Var<T>& logits, const Tensor<T>& target, F&& f) {
  detail::require_single_channel(logits.shape(), target.shape(), op);
  const Shape s = logits.shape();
  const bool need_grad = grad_enabled() && logits.requires_grad();
  auto grad = std::make_shared<std::vector<double>>(need_grad ? s.numel() : 0);
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    total += f(logits.value().plane(n, 0), target.plane(n, 0), n, need_grad ? grad->data() + n * s.plane() : nullptr);
  }
  const double inv_n = 1.0 / static_cast<double>(s.n);
  return record<T>(op, Tensor<T>(Shape{}, static_cast<T>(total * inv_n)), {logits},
                   [grad, s, inv_n](Node<T>& self) {
                     const double up = static_cast<double>(self.grad.item()) * inv_n;
                     Tensor<T> gx(s);
                     for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = static_cast<T>(up * (*grad)[i]);
                     self.inputs[0]->accumulate(std::move(gx));
                   });
}

inline double stable_bce(double x, double g) { return std::max(x, 0.0) - x * g + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid_d(double x) { return sigmoid_scalar(x); }

// 11-tap Gaussian, sigma 1.5, normalized.
inline const std::vector<double>& ssim_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
      v[i] = std::exp(-static_cast<double>((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
      s += v[i];
    }
    for (double& x : v) x /= s;
    return v;
  }();
  return k;
}

// Separable valid-mode correlation of an h x w plane with the SSIM kernel.
inline std::vector<double> gauss_valid(const std::vector<double>& in, std::size_t h, std::size_t w) {
  const auto& k = ssim_kernel();
  const std::size_t oh = h - 10, ow = w - 10;
  std::vector<double> tmp(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double a = 0.0;
      for (std::size_t t = 0; t < 11; ++t) a += k[t] * in[y * w + x + t];
      tmp[y * ow + x] = a;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double a = 0.0;
      for (std::size_t t = 0; t < 11; ++t) a += k[t] * tmp[(y + t) * ow + x];
      out[y * ow + x] = a;
    }
  return out;
}

// Adjoint of gauss_valid: scatters an oh x ow field back onto h x w.
inline std::vector<double> gauss_valid_adjoint(const std::vector<double>& g, std::size_t h, std::size_t w) {
  const auto& k = ssim_kernel();
  const std::size_t oh = h - 10, ow = w - 10;
  std::vector<double> tmp(h * ow, 0.0), out(h * w, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t t = 0; t < 11; ++t) tmp[(y + t) * ow + x] += k[t] * g[y * ow + x];
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t t = 0; t < 11; ++t) out[y * w + x + t] += k[t] * tmp[y * ow + x];
  return out;
}

struct SsimResult {
  double mean;
  std::vector<double> grad_a;  // d mean / d a, empty unless requested
};

inline SsimResult ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                             bool want_grad) {
  if (h < 11 || w < 11) {
    throw ShapeError("SSIM needs spatial dims of at least 11x11, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = gauss_valid(a, h, w), mu_b = gauss_valid(b, h, w);
  const auto e_aa = gauss_valid(aa, h, w), e_bb = gauss_valid(bb, h, w), e_ab = gauss_valid(ab, h, w);
  const std::size_t m = mu_a.size();
  SsimResult r{0.0, {}};
  std::vector<double> d_mu(want_grad ? m : 0), d_aa(want_grad ? m : 0), d_ab(want_grad ? m : 0);
  for (std::size_t i = 0; i < m; ++i) {
    const double sa = e_aa[i] - mu_a[i] * mu_a[i];
    const double sb = e_bb[i] - mu_b[i] * mu_b[i];
    const double sab = e_ab[i] - mu_a[i] * mu_b[i];
    const double n1 = 2.0 * mu_a[i] * mu_b[i] + c1, n2 = 2.0 * sab + c2;
    const double d1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1, d2 = sa + sb + c2;
    const double s = n1 * n2 / (d1 * d2);
    r.mean += s;
    if (want_grad) {
      const double ds_dmu = 2.0 * mu_b[i] * n2 / (d1 * d2) - 2.0 * mu_a[i] * s / d1;
      const double ds_dsab = 2.0 * n1 / (d1 * d2);
      const double ds_dsa = -s / d2;
      // Chain through sa = E[a^2] - mu_a^2 and sab = E[ab] - mu_a mu_b.
      d_mu[i] = ds_dmu - 2.0 * mu_a[i] * ds_dsa - mu_b[i] * ds_dsab;
      d_aa[i] = ds_dsa;
      d_ab[i] = ds_dsab;
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  r.mean *= inv_m;
  if (want_grad) {
    const auto g_mu = gauss_valid_adjoint(d_mu, h, w);
    const auto g_aa = gauss_valid_adjoint(d_aa, h, w);
    const auto g_ab = gauss_valid_adjoint(d_ab, h, w);
    r.grad_a.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      r.grad_a[i] = inv_m * (g_mu[i] + 2.0 * a[i] * g_aa[i] + b[i] * g_ab[i]);
    }
  }
  return r;
}

}  // namespace detail

/// alpha(i,j) = max of gt over the window x window neighbourhood (zero padded).
template <class T>
Tensor<T> alpha_map(const Tensor<T>& gt, std::size_t window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("alpha window must be odd, got " + std::to_string(window));
  for (T v : gt.data()) {
    if (v < T{0}) throw DataError("alpha_map requires ground truth in [0,1]");
  }
  // Max pooling skips padded taps; with gt >= 0 that equals zero padding.
  return kernels::pool2d_forward(gt, PoolOptions{PoolMode::max, window, 1, window / 2}, nullptr);
}

/// Per-pixel loss weights; a sample whose weights sum to zero gets uniform weights.
template <class T>
Tensor<T> loss_weights(const Tensor<T>& alpha, const LossOptions& opt = {}) {
  Tensor<T> w = alpha;
  if (opt.weight_mode == WeightMode::one_plus_lambda_alpha) {
    for (auto& v : w.data()) v = static_cast<T>(1.0 + opt.lambda * v);
  }
  const Shape s = w.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* p = w.plane(n, c);
      double total = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) total += p[i];
      if (total == 0.0) std::fill(p, p + s.plane(), T{1});
    }
  return w;
}

/// sum w * bce / sum w (or / pixel count), mean over the batch.
template <class T>
Var<T> weighted_bce(const Var<T>& logits, const Tensor<T>& gt, const Tensor<T>& weights,
                    WeightNorm norm = WeightNorm::weight_sum) {
  detail::require_single_channel(logits.shape(), weights.shape(), "weighted_bce");
  const std::size_t hw = logits.shape().plane();
  return detail::per_sample_loss("weighted_bce", logits, gt, [&](const T* x, const T* g, std::size_t n, double* grad) {
    const T* w = weights.plane(n, 0);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      num += w[i] * detail::stable_bce(x[i], g[i]);
      den += w[i];
    }
    if (norm == WeightNorm::pixel_count) den = static_cast<double>(hw);
    if (grad) {
      for (std::size_t i = 0; i < hw; ++i) grad[i] = w[i] * (detail::sigmoid_d(x[i]) - g[i]) / den;
    }
    return num / den;
  });
}

/// 1 - (inter + 1) / (union + 1) with weighted intersection and union.
template <class T>
Var<T> weighted_iou(const Var<T>& logits, const Tensor<T>& gt, const Tensor<T>& weights) {
  detail::require_single_channel(logits.shape(), weights.shape(), "weighted_iou");
  const std::size_t hw = logits.shape().plane();
  return detail::per_sample_loss("weighted_iou", logits, gt, [&](const T* x, const T* g, std::size_t n, double* grad) {
    const T* w = weights.plane(n, 0);
    double inter = 0.0, total = 0.0;
    std::vector<double> p(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      p[i] = detail::sigmoid_d(x[i]);
      inter += w[i] * p[i] * g[i];
      total += w[i] * (p[i] + g[i]);
    }
    const double uni = total - inter;
    const double num = inter + 1.0, den = uni + 1.0;
    if (grad) {
      for (std::size_t i = 0; i < hw; ++i) {
        const double d_inter = w[i] * g[i];
        const double d_uni = w[i] - w[i] * g[i];
        const double dl_dp = -(d_inter * den - num * d_uni) / (den * den);
        grad[i] = dl_dp * p[i] * (1.0 - p[i]);
      }
    }
    return 1.0 - num / den;
  });
}

/// sum w * |sigmoid(x) - g| / sum w (or / pixel count).
template <class T>
Var<T> weighted_l1(const Var<T>& logits, const Tensor<T>& gt, const Tensor<T>& weights,
                   WeightNorm norm = WeightNorm::weight_sum) {
  detail::require_single_channel(logits.shape(), weights.shape(), "weighted_l1");
  const std::size_t hw = logits.shape().plane();
  return detail::per_sample_loss("weighted_l1", logits, gt, [&](const T* x, const T* g, std::size_t n, double* grad) {
    const T* w = weights.plane(n, 0);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      num += w[i] * std::abs(detail::sigmoid_d(x[i]) - g[i]);
      den += w[i];
    }
    if (norm == WeightNorm::pixel_count) den = static_cast<double>(hw);
    if (grad) {
      for (std::size_t i = 0; i < hw; ++i) {
        const double p = detail::sigmoid_d(x[i]);
        const double d = p - g[i];
        const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        grad[i] = w[i] * sign * p * (1.0 - p) / den;
      }
    }
    return num / den;
  });
}

/// Unweighted mean binary cross-entropy.
template <class T>
Var<T> bce_loss(const Var<T>& logits, const Tensor<T>& gt) {
  const std::size_t hw = logits.shape().plane();
  return detail::per_sample_loss("bce", logits, gt, [&](const T* x, const T* g, std::size_t, double* grad) {
    double total = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      total += detail::stable_bce(x[i], g[i]);
      if (grad) grad[i] = (detail::sigmoid_d(x[i]) - g[i]) / static_cast<double>(hw);
    }
    return total / static_cast<double>(hw);
  });
}

/// 1 - (2 sum p g + 1) / (sum p + sum g + 1).
template <class T>
Var<T> dice_loss(const Var<T>& logits, const Tensor<T>& gt) {
  const std::size_t hw = logits.shape().plane();
  return detail::per_sample_loss("dice", logits, gt, [&](const T* x, const T* g, std::size_t, double* grad) {
    std::vector<double> p(hw);
    double pg = 0.0, ps = 0.0, gs = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      p[i] = detail::sigmoid_d(x[i]);
      pg += p[i] * g[i];
      ps += p[i];
      gs += g[i];
    }
    const double num = 2.0 * pg + 1.0, den = ps + gs + 1.0;
    if (grad) {
      for (std::size_t i = 0; i < hw; ++i) {
        grad[i] = -(2.0 * g[i] * den - num) / (den * den) * p[i] * (1.0 - p[i]);
      }
    }
    return 1.0 - num / den;
  });
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, valid positions) of two
/// single-channel maps, averaged over the batch.
template <class T>
double ssim_index(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_single_channel(a.shape(), b.shape(), "ssim");
  const Shape s = a.shape();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    std::vector<double> pa(a.plane(n, 0), a.plane(n, 0) + s.plane()), pb(b.plane(n, 0), b.plane(n, 0) + s.plane());
    total += detail::ssim_plane(pa, pb, s.h, s.w, false).mean;
  }
  return total / static_cast<double>(s.n);
}

/// 1 - SSIM(sigmoid(logits), gt).
template <class T>
Var<T> ssim_loss(const Var<T>& logits, const Tensor<T>& gt) {
  const Shape s = logits.shape();
  return detail::per_sample_loss("ssim", logits, gt, [&](const T* x, const T* g, std::size_t, double* grad) {
    std::vector<double> p(s.plane()), gv(g, g + s.plane());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = detail::sigmoid_d(x[i]);
    const detail::SsimResult r = detail::ssim_plane(p, gv, s.h, s.w, grad != nullptr);
    if (grad) {
      for (std::size_t i = 0; i < p.size(); ++i) grad[i] = -r.grad_a[i] * p[i] * (1.0 - p[i]);
    }
    return 1.0 - r.mean;
  });
}

/// wBCE + wIoU + wL1 + SSIM with the alpha map computed once.
template <class T>
LossResult<T> salient_loss(const Var<T>& logits, const Tensor<T>& gt, const LossOptions& opt = {}) {
  const Tensor<T> w = loss_weights(alpha_map(gt, opt.alpha_window), opt);
  const Var<T> wbce = weighted_bce(logits, gt, w, opt.normalization);
  const Var<T> wiou = weighted_iou(logits, gt, w);
  const Var<T> wl1 = weighted_l1(logits, gt, w, opt.normalization);
  const Var<T> ssim = ssim_loss(logits, gt);
  LossResult<T> r;
  r.total = add_n<T>({wbce, wiou, wl1, ssim});
  r.report.terms = {{"wbce", wbce.value().item()},
                    {"wiou", wiou.value().item()},
                    {"wl1", wl1.value().item()},
                    {"ssim", ssim.value().item()}};
  r.report.coefficients = {{"wbce", 1.0}, {"wiou", 1.0}, {"wl1", 1.0}, {"ssim", 1.0}};
  return r;
}

/// 0.001 * BCE + Dice + SSIM on the contour head.
template <class T>
LossResult<T> contour_loss(const Var<T>& logits, const Tensor<T>& contour_gt) {
  const Var<T> bce = bce_loss(logits, contour_gt);
  const Var<T> dice = dice_loss(logits, contour_gt);
  const Var<T> ssim = ssim_loss(logits, contour_gt);
  LossResult<T> r;
  r.total = add_n<T>({scale(bce, static_cast<T>(kContourBceWeight)), dice, ssim});
  r.report.terms = {{"bce", bce.value().item()}, {"dice", dice.value().item()}, {"ssim_contour", ssim.value().item()}};
  r.report.coefficients = {{"bce", kContourBceWeight}, {"dice", 1.0}, {"ssim_contour", 1.0}};
  return r;
}

/// Morphological gradient (3x3 dilation minus 3x3 erosion, zero padded) of
/// the mask binarized at 0.5.
template <class T>
Tensor<T> contour_from_mask(const Tensor<T>& gt) {
  const Shape s = gt.shape();
  Tensor<T> out(s);
  const auto h = static_cast<std::ptrdiff_t>(s.h), w = static_cast<std::ptrdiff_t>(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* g = gt.plane(n, c);
      T* o = out.plane(n, c);
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          bool any = false, all = true;
          for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
              const std::ptrdiff_t yy = y + dy, xx = x + dx;
              const bool fg = yy >= 0 && yy < h && xx >= 0 && xx < w && g[yy * w + xx] >= T(0.5);
              any = any || fg;
              all = all && fg;
            }
          o[y * w + x] = (any && !all) ? T{1} : T{0};
        }
    }
  return out;
}

}  // namespace sodawide
