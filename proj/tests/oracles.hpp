#pragma once

// Brute-force reference implementations used only by tests. Each one is a
// direct transcription of the defining formula with no shared code paths
// from the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sodawide/tensor.hpp"

namespace oracle {

using sodawide::Shape;
using sodawide::Tensor;

inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const std::vector<double>& bias,
                             int stride, int pad, int dil, int groups) {
  const Shape xs = x.shape(), ws = w.shape();
  const int H = static_cast<int>(xs.h), W = static_cast<int>(xs.w);
  const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
  const int oh = (H + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const int ow = (W + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  const int cin_g = static_cast<int>(ws.c), cout_g = static_cast<int>(ws.n) / groups;
  Tensor<double> y(Shape{xs.n, ws.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (int co = 0; co < static_cast<int>(ws.n); ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          const int g = co / cout_g;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky * dil;
                const int ix = ox * stride - pad + kx * dil;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, g * cin_g + ci, iy, ix);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

/// q: Nq x d, k/v: Nk x d, row-major; returns Nq x d.
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, int nq, int nk, int d) {
  std::vector<double> out(static_cast<std::size_t>(nq * d), 0.0);
  for (int i = 0; i < nq; ++i) {
    std::vector<double> logits(nk);
    for (int j = 0; j < nk; ++j) {
      double s = 0;
      for (int t = 0; t < d; ++t) s += q[i * d + t] * k[j * d + t];
      logits[j] = s / std::sqrt(static_cast<double>(d));
    }
    double denom = 0;
    for (int j = 0; j < nk; ++j) denom += std::exp(logits[j]);
    for (int j = 0; j < nk; ++j) {
      const double p = std::exp(logits[j]) / denom;
      for (int t = 0; t < d; ++t) out[i * d + t] += p * v[j * d + t];
    }
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double bce(double logit, double g) {
  const double p = sigmoid(logit);
  return -(g * std::log(p) + (1 - g) * std::log(1 - p));
}

// Weighted losses on a single HxW plane with explicit weights.
inline double weighted_bce(const std::vector<double>& x, const std::vector<double>& g, const std::vector<double>& w) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += w[i] * bce(x[i], g[i]);
    den += w[i];
  }
  return num / den;
}

inline double weighted_iou(const std::vector<double>& x, const std::vector<double>& g, const std::vector<double>& w) {
  double inter = 0, total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = sigmoid(x[i]);
    inter += w[i] * p * g[i];
    total += w[i] * (p + g[i]);
  }
  const double uni = total - inter;
  return 1.0 - (inter + 1.0) / (uni + 1.0);
}

inline double weighted_l1(const std::vector<double>& x, const std::vector<double>& g, const std::vector<double>& w) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += w[i] * std::abs(sigmoid(x[i]) - g[i]);
    den += w[i];
  }
  return num / den;
}

inline double dice(const std::vector<double>& x, const std::vector<double>& g) {
  double pg = 0, ps = 0, gs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = sigmoid(x[i]);
    pg += p * g[i];
    ps += p;
    gs += g[i];
  }
  return 1.0 - (2.0 * pg + 1.0) / (ps + gs + 1.0);
}

/// Windowed max with zero padding, odd window.
inline std::vector<double> window_max(const std::vector<double>& g, int h, int w, int window) {
  const int r = window / 2;
  std::vector<double> out(g.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double m = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          m = std::max(m, g[yy * w + xx]);
        }
      out[y * w + x] = m;
    }
  return out;
}

/// SSIM with an 11x11 Gaussian (sigma 1.5), valid windows, brute force.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  const int k = 11;
  double kernel[11];
  double ksum = 0;
  for (int i = 0; i < k; ++i) {
    kernel[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (double& v : kernel) v /= ksum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  for (int y = 0; y + k <= h; ++y)
    for (int x = 0; x + k <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const double wt = kernel[dy] * kernel[dx];
          const double va = a[(y + dy) * w + x + dx], vb = b[(y + dy) * w + x + dx];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      saa -= ma * ma;
      sbb -= mb * mb;
      sab -= ma * mb;
      total += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
      ++count;
    }
  return total / count;
}

inline double mae(const std::vector<double>& p, const std::vector<double>& g) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - g[i]);
  return s / static_cast<double>(p.size());
}

struct Pr {
  std::vector<double> precision, recall;
};

inline Pr pr_curve(const std::vector<double>& p, const std::vector<double>& g) {
  Pr out;
  for (int k = 0; k < 256; ++k) {
    const double t = k / 255.0;
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool pos = p[i] >= t;
      const bool gt = g[i] >= 0.5;
      if (pos && gt) tp += 1;
      if (pos && !gt) fp += 1;
      if (!pos && gt) fn += 1;
    }
    out.precision.push_back(tp + fp == 0 ? 1.0 : tp / (tp + fp));
    out.recall.push_back(tp + fn == 0 ? 1.0 : tp / (tp + fn));
  }
  return out;
}

inline double max_f(const std::vector<double>& prec, const std::vector<double>& rec, double beta2) {
  double best = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    const double den = beta2 * prec[i] + rec[i];
    const double f = den == 0 ? 0.0 : (1 + beta2) * prec[i] * rec[i] / den;
    best = std::max(best, f);
  }
  return best;
}

/// Enhanced-alignment measure of two binary maps, mean over pixels.
inline double e_measure_binary(const std::vector<double>& fm, const std::vector<double>& gt) {
  const double n = static_cast<double>(fm.size());
  double mf = 0, mg = 0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    mf += fm[i];
    mg += gt[i];
  }
  mf /= n;
  mg /= n;
  if (mg == 0.0) return 1.0 - mf;
  if (mg == 1.0) return mf;
  double s = 0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    const double af = fm[i] - mf, ag = gt[i] - mg;
    const double xi = 2 * af * ag / (af * af + ag * ag);
    s += (1 + xi) * (1 + xi) / 4.0;
  }
  return s / n;
}

inline double e_max(const std::vector<double>& p, const std::vector<double>& g) {
  std::vector<double> gb(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] >= 0.5 ? 1.0 : 0.0;
  double best = 0;
  for (int k = 0; k < 256; ++k) {
    std::vector<double> fm(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) fm[i] = p[i] >= k / 255.0 ? 1.0 : 0.0;
    best = std::max(best, e_measure_binary(fm, gb));
  }
  return best;
}

/// 3x3 morphological gradient with zero padding of a mask binarized at 0.5.
inline std::vector<double> morph_gradient(const std::vector<double>& g, int h, int w) {
  std::vector<double> out(g.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double dil = 0.0, ero = 1.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          const double v = (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : (g[yy * w + xx] >= 0.5 ? 1.0 : 0.0);
          dil = std::max(dil, v);
          ero = std::min(ero, v);
        }
      out[y * w + x] = dil - ero;
    }
  return out;
}

}  // namespace oracle
