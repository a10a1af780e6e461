#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sodawide/tensor.hpp"

namespace sodawide {

inline constexpr std::size_t kThresholds = 256;

inline double threshold_at(std::size_t k) { return static_cast<double>(k) / 255.0; }

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
};

enum class EMeasureMode { max, adaptive };

struct MetricOptions {
  double beta_squared = 0.3;
  EMeasureMode e_mode = EMeasureMode::max;
  bool per_image_f = false;
};

struct ImageMetrics {
  std::string name;
  double mae = 0.0;
  double f_max = 0.0;
  double e_max = 0.0;
  PrCurve pr;
};

struct MetricReport {
  double mae = 0.0;
  double f_max = 0.0;
  double e_max = 0.0;
  std::size_t n_images = 0;
  std::vector<double> precision;
  std::vector<double> recall;
};

namespace detail {

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + a.shape().str() + " vs ground truth " + b.shape().str());
  }
}

/// Highest k with v >= k/255, or -1 when v < 0. Uses the same double
/// comparison as the threshold sweep so bins agree exactly.
inline int threshold_bin(double v) {
  if (!(v >= 0.0)) return -1;
  int k = static_cast<int>(std::min(255.0, std::floor(v * 255.0)));
  while (k < 255 && v >= threshold_at(static_cast<std::size_t>(k + 1))) ++k;
  while (k > 0 && v < threshold_at(static_cast<std::size_t>(k))) --k;
  return k;
}

/// Per-threshold counts of predicted positives, split by gt class.
struct SweepCounts {
  std::array<double, kThresholds> pos_fg{};  // TP
  std::array<double, kThresholds> pos_bg{};  // FP
  double fg = 0.0;
  double total = 0.0;
};

template <class T>
SweepCounts sweep(const Tensor<T>& pred, const Tensor<T>& gt) {
  SweepCounts c;
  std::array<double, kThresholds> hist_fg{}, hist_bg{};
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool fg = gt[i] >= T(0.5);
    c.fg += fg;
    const int k = threshold_bin(static_cast<double>(pred[i]));
    if (k >= 0) (fg ? hist_fg : hist_bg)[static_cast<std::size_t>(k)] += 1.0;
  }
  c.total = static_cast<double>(pred.numel());
  double acc_fg = 0.0, acc_bg = 0.0;
  for (std::size_t k = kThresholds; k-- > 0;) {
    acc_fg += hist_fg[k];
    acc_bg += hist_bg[k];
    c.pos_fg[k] = acc_fg;
    c.pos_bg[k] = acc_bg;
  }
  return c;
}

/// Enhanced alignment of a binary prediction with tp/fp predicted positives.
inline double e_from_counts(double tp, double fp, double fg, double total) {
  const double mf = (tp + fp) / total;
  const double mg = fg / total;
  if (fg == 0.0) return 1.0 - mf;
  if (fg == total) return mf;
  const double fn = fg - tp, tn = total - fg - fp;
  auto align = [&](double f, double g) {
    const double af = f - mf, ag = g - mg;
    const double xi = 2.0 * af * ag / (af * af + ag * ag);
    return (1.0 + xi) * (1.0 + xi) / 4.0;
  };
  return (tp * align(1, 1) + fp * align(1, 0) + fn * align(0, 1) + tn * align(0, 0)) / total;
}

}  // namespace detail

template <class T>
double mae(const Tensor<T>& pred, const Tensor<T>& gt) {
  detail::require_same(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += std::abs(static_cast<double>(pred[i]) - gt[i]);
  return s / static_cast<double>(pred.numel());
}

/// Precision and recall at thresholds k/255, k = 0..255, gt binarized at 0.5.
template <class T>
PrCurve pr_curve(const Tensor<T>& pred, const Tensor<T>& gt) {
  detail::require_same(pred, gt, "pr_curve");
  const detail::SweepCounts c = detail::sweep(pred, gt);
  PrCurve out;
  out.precision.resize(kThresholds);
  out.recall.resize(kThresholds);
  for (std::size_t k = 0; k < kThresholds; ++k) {
    const double tp = c.pos_fg[k], positives = c.pos_fg[k] + c.pos_bg[k];
    out.precision[k] = positives == 0.0 ? 1.0 : tp / positives;
    out.recall[k] = c.fg == 0.0 ? 1.0 : tp / c.fg;
  }
  return out;
}

inline double f_measure(double p, double r, double beta_squared) {
  const double den = beta_squared * p + r;
  return den == 0.0 ? 0.0 : (1.0 + beta_squared) * p * r / den;
}

inline double max_f_measure(const std::vector<double>& precision, const std::vector<double>& recall,
                            double beta_squared = 0.3) {
  if (precision.size() != recall.size()) throw ShapeError("precision and recall lengths differ");
  double best = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) best = std::max(best, f_measure(precision[k], recall[k], beta_squared));
  return best;
}

/// E-measure at each of the 256 thresholds.
template <class T>
std::vector<double> e_curve(const Tensor<T>& pred, const Tensor<T>& gt) {
  detail::require_same(pred, gt, "e_measure");
  const detail::SweepCounts c = detail::sweep(pred, gt);
  std::vector<double> out(kThresholds);
  for (std::size_t k = 0; k < kThresholds; ++k) {
    out[k] = detail::e_from_counts(c.pos_fg[k], c.pos_bg[k], c.fg, c.total);
  }
  return out;
}

template <class T>
double e_measure_max(const Tensor<T>& pred, const Tensor<T>& gt) {
  const auto curve = e_curve(pred, gt);
  return *std::max_element(curve.begin(), curve.end());
}

/// E-measure at the adaptive threshold min(2 * mean(pred), 1).
template <class T>
double e_measure_adaptive(const Tensor<T>& pred, const Tensor<T>& gt) {
  detail::require_same(pred, gt, "e_measure");
  double mean = 0.0;
  for (T v : pred.data()) mean += v;
  mean /= static_cast<double>(pred.numel());
  const double t = std::min(2.0 * mean, 1.0);
  double tp = 0.0, fp = 0.0, fg = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool g = gt[i] >= T(0.5);
    const bool p = static_cast<double>(pred[i]) >= t;
    fg += g;
    tp += p && g;
    fp += p && !g;
  }
  return detail::e_from_counts(tp, fp, fg, static_cast<double>(pred.numel()));
}

template <class T>
ImageMetrics evaluate_image(const std::string& name, const Tensor<T>& pred, const Tensor<T>& gt,
                            const MetricOptions& opt = {}) {
  ImageMetrics m;
  m.name = name;
  m.mae = mae(pred, gt);
  m.pr = pr_curve(pred, gt);
  m.f_max = max_f_measure(m.pr.precision, m.pr.recall, opt.beta_squared);
  m.e_max = opt.e_mode == EMeasureMode::max ? e_measure_max(pred, gt) : e_measure_adaptive(pred, gt);
  return m;
}

/// Dataset aggregate: mean MAE and E-measure over images; F_max from the
/// per-threshold mean of P and R (or the mean of per-image F_max).
inline MetricReport aggregate(const std::vector<ImageMetrics>& images, const MetricOptions& opt = {}) {
  if (images.empty()) throw DataError("no images to evaluate");
  MetricReport r;
  r.n_images = images.size();
  r.precision.assign(kThresholds, 0.0);
  r.recall.assign(kThresholds, 0.0);
  double f_sum = 0.0;
  for (const auto& m : images) {
    r.mae += m.mae;
    r.e_max += m.e_max;
    f_sum += m.f_max;
    for (std::size_t k = 0; k < kThresholds; ++k) {
      r.precision[k] += m.pr.precision[k];
      r.recall[k] += m.pr.recall[k];
    }
  }
  const double n = static_cast<double>(images.size());
  r.mae /= n;
  r.e_max /= n;
  for (std::size_t k = 0; k < kThresholds; ++k) {
    r.precision[k] /= n;
    r.recall[k] /= n;
  }
  r.f_max = opt.per_image_f ? f_sum / n : max_f_measure(r.precision, r.recall, opt.beta_squared);
  return r;
}

}  // namespace sodawide
