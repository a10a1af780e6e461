#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

struct GradCheckOptions {
  double epsilon = 1e-4;
  double threshold = 1e-4;
  /// Tensors with at most this many elements are checked on every coordinate;
  /// larger ones on `sample_count` random coordinates.
  std::size_t full_check_limit = 256;
  std::size_t sample_count = 64;
  std::uint64_t seed = 0;
  /// Hold relu masks and max-pool winners at their values at the check point,
  /// so the differences stay on the smooth piece the tape gradient belongs to.
  bool hold_patterns = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double threshold = 0.0;
  /// Coordinates whose probes would have switched a relu or max-pool pattern.
  std::size_t kinks_crossed = 0;
  bool passed = true;
};

namespace detail {

class PatternScope {
 public:
  explicit PatternScope(bool active) : active_(active) {
    if (!active_) return;
    PatternTape& tape = pattern_tape();
    if (tape.mode != PatternTape::Mode::off) throw std::logic_error("nested pattern-holding gradient checks");
    tape = PatternTape{};
    tape.mode = PatternTape::Mode::record;
  }
  ~PatternScope() {
    if (active_) pattern_tape() = PatternTape{};
  }
  PatternScope(const PatternScope&) = delete;
  PatternScope& operator=(const PatternScope&) = delete;

  void start_replay() {
    if (active_) pattern_tape().mode = PatternTape::Mode::replay;
  }
  // Rewinds the tape before one probe evaluation.
  void rewind() {
    if (!active_) return;
    pattern_tape().cursor = 0;
  }
  std::size_t changed() const { return active_ ? pattern_tape().changed : 0; }

 private:
  bool active_;
};

inline void check_epsilon(double eps) {
  if (eps < 1e-6 || eps > 1e-2) throw std::invalid_argument("finite_diff_check epsilon must lie in [1e-6, 1e-2]");
}

// Central differences of `eval` (which evaluates f with `probe` modified in
// place) against `analytic` on all or a random subset of coordinates.
template <class Eval>
GradCheckReport compare_central(const Tensor<double>& analytic, Tensor<double>& probe, Eval&& eval,
                                const GradCheckOptions& opt, PatternScope& patterns) {
  patterns.start_replay();
  std::vector<std::size_t> coords(probe.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (probe.numel() > opt.full_check_limit) {
    std::mt19937_64 rng(opt.seed);
    for (std::size_t i = 0; i < opt.sample_count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(opt.sample_count);
  }

  GradCheckReport report;
  report.threshold = opt.threshold;
  NoGradGuard no_grad;
  for (std::size_t idx : coords) {
    const double original = probe[idx];
    const std::size_t changed_before = patterns.changed();
    probe[idx] = original + opt.epsilon;
    patterns.rewind();
    const double fp = eval();
    probe[idx] = original - opt.epsilon;
    patterns.rewind();
    const double fm = eval();
    probe[idx] = original;
    if (patterns.changed() != changed_before) ++report.kinks_crossed;
    const double numeric = (fp - fm) / (2.0 * opt.epsilon);
    const double a = analytic[idx];
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = rel;
      report.worst_index = idx;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < opt.threshold;
  return report;
}

}  // namespace detail

/// Compares the tape gradient of a scalar function against central
/// differences. Relative error uses a max(1, |analytic|, |numeric|) denominator.
template <class F>
GradCheckReport finite_diff_check(F&& f, const Tensor<double>& point, const GradCheckOptions& opt = {}) {
  detail::check_epsilon(opt.epsilon);
  detail::PatternScope patterns(opt.hold_patterns);
  Var<double> x(point, true);
  Var<double> y = f(x);
  if (y.value().numel() != 1) throw ShapeError("finite_diff_check function must return a scalar");
  Tensor<double> analytic = Tensor<double>::zeros(point.shape());
  if (y.requires_grad()) {
    backward(y);
    if (x.has_grad()) analytic = x.grad();
  }
  Tensor<double> probe = point;
  return detail::compare_central(
      analytic, probe, [&] { return f(Var<double>(probe)).value().item(); }, opt, patterns);
}

/// Same check with respect to a leaf parameter that `f()` reads internally.
/// The parameter's value is restored afterwards; its gradient is cleared.
template <class F>
GradCheckReport finite_diff_check_param(F&& f, Var<double> param, const GradCheckOptions& opt = {}) {
  detail::check_epsilon(opt.epsilon);
  if (!param.requires_grad()) throw std::invalid_argument("finite_diff_check_param needs a trainable leaf");
  param.zero_grad();
  detail::PatternScope patterns(opt.hold_patterns);
  Var<double> y = f();
  if (y.value().numel() != 1) throw ShapeError("finite_diff_check function must return a scalar");
  backward(y);
  const Tensor<double> analytic = param.has_grad() ? param.grad() : Tensor<double>::zeros(param.shape());
  param.zero_grad();
  return detail::compare_central(
      analytic, param.mutable_value(), [&] { return f().value().item(); }, opt, patterns);
}

}  // namespace sodawide
