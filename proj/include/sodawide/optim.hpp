#pragma once

#include <cmath>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept in double; parameters with
/// no gradient this step are left untouched (their moments do not decay).
template <class T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value().numel(), 0.0);
      v_.emplace_back(p.value().numel(), 0.0);
    }
  }

  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::size_t steps() const { return t_; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Var<T>& p = params_[k];
      if (!p.has_grad()) continue;
      const Tensor<T>& g = p.grad();
      Tensor<T>& w = p.mutable_value();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        const double update = opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.epsilon);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Var<T>> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace sodawide
