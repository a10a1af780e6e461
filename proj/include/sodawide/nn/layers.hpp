#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sodawide/nn/params.hpp"
#include "sodawide/ops.hpp"

namespace sodawide::nn {

/// One row of a forward shape trace.
struct TraceEntry {
  std::string block;
  Shape input;
  Shape output;
  std::vector<std::size_t> rates;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

using Trace = std::vector<TraceEntry>;

struct Context {
  bool training = true;
  Trace* trace = nullptr;

  void emit(const std::string& block, Shape in, Shape out, std::vector<std::size_t> rates = {}) const {
    if (trace) trace->push_back(TraceEntry{block, in, out, std::move(rates)});
  }
};

template <class T>
struct Conv {
  Var<T> weight;
  std::optional<Var<T>> bias;
  Conv2dOptions opt;

  /// Square kernel with "same" padding for odd k.
  Conv(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout, std::size_t k,
       std::size_t dilation = 1, bool with_bias = true)
      : weight(ps.kaiming(path + ".weight", Shape{cout, cin, k, k})) {
    opt.dilation = dilation;
    opt.padding = dilation * (k / 2);
    if (with_bias) bias = ps.constant(path + ".bias", channel_vector(cout), T{0});
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, opt); }

  std::size_t out_channels() const { return weight.shape().n; }

  Shape out_shape(Shape s) const {
    if (s.c != weight.shape().c) {
      throw ShapeError("conv channel mismatch: input " + s.str() + " vs kernel " + weight.shape().str());
    }
    const std::size_t k = weight.shape().h;
    return Shape{s.n, out_channels(), conv_out_dim(s.h, k, opt.stride, opt.padding, opt.dilation),
                 conv_out_dim(s.w, k, opt.stride, opt.padding, opt.dilation)};
  }
};

template <class T>
struct BatchNorm {
  Var<T> gamma, beta, running_mean, running_var;

  BatchNorm(ParamStore<T>& ps, const std::string& path, std::size_t channels)
      : gamma(ps.constant(path + ".weight", channel_vector(channels), T{1})),
        beta(ps.constant(path + ".bias", channel_vector(channels), T{0})),
        running_mean(ps.constant(path + ".running_mean", channel_vector(channels), T{0}, false)),
        running_var(ps.constant(path + ".running_var", channel_vector(channels), T{1}, false)) {}

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    Var<T> rm = running_mean, rv = running_var;
    BatchNormOptions opt;
    opt.training = ctx.training;
    return batch_norm(x, gamma, beta, rm.mutable_value(), rv.mutable_value(), opt);
  }
};

template <class T>
struct GroupNorm {
  Var<T> gamma, beta;
  std::size_t groups;

  GroupNorm(ParamStore<T>& ps, const std::string& path, std::size_t channels, std::size_t groups_)
      : gamma(ps.constant(path + ".weight", channel_vector(channels), T{1})),
        beta(ps.constant(path + ".bias", channel_vector(channels), T{0})),
        groups(groups_) {
    if (groups < 1 || channels % groups != 0) {
      throw ConfigError("groupnorm_groups (" + std::to_string(groups) + ") must divide " + std::to_string(channels) +
                        " channels at " + path);
    }
  }

  Var<T> operator()(const Var<T>& x) const { return group_norm(x, groups, gamma, beta); }
};

/// ReLU(BN(conv3x3_d(x))).
template <class T>
struct ConvB {
  Conv<T> conv;
  BatchNorm<T> bn;

  ConvB(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout, std::size_t dilation = 1)
      : conv(ps, path + ".conv", cin, cout, 3, dilation, false), bn(ps, path + ".bn", cout) {}

  Var<T> operator()(const Var<T>& x, const Context& ctx) const { return relu(bn(conv(x), ctx)); }
  Shape out_shape(Shape s) const { return conv.out_shape(s); }
};

/// ReLU(GN(conv3x3(x))), the CFM refinement layer.
template <class T>
struct ConvGN {
  Conv<T> conv;
  GroupNorm<T> gn;

  ConvGN(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout, std::size_t groups)
      : conv(ps, path + ".conv", cin, cout, 3, 1, false), gn(ps, path + ".gn", cout, groups) {}

  Var<T> operator()(const Var<T>& x) const { return relu(gn(conv(x))); }
  Shape out_shape(Shape s) const { return conv.out_shape(s); }
};

template <class T>
struct DoubleConv {
  ConvB<T> first, second;

  DoubleConv(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout)
      : first(ps, path + ".0", cin, cout), second(ps, path + ".1", cout, cout) {}

  Var<T> operator()(const Var<T>& x, const Context& ctx) const { return second(first(x, ctx), ctx); }
  Shape out_shape(Shape s) const { return second.out_shape(first.out_shape(s)); }
};

inline void require_even(const Shape& s, const char* block) {
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError(std::string(block) + " needs even spatial dims, got " + s.str());
  }
}

inline Shape halved(Shape s) {
  s.h /= 2;
  s.w /= 2;
  return s;
}

inline Shape scaled(Shape s, std::size_t factor) {
  s.h *= factor;
  s.w *= factor;
  return s;
}

inline Shape with_channels(Shape s, std::size_t c) {
  s.c = c;
  return s;
}

/// Double_Conv(max_pool(x)).
template <class T>
struct DownBlock {
  DoubleConv<T> conv;

  DownBlock(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout)
      : conv(ps, path, cin, cout) {}

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    require_even(x.shape(), "down block");
    return conv(max_pool2(x), ctx);
  }
  Shape out_shape(Shape s) const {
    require_even(s, "down block");
    return conv.out_shape(halved(s));
  }
};

/// Double_Conv(cat(up2(x), skip)).
template <class T>
struct UpBlock {
  DoubleConv<T> conv;

  UpBlock(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout)
      : conv(ps, path, cin, cout) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& skip, const Context& ctx) const {
    const Var<T> up = upsample(x, 2);
    if (up.shape().h != skip.shape().h || up.shape().w != skip.shape().w) {
      throw ShapeError("up block: upsampled " + up.shape().str() + " does not match skip " + skip.shape().str());
    }
    return conv(concat<T>({up, skip}), ctx);
  }
};

}  // namespace sodawide::nn
