#pragma once

#include <bit>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "sodawide/nn/blocks.hpp"
#include "sodawide/nn/config.hpp"

namespace sodawide::nn {

/// Pyramid depth that takes a block at `block_res` down to input_res / 16.
inline std::size_t msa_levels(std::size_t block_res, std::size_t input_res) {
  const std::size_t lowest = input_res / 16;
  if (lowest == 0 || block_res % lowest != 0 || !std::has_single_bit(block_res / lowest) || block_res == lowest) {
    throw ConfigError("attention pyramid cannot reach " + std::to_string(lowest) + " from " +
                      std::to_string(block_res) + " by factor-2 pooling");
  }
  return static_cast<std::size_t>(std::countr_zero(block_res / lowest));
}

template <class T>
struct NetOutput {
  Var<T> saliency;
  std::optional<Var<T>> contour;
};

/// SODAWideNet: stem, two hybrid encoder blocks, bottleneck, two decoder
/// blocks with U-Net skips, saliency and optional contour heads.
template <class T>
class SodaWideNet {
 public:
  SodaWideNet(const NetworkConfig& config, std::uint64_t seed) : config_(config), params_(seed) {
    config_.validate();
    modules_ = std::make_unique<Modules>(params_, config_);
  }

  const NetworkConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  NetOutput<T> forward(const Var<T>& x, const Context& ctx) const {
    const Shape s = x.shape();
    const std::size_t r = config_.input_resolution;
    if (s.c != 3 || s.h != r || s.w != r) {
      throw ShapeError("network expects Nx3x" + std::to_string(r) + "x" + std::to_string(r) + " input, got " +
                       s.str());
    }
    const Modules& m = *modules_;
    const Var<T> e0 = max_pool2(m.stem(x, ctx));
    ctx.emit("stem", s, e0.shape());
    const Var<T> e1 = m.hb1(e0, ctx);
    const Var<T> e2 = m.hb2(e1, ctx);
    const Var<T> b = m.bottleneck(e2, ctx);
    ctx.emit("bottleneck", e2.shape(), b.shape());
    const Var<T> d2 = m.cb2(b, ctx);
    const Var<T> x3 = m.merge2(concat<T>({d2, e1}), ctx);
    ctx.emit("merge2", d2.shape(), x3.shape());
    const Var<T> d3 = m.cb3(x3, ctx);
    const Var<T> f = m.merge1(concat<T>({d3, e0}), ctx);
    ctx.emit("merge1", d3.shape(), f.shape());
    NetOutput<T> out;
    out.saliency = upsample(m.saliency_head(f), 2);
    ctx.emit("head.saliency", f.shape(), out.saliency.shape());
    if (m.contour_head) {
      out.contour = upsample((*m.contour_head)(f), 2);
      ctx.emit("head.contour", f.shape(), out.contour->shape());
    }
    return out;
  }

  NetOutput<T> forward(const Tensor<T>& x, bool training, Trace* trace = nullptr) const {
    return forward(Var<T>(x), Context{training, trace});
  }

  /// The same trace a forward pass records, computed from shapes alone.
  Trace shape_trace(std::size_t batch = 1) const {
    Trace t;
    const Modules& m = *modules_;
    const std::size_t r = config_.input_resolution;
    const Shape in{batch, 3, r, r};
    const Shape e0 = halved(m.stem.out_shape(in));
    t.push_back({"stem", in, e0, {}});
    const Shape e1 = m.hb1.out_shape(e0, &t);
    const Shape e2 = m.hb2.out_shape(e1, &t);
    const Shape b = m.bottleneck.out_shape(e2);
    t.push_back({"bottleneck", e2, b, {}});
    const Shape d2 = m.cb2.out_shape(b, &t);
    const Shape x3 = m.merge2.out_shape(with_channels(d2, d2.c + e1.c));
    t.push_back({"merge2", d2, x3, {}});
    const Shape d3 = m.cb3.out_shape(x3, &t);
    const Shape f = m.merge1.out_shape(with_channels(d3, d3.c + e0.c));
    t.push_back({"merge1", d3, f, {}});
    t.push_back({"head.saliency", f, scaled(m.saliency_head.out_shape(f), 2), {}});
    if (m.contour_head) t.push_back({"head.contour", f, scaled(m.contour_head->out_shape(f), 2), {}});
    return t;
  }

 private:
  struct Modules {
    DoubleConv<T> stem;
    HybridBlock<T> hb1, hb2;
    DoubleConv<T> bottleneck;
    DecoderBlock<T> cb2;
    DoubleConv<T> merge2;
    DecoderBlock<T> cb3;
    DoubleConv<T> merge1;
    Conv<T> saliency_head;
    std::optional<Conv<T>> contour_head;

    Modules(ParamStore<T>& ps, const NetworkConfig& c)
        : stem(ps, "stem", 3, c.width()),
          hb1(ps, "hb1", c.width(), 2 * c.width(), branches(c), c.dilation_schedule.hb1,
              msa_levels(c.input_resolution / 2, c.input_resolution), c.attention_heads, c.groupnorm_groups),
          hb2(ps, "hb2", 2 * c.width(), 2 * c.width(), branches(c), c.dilation_schedule.hb2,
              msa_levels(c.input_resolution / 4, c.input_resolution), c.attention_heads, c.groupnorm_groups),
          bottleneck(ps, "bottleneck", 2 * c.width(), c.width()),
          cb2(ps, "cb2", c.width(), c.enable_mrffam_decoder, c.dilation_schedule.cb2, c.groupnorm_groups),
          merge2(ps, "merge2", 3 * c.width(), c.width()),
          cb3(ps, "cb3", c.width(), c.enable_mrffam_decoder, c.dilation_schedule.cb3, c.groupnorm_groups),
          merge1(ps, "merge1", 2 * c.width(), c.width()),
          saliency_head(ps, "head.saliency", c.width(), 1, 1),
          contour_head(c.enable_contour_head ? std::optional<Conv<T>>(std::in_place, ps, "head.contour", c.width(), 1, 1)
                                             : std::nullopt) {}

    static BranchSet branches(const NetworkConfig& c) { return BranchSet{c.enable_mrffam, c.enable_lpm, c.enable_msa}; }
  };

  NetworkConfig config_;
  ParamStore<T> params_;
  std::unique_ptr<Modules> modules_;
};

}  // namespace sodawide::nn
