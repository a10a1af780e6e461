#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sodawide/gradcheck.hpp"
#include "sodawide/losses.hpp"
#include "sodawide/nn/network.hpp"

namespace sodawide {

enum class AuditScope { primitives, blocks, losses, end_to_end };

inline std::string to_string(AuditScope s) {
  switch (s) {
    case AuditScope::primitives: return "primitives";
    case AuditScope::blocks: return "blocks";
    case AuditScope::losses: return "losses";
    case AuditScope::end_to_end: return "end-to-end";
  }
  return "?";
}

inline AuditScope parse_audit_scope(const std::string& s) {
  if (s == "primitives") return AuditScope::primitives;
  if (s == "blocks") return AuditScope::blocks;
  if (s == "losses") return AuditScope::losses;
  if (s == "end-to-end" || s == "end_to_end") return AuditScope::end_to_end;
  throw ConfigError("gradcheck scope must be primitives, blocks, losses or end-to-end, got '" + s + "'");
}

/// Relative-error bound each scope must meet.
inline double audit_threshold(AuditScope s) { return s == AuditScope::primitives ? 1e-6 : 1e-4; }

struct AuditItem {
  std::string scope;
  std::string name;
  GradCheckReport report;
};

namespace audit_detail {

using Fn = std::function<Var<double>(const Var<double>&)>;

/// sum(y * fixed pseudo-random weights), so every output element matters.
inline Var<double> probe_sum(const Var<double>& y) {
  Tensor<double> w(y.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  return sum(mul(y, Var<double>(w)));
}

struct Runner {
  AuditScope scope;
  GradCheckOptions opt;
  std::vector<AuditItem> items;

  void input(const std::string& name, const Fn& f, const Tensor<double>& point) {
    items.push_back({to_string(scope), name, finite_diff_check(f, point, opt)});
  }

  void param(const std::string& name, const std::function<Var<double>()>& f, const Var<double>& p) {
    items.push_back({to_string(scope), name, finite_diff_check_param(f, p, opt)});
  }

  /// Audits a module with respect to its input and each listed parameter.
  void module(const std::string& name, const Fn& f, const Tensor<double>& x, const nn::ParamStore<double>& ps,
              const std::vector<std::string>& params) {
    input(name + " d/dx", [&](const Var<double>& v) { return probe_sum(f(v)); }, x);
    for (const auto& path : params) {
      const auto* e = ps.find(path);
      if (!e) throw std::logic_error("audit: no parameter " + path);
      param(name + " d/d" + path, [&] { return probe_sum(f(Var<double>(x))); }, e->var);
    }
  }
};

inline void primitives(Runner& r, std::mt19937_64& rng) {
  const auto x = Tensor<double>::randn(Shape{2, 4, 6, 6}, rng);
  const Var<double> w(Tensor<double>::randn(Shape{4, 2, 3, 3}, rng));
  const Var<double> b(Tensor<double>::randn(channel_vector(4), rng));
  const Var<double> gam(Tensor<double>::randn(channel_vector(4), rng));
  const Var<double> bet(Tensor<double>::randn(channel_vector(4), rng));
  const auto p = probe_sum;
  r.input("conv2d d/dx", [&](const Var<double>& v) { return p(conv2d(v, w, b, {2, 2, 2, 2})); }, x);
  r.input("conv2d d/dkernel", [&](const Var<double>& k) { return p(conv2d(Var<double>(x), k, b, {1, 1, 1, 2})); },
          w.value());
  r.input("conv2d d/dbias", [&](const Var<double>& bb) { return p(conv2d(Var<double>(x), w, bb, {1, 3, 3, 2})); },
          b.value());
  r.input("max_pool", [&](const Var<double>& v) { return p(pool2d(v, {PoolMode::max, 2, 2, 0})); }, x);
  r.input("avg_pool", [&](const Var<double>& v) { return p(pool2d(v, {PoolMode::avg, 3, 1, 1})); }, x);
  r.input("bilinear_upsample", [&](const Var<double>& v) { return p(upsample(v, 2)); }, x);
  r.input("bilinear_resize", [&](const Var<double>& v) { return p(bilinear_resize(v, 5, 9)); }, x);
  r.input("group_norm", [&](const Var<double>& v) { return p(group_norm(v, 2, gam, bet)); }, x);
  r.input("group_norm d/dscale", [&](const Var<double>& g) { return p(group_norm(Var<double>(x), 2, g, bet)); },
          gam.value());
  r.input(
      "batch_norm",
      [&](const Var<double>& v) {
        Tensor<double> rm(channel_vector(4)), rv(channel_vector(4), 1.0);
        return p(batch_norm(v, gam, bet, rm, rv, BatchNormOptions{}));
      },
      x);
  r.input("relu", [&](const Var<double>& v) { return p(relu(v)); }, x);
  r.input("sigmoid", [&](const Var<double>& v) { return p(sigmoid(v)); }, x);
  r.input("mul", [&](const Var<double>& v) { return p(mul(v, v)); }, x);
  r.input("concat/slice", [&](const Var<double>& v) { return p(concat<double>({slice_channels(v, 1, 2), v})); }, x);
  const auto q = Tensor<double>::randn(Shape{2, 2, 5, 3}, rng);
  const auto k = Tensor<double>::randn(Shape{2, 2, 7, 3}, rng);
  const auto vv = Tensor<double>::randn(Shape{2, 2, 7, 3}, rng);
  r.input("attention d/dQ",
          [&](const Var<double>& a) { return p(scaled_dot_attention(a, Var<double>(k), Var<double>(vv))); }, q);
  r.input("attention d/dK",
          [&](const Var<double>& a) { return p(scaled_dot_attention(Var<double>(q), a, Var<double>(vv))); }, k);
  r.input("attention d/dV",
          [&](const Var<double>& a) { return p(scaled_dot_attention(Var<double>(q), Var<double>(k), a)); }, vv);
  r.input("tokens", [&](const Var<double>& v) { return p(from_tokens(to_tokens(v, 2), 6, 6)); }, x);
}

inline void blocks(Runner& r, std::mt19937_64& rng) {
  using namespace nn;
  const Context ctx{true, nullptr};
  {
    ParamStore<double> ps(rng());
    ConvB<double> m(ps, "convb", 4, 6, 2);
    r.module("conv_b", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({2, 4, 8, 8}, rng), ps,
             {"convb.conv.weight", "convb.bn.weight"});
  }
  {
    ParamStore<double> ps(rng());
    DoubleConv<double> m(ps, "dc", 3, 4);
    r.module("double_conv", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 3, 8, 8}, rng),
             ps, {"dc.1.conv.weight"});
  }
  {
    ParamStore<double> ps(rng());
    DownBlock<double> m(ps, "down", 4, 8);
    r.module("down_block", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 4, 8, 8}, rng),
             ps, {"down.0.conv.weight"});
  }
  {
    ParamStore<double> ps(rng());
    UpBlock<double> m(ps, "up", 8, 4);
    const auto skip = Tensor<double>::randn({1, 4, 8, 8}, rng);
    r.module("up_block", [&](const Var<double>& v) { return m(v, Var<double>(skip), ctx); },
             Tensor<double>::randn({1, 4, 4, 4}, rng), ps, {"up.0.conv.weight"});
  }
  {
    ParamStore<double> ps(rng());
    Mrffam<double> m(ps, "mrffam", 8, {2, 4});
    r.module("mrffam", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 8, 16, 16}, rng), ps,
             {"mrffam.project.weight", "mrffam.branch1.1.conv.weight", "mrffam.fuse.weight"});
  }
  {
    ParamStore<double> ps(rng());
    Lpm<double> m(ps, "lpm", 4);
    r.module("lpm", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 4, 8, 8}, rng), ps,
             {"lpm.coarse.0.conv.weight", "lpm.fuse.weight"});
  }
  {
    ParamStore<double> ps(rng());
    Msa<double> m(ps, "msa", 4, 2, 1);
    r.module("msa", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 4, 8, 8}, rng), ps,
             {"msa.attn0.q.weight", "msa.attn1.k.weight", "msa.attn2.v.weight", "msa.level1.0.conv.weight"});
  }
  {
    ParamStore<double> ps(rng());
    Cfm<double> m(ps, "cfm", 3, 4, 2);
    const auto b = Tensor<double>::randn({1, 4, 8, 8}, rng), c = Tensor<double>::randn({1, 4, 8, 8}, rng);
    r.module("cfm", [&](const Var<double>& v) { return m({v, Var<double>(b), Var<double>(c)}, ctx); },
             Tensor<double>::randn({1, 4, 8, 8}, rng), ps, {"cfm.in2.0.conv.weight", "cfm.out.gn.weight"});
  }
  {
    ParamStore<double> ps(rng());
    HybridBlock<double> m(ps, "hb", 4, 8, BranchSet{}, {2, 4}, 2, 1, 2);
    r.module("hybrid_block", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 4, 16, 16}, rng),
             ps, {"hb.mrffam.project.weight", "hb.lpm.local.conv.weight", "hb.msa.fuse.weight", "hb.expand.weight"});
  }
  {
    ParamStore<double> ps(rng());
    DecoderBlock<double> m(ps, "cb", 8, true, {2, 4}, 4);
    r.module("decoder_block", [&](const Var<double>& v) { return m(v, ctx); }, Tensor<double>::randn({1, 8, 8, 8}, rng),
             ps, {"cb.mrffam.branch0.0.conv.weight", "cb.cfm.in1.1.conv.weight"});
  }
}

inline Tensor<double> disk_mask(std::size_t n, std::size_t res) {
  Tensor<double> g(Shape{n, 1, res, res});
  const double c = 0.5 * static_cast<double>(res), rad = 0.3 * static_cast<double>(res);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - c - static_cast<double>(b), dx = static_cast<double>(x) + 0.5 - c;
        g.at(b, 0, y, x) = dy * dy + dx * dx <= rad * rad ? 1.0 : 0.0;
      }
  return g;
}

inline void losses(Runner& r, std::mt19937_64& rng) {
  Tensor<double> gt(Shape{2, 1, 16, 16});
  for (auto& v : gt.data()) v = unit_uniform(rng) < 0.35 ? 1.0 : 0.0;
  const auto w = loss_weights(alpha_map(gt, 5));
  const auto contour = contour_from_mask(gt);
  const auto x = Tensor<double>::randn(gt.shape(), rng, 2.0);
  r.input("weighted_bce", [&](const Var<double>& v) { return weighted_bce(v, gt, w); }, x);
  r.input("weighted_iou", [&](const Var<double>& v) { return weighted_iou(v, gt, w); }, x);
  r.input("weighted_l1", [&](const Var<double>& v) { return weighted_l1(v, gt, w); }, x);
  r.input("ssim", [&](const Var<double>& v) { return ssim_loss(v, gt); }, x);
  r.input("bce", [&](const Var<double>& v) { return bce_loss(v, contour); }, x);
  r.input("dice", [&](const Var<double>& v) { return dice_loss(v, contour); }, x);
  r.input("salient_loss", [&](const Var<double>& v) { return salient_loss(v, gt).total; }, x);
  r.input("contour_loss", [&](const Var<double>& v) { return contour_loss(v, contour).total; }, x);
}

inline void end_to_end(Runner& r, std::mt19937_64& rng) {
  using namespace nn;
  const NetworkConfig cfg = NetworkConfig::toy(96, 8);
  SodaWideNet<double> net(cfg, rng());
  const auto gt = disk_mask(1, 96);
  const auto contour = contour_from_mask(gt);
  const auto x = Tensor<double>::uniform(Shape{1, 3, 96, 96}, rng, -1.0, 1.0);
  auto loss = [&](const Var<double>& v) {
    const auto out = net.forward(v, Context{true, nullptr});
    return add(salient_loss(out.saliency, gt).total, contour_loss(*out.contour, contour).total);
  };
  r.input("network d/dinput", loss, x);
  for (const char* path : {"stem.0.conv.weight", "hb1.msa.attn0.q.weight", "hb1.lpm.coarse.1.conv.weight",
                           "hb2.mrffam.branch0.0.conv.weight", "bottleneck.1.bn.weight", "cb2.cfm.out.conv.weight",
                           "cb3.mrffam.fuse.weight", "merge1.0.conv.weight", "head.saliency.weight",
                           "head.contour.bias"}) {
    r.param(std::string("network d/d") + path, [&] { return loss(Var<double>(x)); }, net.params().find(path)->var);
  }
}

}  // namespace audit_detail

/// Runs the finite-difference audit for one scope in double precision.
inline std::vector<AuditItem> run_audit(AuditScope scope, std::uint64_t seed = 0) {
  audit_detail::Runner r{scope, GradCheckOptions{}, {}};
  r.opt.threshold = audit_threshold(scope);
  r.opt.full_check_limit = scope == AuditScope::losses ? 1024 : 256;
  r.opt.sample_count = scope == AuditScope::end_to_end ? 32 : 64;
  r.opt.seed = seed;
  // Network-level checks hold relu masks and max-pool winners fixed; each
  // report still counts the coordinates whose probes crossed a kink.
  r.opt.hold_patterns = scope == AuditScope::blocks || scope == AuditScope::end_to_end;
  std::mt19937_64 rng(seed + 1);
  switch (scope) {
    case AuditScope::primitives: audit_detail::primitives(r, rng); break;
    case AuditScope::blocks: audit_detail::blocks(r, rng); break;
    case AuditScope::losses: audit_detail::losses(r, rng); break;
    case AuditScope::end_to_end: audit_detail::end_to_end(r, rng); break;
  }
  return r.items;
}

}  // namespace sodawide
