#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sodawide/nn/layers.hpp"

namespace sodawide::nn {

/// Multi-receptive-field aggregation: 1x1 projection to a multiple of
/// |rates|, equal channel groups through two serial dilated ConvB each,
/// concat, 1x1 fusion back to `channels`.
template <class T>
struct Mrffam {
  std::string name;
  std::vector<std::size_t> rates;
  std::size_t channels;
  std::size_t group_width;
  Conv<T> project;
  std::vector<ConvB<T>> branches;  // two per rate
  Conv<T> fuse;

  Mrffam(ParamStore<T>& ps, const std::string& path, std::size_t channels_, std::vector<std::size_t> rates_)
      : name(path),
        rates(check_rates(std::move(rates_))),
        channels(channels_),
        group_width((channels_ + rates.size() - 1) / rates.size()),
        project(ps, path + ".project", channels_, group_width * rates.size(), 1),
        fuse(ps, path + ".fuse", group_width * rates.size(), channels_, 1) {
    for (std::size_t g = 0; g < rates.size(); ++g) {
      const std::string p = path + ".branch" + std::to_string(g);
      branches.emplace_back(ps, p + ".0", group_width, group_width, rates[g]);
      branches.emplace_back(ps, p + ".1", group_width, group_width, rates[g]);
    }
  }

  std::size_t projected_channels() const { return group_width * rates.size(); }

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    const Var<T> p = project(x);
    std::vector<Var<T>> outs;
    for (std::size_t g = 0; g < rates.size(); ++g) {
      const Var<T> part = slice_channels(p, g * group_width, group_width);
      outs.push_back(branches[2 * g + 1](branches[2 * g](part, ctx), ctx));
    }
    const Var<T> y = fuse(rates.size() == 1 ? outs[0] : concat(outs));
    ctx.emit(name, x.shape(), y.shape(), rates);
    return y;
  }

  Shape out_shape(Shape s, Trace* trace) const {
    Shape p = project.out_shape(s);
    Shape b = with_channels(p, group_width);
    for (std::size_t g = 0; g < rates.size(); ++g) branches[2 * g + 1].out_shape(branches[2 * g].out_shape(b));
    const Shape y = fuse.out_shape(p);
    if (trace) trace->push_back(TraceEntry{name, s, y, rates});
    return y;
  }

 private:
  static std::vector<std::size_t> check_rates(std::vector<std::size_t> r) {
    if (r.empty()) throw ConfigError("MRFFAM needs at least one dilation rate");
    return r;
  }
};

/// Local processing: ConvB at full scale beside a twice-pooled ConvB path,
/// concatenated and fused by a 1x1 conv.
template <class T>
struct Lpm {
  std::string name;
  ConvB<T> local, coarse1, coarse2;
  Conv<T> fuse;

  Lpm(ParamStore<T>& ps, const std::string& path, std::size_t channels)
      : name(path),
        local(ps, path + ".local", channels, channels),
        coarse1(ps, path + ".coarse.0", channels, channels),
        coarse2(ps, path + ".coarse.1", channels, channels),
        fuse(ps, path + ".fuse", 2 * channels, channels, 1) {}

  static void require_div4(const Shape& s) {
    if (s.h % 4 != 0 || s.w % 4 != 0) throw ShapeError("LPM needs spatial dims divisible by 4, got " + s.str());
  }

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    require_div4(x.shape());
    const Var<T> a = local(x, ctx);
    const Var<T> b = upsample(coarse2(max_pool2(coarse1(max_pool2(x), ctx)), ctx), 4);
    const Var<T> y = fuse(concat<T>({a, b}));
    ctx.emit(name, x.shape(), y.shape());
    return y;
  }

  Shape out_shape(Shape s, Trace* trace) const {
    require_div4(s);
    const Shape y = fuse.out_shape(with_channels(s, 2 * local.out_shape(s).c));
    if (trace) trace->push_back(TraceEntry{name, s, y, {}});
    return y;
  }
};

/// Multi-scale attention over an average-pooled feature pyramid. With
/// levels L the pyramid is P0 = x, Pk = Double_Conv(avgpool2(Pk-1)), k <= L.
/// Step 1 attends from P1 into P0, step k from Pk into the previous result,
/// and a last step from that lowest-resolution result into P0. The output is
/// upsampled by 2^L and fused by a 1x1 conv.
template <class T>
struct Msa {
  struct Projection {
    Conv<T> q, k, v;
    Projection(ParamStore<T>& ps, const std::string& path, std::size_t c)
        : q(ps, path + ".q", c, c, 1), k(ps, path + ".k", c, c, 1), v(ps, path + ".v", c, c, 1) {}
  };

  std::string name;
  std::size_t levels;
  std::size_t heads;
  std::vector<DoubleConv<T>> pyramid;
  std::vector<Projection> steps;
  Conv<T> fuse;

  Msa(ParamStore<T>& ps, const std::string& path, std::size_t channels, std::size_t levels_, std::size_t heads_)
      : name(path), levels(levels_), heads(heads_), fuse(ps, path + ".fuse", channels, channels, 1) {
    if (levels < 1) throw ConfigError(path + ": attention pyramid needs at least one level");
    if (heads < 1 || channels % heads != 0) {
      throw ConfigError("attention_heads (" + std::to_string(heads) + ") must divide " + std::to_string(channels) +
                        " channels at " + path);
    }
    for (std::size_t k = 1; k <= levels; ++k) {
      pyramid.emplace_back(ps, path + ".level" + std::to_string(k), channels, channels);
    }
    for (std::size_t k = 0; k <= levels; ++k) steps.emplace_back(ps, path + ".attn" + std::to_string(k), channels);
  }

  void require_depth(const Shape& s) const {
    const std::size_t f = std::size_t{1} << levels;
    if (s.h % f != 0 || s.w % f != 0) {
      throw ShapeError(name + ": " + s.str() + " cannot be pooled " + std::to_string(levels) + " times by 2");
    }
  }

  Var<T> attend(const Projection& p, const Var<T>& query_map, const Var<T>& key_map) const {
    const Shape qs = query_map.shape();
    const Var<T> q = to_tokens(p.q(query_map), heads);
    const Var<T> k = to_tokens(p.k(key_map), heads);
    const Var<T> v = to_tokens(p.v(key_map), heads);
    return from_tokens(scaled_dot_attention(q, k, v), qs.h, qs.w);
  }

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    require_depth(x.shape());
    std::vector<Var<T>> levels_out{x};
    for (std::size_t k = 0; k < levels; ++k) {
      levels_out.push_back(pyramid[k](avg_pool2(levels_out.back()), ctx));
      ctx.emit(name + ".level" + std::to_string(k + 1), levels_out[k].shape(), levels_out.back().shape());
    }
    Var<T> current = levels_out[0];
    for (std::size_t k = 1; k <= levels; ++k) {
      const Var<T> a = attend(steps[k - 1], levels_out[k], current);
      ctx.emit(name + ".attn" + std::to_string(k - 1), levels_out[k].shape(), a.shape());
      current = a;
    }
    const Var<T> last = attend(steps[levels], current, x);
    ctx.emit(name + ".attn" + std::to_string(levels), current.shape(), last.shape());
    const Var<T> y = fuse(upsample(last, std::size_t{1} << levels));
    ctx.emit(name, x.shape(), y.shape());
    return y;
  }

  Shape out_shape(Shape s, Trace* trace) const {
    require_depth(s);
    std::vector<Shape> shapes{s};
    for (std::size_t k = 0; k < levels; ++k) {
      shapes.push_back(pyramid[k].out_shape(halved(shapes.back())));
      if (trace) trace->push_back(TraceEntry{name + ".level" + std::to_string(k + 1), shapes[k], shapes.back(), {}});
    }
    // Every step keeps the query's resolution; the last query is the lowest level.
    for (std::size_t k = 0; k <= levels; ++k) {
      const Shape query = shapes[std::min(k + 1, levels)];
      if (trace) trace->push_back(TraceEntry{name + ".attn" + std::to_string(k), query, query, {}});
    }
    const Shape y = fuse.out_shape(s);
    if (trace) trace->push_back(TraceEntry{name, s, y, {}});
    return y;
  }
};

/// Cross-feature fusion of 1-3 streams. Each stream is refined by two ConvGN
/// layers; streams r_i are combined as sum_i r_i * (sum_j r_j) and passed
/// through a final ConvGN. A single stream passes through unchanged.
template <class T>
struct Cfm {
  std::string name;
  std::size_t inputs;
  std::vector<ConvGN<T>> refine;  // two per input
  ConvGN<T> out;

  Cfm(ParamStore<T>& ps, const std::string& path, std::size_t inputs_, std::size_t channels, std::size_t groups)
      : name(path), inputs(inputs_), out(ps, path + ".out", channels, channels, groups) {
    if (inputs < 1 || inputs > 3) throw ConfigError(path + ": CFM takes 1 to 3 inputs");
    for (std::size_t i = 0; i < inputs; ++i) {
      const std::string p = path + ".in" + std::to_string(i);
      refine.emplace_back(ps, p + ".0", channels, channels, groups);
      refine.emplace_back(ps, p + ".1", channels, channels, groups);
    }
  }

  Var<T> operator()(const std::vector<Var<T>>& xs, const Context& ctx) const {
    if (xs.size() != inputs) {
      throw ShapeError(name + ": expected " + std::to_string(inputs) + " inputs, got " + std::to_string(xs.size()));
    }
    for (const auto& x : xs) {
      if (x.shape() != xs[0].shape()) {
        throw ShapeError(name + ": input mismatch " + xs[0].shape().str() + " vs " + x.shape().str());
      }
    }
    std::vector<Var<T>> r;
    for (std::size_t i = 0; i < inputs; ++i) r.push_back(refine[2 * i + 1](refine[2 * i](xs[i])));
    Var<T> fused = r[0];
    if (inputs > 1) {
      const Var<T> total = add_n(r);
      std::vector<Var<T>> terms;
      for (const auto& ri : r) terms.push_back(mul(ri, total));
      fused = add_n(terms);
    }
    const Var<T> y = out(fused);
    ctx.emit(name, xs[0].shape(), y.shape());
    return y;
  }

  Shape out_shape(Shape s, Trace* trace) const {
    const Shape y = out.out_shape(refine[1].out_shape(refine[0].out_shape(s)));
    if (trace) trace->push_back(TraceEntry{name, s, y, {}});
    return y;
  }
};

/// Which encoder branches a hybrid block runs.
struct BranchSet {
  bool mrffam = true;
  bool lpm = true;
  bool msa = true;
  std::size_t count() const { return static_cast<std::size_t>(mrffam) + lpm + msa; }
};

/// HB = CFM(MRFFAM, LPM, MSA) at the input width, then max-pool and a 1x1
/// conv to the output width.
template <class T>
struct HybridBlock {
  std::string name;
  std::optional<Mrffam<T>> mrffam;
  std::optional<Lpm<T>> lpm;
  std::optional<Msa<T>> msa;
  Cfm<T> cfm;
  Conv<T> expand;

  HybridBlock(ParamStore<T>& ps, const std::string& path, std::size_t cin, std::size_t cout, BranchSet branches,
              const std::vector<std::size_t>& rates, std::size_t msa_levels, std::size_t heads, std::size_t groups)
      : name(path),
        mrffam(branches.mrffam ? std::optional<Mrffam<T>>(std::in_place, ps, path + ".mrffam", cin, rates)
                               : std::nullopt),
        lpm(branches.lpm ? std::optional<Lpm<T>>(std::in_place, ps, path + ".lpm", cin) : std::nullopt),
        msa(branches.msa ? std::optional<Msa<T>>(std::in_place, ps, path + ".msa", cin, msa_levels, heads)
                         : std::nullopt),
        cfm(ps, path + ".cfm", require_branch(branches, path), cin, groups),
        expand(ps, path + ".expand", cin, cout, 1) {}

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    require_even(x.shape(), "hybrid block");
    std::vector<Var<T>> feats;
    if (mrffam) feats.push_back((*mrffam)(x, ctx));
    if (lpm) feats.push_back((*lpm)(x, ctx));
    if (msa) feats.push_back((*msa)(x, ctx));
    const Var<T> y = expand(max_pool2(cfm(feats, ctx)));
    ctx.emit(name, x.shape(), y.shape(), mrffam ? mrffam->rates : std::vector<std::size_t>{});
    return y;
  }

  Shape out_shape(Shape s, Trace* trace) const {
    require_even(s, "hybrid block");
    if (mrffam) mrffam->out_shape(s, trace);
    if (lpm) lpm->out_shape(s, trace);
    if (msa) msa->out_shape(s, trace);
    const Shape y = expand.out_shape(halved(cfm.out_shape(s, trace)));
    if (trace) trace->push_back(TraceEntry{name, s, y, mrffam ? mrffam->rates : std::vector<std::size_t>{}});
    return y;
  }

 private:
  static std::size_t require_branch(const BranchSet& b, const std::string& path) {
    if (b.count() == 0) throw ConfigError(path + ": at least one of MSA, MRFFAM, LPM must be enabled");
    return b.count();
  }
};

/// CB = CFM(MRFFAM(x), x), or CFM(x) without the MRFFAM, then upsample x2.
template <class T>
struct DecoderBlock {
  std::string name;
  std::optional<Mrffam<T>> mrffam;
  Cfm<T> cfm;

  DecoderBlock(ParamStore<T>& ps, const std::string& path, std::size_t channels, bool use_mrffam,
               const std::vector<std::size_t>& rates, std::size_t groups)
      : name(path),
        mrffam(use_mrffam ? std::optional<Mrffam<T>>(std::in_place, ps, path + ".mrffam", channels, rates)
                          : std::nullopt),
        cfm(ps, path + ".cfm", use_mrffam ? 2 : 1, channels, groups) {}

  Var<T> operator()(const Var<T>& x, const Context& ctx) const {
    std::vector<Var<T>> feats;
    if (mrffam) feats.push_back((*mrffam)(x, ctx));
    feats.push_back(x);
    const Var<T> y = upsample(cfm(feats, ctx), 2);
    ctx.emit(name, x.shape(), y.shape(), mrffam ? mrffam->rates : std::vector<std::size_t>{});
    return y;
  }

  Shape out_shape(Shape s, Trace* trace) const {
    if (mrffam) mrffam->out_shape(s, trace);
    const Shape y = scaled(cfm.out_shape(s, trace), 2);
    if (trace) trace->push_back(TraceEntry{name, s, y, mrffam ? mrffam->rates : std::vector<std::size_t>{}});
    return y;
  }
};

}  // namespace sodawide::nn
