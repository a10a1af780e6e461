#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "sodawide/audit.hpp"
#include "sodawide/nn/checkpoint.hpp"
#include "sodawide/nn/network.hpp"

using namespace sodawide;
using namespace sodawide::nn;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = 2.0 * unit_uniform(rng) - 1.0;
  return t;
}

const TraceEntry& find_entry(const Trace& t, const std::string& block) {
  for (const auto& e : t) {
    if (e.block == block) return e;
  }
  throw std::runtime_error("no trace entry " + block);
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i], y = b[i];
    if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
  }
  return true;
}

const Context kEval{false, nullptr};

}  // namespace

TEST(Layers, ConvParameterCount) {
  ParamStore<double> ps(0);
  Conv<double> c(ps, "c", 4, 8, 3);
  EXPECT_EQ(ps.count(), 296u);
  Conv<double> nb(ps, "nb", 4, 8, 3, 1, false);
  EXPECT_EQ(ps.count(), 296u + 288u);
}

TEST(Layers, BasicShapes) {
  ParamStore<double> ps(0);
  const Tensor<double> x = random_tensor({2, 4, 8, 8}, 1);
  ConvB<double> cb(ps, "cb", 4, 6, 3);
  EXPECT_EQ(cb(Var<double>(x), kEval).shape(), (Shape{2, 6, 8, 8}));
  DoubleConv<double> dc(ps, "dc", 4, 5);
  EXPECT_EQ(dc(Var<double>(x), kEval).shape(), (Shape{2, 5, 8, 8}));
  DownBlock<double> down(ps, "down", 4, 6);
  const Var<double> d = down(Var<double>(x), kEval);
  EXPECT_EQ(d.shape(), (Shape{2, 6, 4, 4}));
  UpBlock<double> up(ps, "up", 6 + 4, 3);
  EXPECT_EQ(up(d, Var<double>(x), kEval).shape(), (Shape{2, 3, 8, 8}));
  EXPECT_THROW(up(d, Var<double>(random_tensor({2, 4, 6, 6}, 2)), kEval), ShapeError);
  EXPECT_THROW(down(Var<double>(random_tensor({1, 4, 7, 8}, 3)), kEval), ShapeError);
}

TEST(Layers, SymbolicShapesAtFullScale) {
  ParamStore<float> ps(0);
  DoubleConv<float> dc(ps, "dc", 3, 64);
  EXPECT_EQ(dc.out_shape({1, 3, 384, 384}), (Shape{1, 64, 384, 384}));
  DownBlock<float> down(ps, "down", 64, 128);
  EXPECT_EQ(down.out_shape({1, 64, 384, 384}), (Shape{1, 128, 192, 192}));
  EXPECT_THROW(dc.out_shape({1, 4, 384, 384}), ShapeError);
}

TEST(Layers, GroupNormRejectsIndivisibleChannels) {
  ParamStore<double> ps(0);
  EXPECT_THROW(GroupNorm<double>(ps, "gn", 6, 4), ConfigError);
}

TEST(Blocks, MrffamUnevenSplit) {
  ParamStore<double> ps(0);
  Mrffam<double> m(ps, "m", 64, {6, 10, 14, 18, 22});
  EXPECT_EQ(m.group_width, 13u);
  EXPECT_EQ(m.projected_channels(), 65u);
  EXPECT_EQ(m.out_shape({1, 64, 32, 32}, nullptr), (Shape{1, 64, 32, 32}));
  ParamStore<double> ps2(0);
  Mrffam<double> small(ps2, "m", 6, {2, 3});
  Trace t;
  const Var<double> y = small(Var<double>(random_tensor({1, 6, 12, 12}, 4)), Context{false, &t});
  EXPECT_EQ(y.shape(), (Shape{1, 6, 12, 12}));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].rates, (std::vector<std::size_t>{2, 3}));
  EXPECT_THROW(Mrffam<double>(ps2, "e", 6, {}), ConfigError);
}

TEST(Blocks, LpmShapes) {
  ParamStore<double> ps(0);
  Lpm<double> lpm(ps, "lpm", 4);
  EXPECT_EQ(lpm(Var<double>(random_tensor({1, 4, 8, 8}, 5)), kEval).shape(), (Shape{1, 4, 8, 8}));
  EXPECT_THROW(lpm(Var<double>(random_tensor({1, 4, 6, 6}, 5)), kEval), ShapeError);
  EXPECT_EQ(ps.find("lpm.fuse.weight")->var.shape(), (Shape{4, 8, 1, 1}));
}

TEST(Blocks, MsaLevelsFollowResolution) {
  EXPECT_EQ(msa_levels(192, 384), 3u);
  EXPECT_EQ(msa_levels(96, 384), 2u);
  EXPECT_EQ(msa_levels(48, 384), 1u);
  EXPECT_THROW(msa_levels(24, 384), ConfigError);
  EXPECT_EQ(msa_levels(48, 96), 3u);
}

TEST(Blocks, MsaStepShapes) {
  ParamStore<float> ps(0);
  Msa<float> msa(ps, "msa", 64, 3, 1);
  Trace t;
  EXPECT_EQ(msa.out_shape({1, 64, 192, 192}, &t), (Shape{1, 64, 192, 192}));
  EXPECT_EQ(find_entry(t, "msa.level1").output, (Shape{1, 64, 96, 96}));
  EXPECT_EQ(find_entry(t, "msa.level2").output, (Shape{1, 64, 48, 48}));
  EXPECT_EQ(find_entry(t, "msa.level3").output, (Shape{1, 64, 24, 24}));
  EXPECT_EQ(find_entry(t, "msa.attn0").output, (Shape{1, 64, 96, 96}));
  EXPECT_EQ(find_entry(t, "msa.attn1").output, (Shape{1, 64, 48, 48}));
  EXPECT_EQ(find_entry(t, "msa.attn2").output, (Shape{1, 64, 24, 24}));
  EXPECT_EQ(find_entry(t, "msa.attn3").output, (Shape{1, 64, 24, 24}));
  EXPECT_THROW(Msa<float>(ps, "bad", 6, 1, 4), ConfigError);
}

TEST(Blocks, MsaForwardMatchesSymbolic) {
  ParamStore<double> ps(0);
  Msa<double> msa(ps, "msa", 4, 2, 2);
  Trace run, sym;
  msa(Var<double>(random_tensor({1, 4, 8, 8}, 6)), Context{false, &run});
  msa.out_shape({1, 4, 8, 8}, &sym);
  EXPECT_EQ(run.size(), sym.size());
  for (const auto& e : sym) EXPECT_EQ(find_entry(run, e.block), e) << e.block;
  EXPECT_THROW(msa(Var<double>(random_tensor({1, 4, 6, 6}, 6)), kEval), ShapeError);
}

TEST(Blocks, CfmSingleInputIsSerialLayers) {
  ParamStore<double> ps(0);
  Cfm<double> cfm(ps, "cfm", 1, 4, 2);
  const Var<double> x(random_tensor({1, 4, 6, 6}, 7));
  const Var<double> y = cfm({x}, kEval);
  const Var<double> ref = cfm.out(cfm.refine[1](cfm.refine[0](x)));
  EXPECT_TRUE(bit_equal(y.value(), ref.value()));
}

TEST(Blocks, CfmProductFusion) {
  ParamStore<double> ps(0);
  Cfm<double> cfm(ps, "cfm", 2, 4, 2);
  const Var<double> a(random_tensor({1, 4, 6, 6}, 8)), b(random_tensor({1, 4, 6, 6}, 9));
  const Var<double> ra = cfm.refine[1](cfm.refine[0](a));
  const Var<double> rb = cfm.refine[3](cfm.refine[2](b));
  // ra*(ra+rb) + rb*(ra+rb) = (ra+rb)^2
  const Var<double> s = add(ra, rb);
  const Var<double> ref = cfm.out(mul(s, s));
  const Var<double> y = cfm({a, b}, kEval);
  for (std::size_t i = 0; i < y.value().numel(); ++i) EXPECT_NEAR(y.value()[i], ref.value()[i], 1e-12);
  EXPECT_THROW(cfm({a}, kEval), ShapeError);
  EXPECT_THROW(Cfm<double>(ps, "z", 0, 4, 2), ConfigError);
  EXPECT_THROW(Cfm<double>(ps, "f", 4, 4, 2), ConfigError);
}

TEST(Blocks, HybridBlockRowsAtFullScale) {
  ParamStore<float> ps(0);
  HybridBlock<float> hb1(ps, "hb1", 64, 128, BranchSet{}, {6, 10, 14, 18, 22}, 3, 1, 8);
  HybridBlock<float> hb2(ps, "hb2", 128, 128, BranchSet{}, {6, 10, 14, 18}, 2, 1, 8);
  EXPECT_EQ(hb1.out_shape({1, 64, 192, 192}, nullptr), (Shape{1, 128, 96, 96}));
  EXPECT_EQ(hb2.out_shape({1, 128, 96, 96}, nullptr), (Shape{1, 128, 48, 48}));
  Trace t;
  hb1.out_shape({1, 64, 192, 192}, &t);
  EXPECT_EQ(find_entry(t, "hb1").rates, (std::vector<std::size_t>{6, 10, 14, 18, 22}));
}

TEST(Blocks, HybridBlockBranchSelection) {
  ParamStore<double> ps(0);
  HybridBlock<double> lpm_only(ps, "hb", 4, 8, BranchSet{false, true, false}, {2, 3}, 1, 1, 2);
  EXPECT_FALSE(lpm_only.mrffam.has_value());
  EXPECT_FALSE(lpm_only.msa.has_value());
  EXPECT_EQ(lpm_only.cfm.inputs, 1u);
  EXPECT_EQ(lpm_only(Var<double>(random_tensor({1, 4, 8, 8}, 10)), kEval).shape(), (Shape{1, 8, 4, 4}));
  EXPECT_THROW(HybridBlock<double>(ps, "none", 4, 8, BranchSet{false, false, false}, {2}, 1, 1, 2), ConfigError);
}

TEST(Blocks, DecoderRows) {
  ParamStore<float> ps(0);
  DecoderBlock<float> cb2(ps, "cb2", 64, true, {6, 10, 14, 18}, 8);
  DecoderBlock<float> cb3(ps, "cb3", 64, true, {6, 10, 14, 18, 22}, 8);
  EXPECT_EQ(cb2.out_shape({1, 64, 48, 48}, nullptr), (Shape{1, 64, 96, 96}));
  EXPECT_EQ(cb3.out_shape({1, 64, 96, 96}, nullptr), (Shape{1, 64, 192, 192}));
  DecoderBlock<float> plain(ps, "plain", 64, false, {6}, 8);
  EXPECT_EQ(plain.cfm.inputs, 1u);
  EXPECT_FALSE(plain.mrffam.has_value());
}

TEST(Network, ReferenceBlockShapesAt384) {
  const SodaWideNet<float> net(NetworkConfig{}, 0);
  const Trace t = net.shape_trace();
  const auto& hb1 = find_entry(t, "hb1");
  EXPECT_EQ(hb1.input, (Shape{1, 64, 192, 192}));
  EXPECT_EQ(hb1.output, (Shape{1, 128, 96, 96}));
  EXPECT_EQ(hb1.rates, (std::vector<std::size_t>{6, 10, 14, 18, 22}));
  const auto& hb2 = find_entry(t, "hb2");
  EXPECT_EQ(hb2.input, (Shape{1, 128, 96, 96}));
  EXPECT_EQ(hb2.output, (Shape{1, 128, 48, 48}));
  EXPECT_EQ(hb2.rates, (std::vector<std::size_t>{6, 10, 14, 18}));
  const auto& cb2 = find_entry(t, "cb2");
  EXPECT_EQ(cb2.input, (Shape{1, 64, 48, 48}));
  EXPECT_EQ(cb2.rates, (std::vector<std::size_t>{6, 10, 14, 18}));
  const auto& cb3 = find_entry(t, "cb3");
  EXPECT_EQ(cb3.input, (Shape{1, 64, 96, 96}));
  EXPECT_EQ(cb3.rates, (std::vector<std::size_t>{6, 10, 14, 18, 22}));
  EXPECT_EQ(find_entry(t, "head.saliency").output, (Shape{1, 1, 384, 384}));
}

TEST(Network, ToyForwardShapes) {
  const SodaWideNet<double> net(NetworkConfig::toy(32, 8), 0);
  const NetOutput<double> out = net.forward(random_tensor({2, 3, 32, 32}, 11), false);
  EXPECT_EQ(out.saliency.shape(), (Shape{2, 1, 32, 32}));
  ASSERT_TRUE(out.contour.has_value());
  EXPECT_EQ(out.contour->shape(), (Shape{2, 1, 32, 32}));

  NetworkConfig c = NetworkConfig::toy(32, 8);
  c.enable_contour_head = false;
  const SodaWideNet<double> plain(c, 0);
  EXPECT_FALSE(plain.forward(random_tensor({1, 3, 32, 32}, 11), false).contour.has_value());
  EXPECT_EQ(plain.params().find("head.contour.weight"), nullptr);
}

TEST(Network, ForwardTraceMatchesSymbolic) {
  for (std::size_t res : {32, 64}) {
    const SodaWideNet<double> net(NetworkConfig::toy(res, 8), 0);
    Trace run;
    net.forward(random_tensor({1, 3, res, res}, 12), false, &run);
    EXPECT_EQ(run, net.shape_trace(1)) << res;
  }
}

TEST(Network, SeedDeterminism) {
  const Tensor<double> x = random_tensor({1, 3, 32, 32}, 13);
  const SodaWideNet<double> a(NetworkConfig::toy(32, 8), 5), b(NetworkConfig::toy(32, 8), 5),
      c(NetworkConfig::toy(32, 8), 6);
  const auto ya = a.forward(x, false).saliency.value();
  EXPECT_TRUE(bit_equal(ya, b.forward(x, false).saliency.value()));
  EXPECT_FALSE(bit_equal(ya, c.forward(x, false).saliency.value()));
}

TEST(Network, InputAndConfigValidation) {
  const SodaWideNet<double> net(NetworkConfig::toy(32, 8), 0);
  EXPECT_THROW(net.forward(random_tensor({1, 3, 64, 64}, 14), false), ShapeError);
  EXPECT_THROW(net.forward(random_tensor({1, 1, 32, 32}, 14), false), ShapeError);
  NetworkConfig bad = NetworkConfig::toy(40, 8);
  EXPECT_THROW(SodaWideNet<double>(bad, 0), ConfigError);
  NetworkConfig none = NetworkConfig::toy(32, 8);
  none.enable_msa = none.enable_mrffam = none.enable_lpm = false;
  EXPECT_THROW(SodaWideNet<double>(none, 0), ConfigError);
}

TEST(Network, SmallVariantHalvesWidth) {
  const NetworkConfig full, small = NetworkConfig::for_variant(Variant::small);
  EXPECT_EQ(full.width(), 64u);
  EXPECT_EQ(small.width(), 32u);
  const SodaWideNet<float> fn(full, 0), sn(small, 0);
  EXPECT_EQ(find_entry(sn.shape_trace(), "hb1").output, (Shape{1, 64, 96, 96}));
  const double ratio = static_cast<double>(sn.params().count()) / static_cast<double>(fn.params().count());
  EXPECT_LT(sn.params().count(), fn.params().count());
  EXPECT_GE(ratio, 0.25);
  EXPECT_LE(ratio, 0.45);
}

TEST(Network, ToggleAccountingIsMonotone) {
  auto count = [](const NetworkConfig& c) { return SodaWideNet<float>(c, 0).params().count(); };
  const NetworkConfig base = NetworkConfig::toy(96, 8);
  const std::size_t all = count(base);
  for (int off = 0; off < 5; ++off) {
    NetworkConfig c = base;
    if (off == 0) c.enable_msa = false;
    if (off == 1) c.enable_mrffam = false;
    if (off == 2) c.enable_mrffam_decoder = false;
    if (off == 3) c.enable_lpm = false;
    if (off == 4) c.enable_contour_head = false;
    EXPECT_LT(count(c), all) << off;
  }
  NetworkConfig no_msa = base;
  no_msa.enable_msa = false;
  // MSA is the third CFM stream, so its refinement layers go with it.
  const auto p = count_by_prefix(SodaWideNet<float>(base, 0).params(), 3);
  EXPECT_EQ(all - count(no_msa),
            p.at("hb1.msa") + p.at("hb2.msa") + p.at("hb1.cfm.in2") + p.at("hb2.cfm.in2"));
}

TEST(Network, EveryToggleCombinationRuns) {
  for (int mask = 0; mask < 16; ++mask) {
    for (bool contour : {true, false}) {
      NetworkConfig c = NetworkConfig::toy(32, 8);
      c.enable_msa = mask & 1;
      c.enable_mrffam = mask & 2;
      c.enable_mrffam_decoder = mask & 4;
      c.enable_lpm = mask & 8;
      c.enable_contour_head = contour;
      if (c.encoder_branch_count() == 0) {
        EXPECT_THROW(SodaWideNet<float>(c, 0), ConfigError);
        continue;
      }
      SodaWideNet<float> net(c, 0);
      std::mt19937_64 rng(static_cast<std::uint64_t>(mask));
      Tensor<float> x({2, 3, 32, 32});
      for (auto& v : x.data()) v = static_cast<float>(unit_uniform(rng));
      const auto out = net.forward(x, true);
      Var<float> loss = sum(out.saliency);
      if (out.contour) loss = add(loss, sum(*out.contour));
      backward(loss);
      EXPECT_TRUE(std::isfinite(loss.value().item())) << mask;
      EXPECT_TRUE(net.params().find("stem.0.conv.weight")->var.has_grad()) << mask;
    }
  }
}

TEST(Network, ConfigJsonRoundTrip) {
  NetworkConfig c = NetworkConfig::toy(64, 8);
  c.enable_lpm = false;
  c.dilation_schedule.cb3 = {2, 4};
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<NetworkConfig>(), c);
  EXPECT_THROW(nlohmann::json::parse(R"({"variant": "huge"})").get<NetworkConfig>(), ConfigError);
  EXPECT_EQ(parse_variant("small"), Variant::small);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  SodaWideNet<double> net(NetworkConfig::toy(32, 8), 3);
  const Tensor<double> x = random_tensor({1, 3, 32, 32}, 15);
  net.forward(x, true);  // moves the batch-norm running statistics
  const std::string bytes = encode_checkpoint(net);
  const auto loaded = decode_checkpoint<double>(bytes);
  EXPECT_EQ(loaded->config(), net.config());
  EXPECT_TRUE(bit_equal(net.forward(x, false).saliency.value(), loaded->forward(x, false).saliency.value()));
  EXPECT_EQ(encode_checkpoint(*loaded), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const SodaWideNet<double> net(NetworkConfig::toy(32, 8), 3);
  std::string bytes = encode_checkpoint(net);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint<double>(flipped), DataError);
  EXPECT_THROW(decode_checkpoint<double>(bytes.substr(0, 10)), DataError);
  EXPECT_THROW(load_checkpoint<double>("/nonexistent/net.swc"), DataError);
}

TEST(GradCheck, HeldPatternsStayOnTheSmoothPiece) {
  auto f = [](const Var<double>& x) { return sum(mul(relu(x), relu(x))); };
  Tensor<double> p({1, 1, 1, 3});
  p[0] = 0.5;
  p[1] = 2e-5;  // within eps of the kink
  p[2] = -0.3;
  GradCheckOptions opt;
  const auto plain = finite_diff_check(f, p, opt);
  EXPECT_EQ(plain.kinks_crossed, 0u);
  opt.hold_patterns = true;
  const auto held = finite_diff_check(f, p, opt);
  EXPECT_TRUE(held.passed) << held.max_rel_error;
  EXPECT_EQ(held.kinks_crossed, 1u);
  EXPECT_LT(held.max_rel_error, 1e-8);
}

TEST(GradCheck, CorruptedBackwardIsReported) {
  auto twice_wrong = [](const Var<double>& x) {
    Tensor<double> y = x.value();
    for (auto& v : y.data()) v = v * v;
    Var<double> sq = record<double>("bad_square", std::move(y), {x}, [](Node<double>& self) {
      Node<double>& in = *self.inputs[0];
      Tensor<double> g(in.value.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = 3.0 * in.value[i] * self.grad[i];
      in.accumulate(std::move(g));
    });
    return sum(sq);
  };
  const auto r = finite_diff_check(twice_wrong, random_tensor({1, 1, 2, 2}, 16));
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(Audit, PrimitivesBlocksAndLosses) {
  for (AuditScope scope : {AuditScope::primitives, AuditScope::blocks, AuditScope::losses}) {
    const auto items = run_audit(scope, 0);
    EXPECT_FALSE(items.empty());
    for (const auto& item : items) {
      EXPECT_TRUE(item.report.passed) << item.name << " " << item.report.max_rel_error;
      EXPECT_LT(item.report.max_rel_error, audit_threshold(scope)) << item.name;
    }
  }
  EXPECT_EQ(parse_audit_scope("end-to-end"), AuditScope::end_to_end);
  EXPECT_THROW(parse_audit_scope("everything"), ConfigError);
}
