#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "sodawide/app/commands.hpp"

using namespace sodawide;
using namespace sodawide::app;

namespace {

class AppDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("sodawide_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  // Toy run on a synthetic set at 32x32.
  RunConfig toy_run(std::size_t count = 2) {
    std::ostringstream sink;
    cmd_synth(path("data"), 5, count, 32, sink);
    RunConfig c;
    c.network = nn::NetworkConfig::toy(32, 8);
    c.data.train_manifest = path("data/manifest.json").string();
    c.data.batch_size = 2;
    c.data.expand_flips = false;
    c.schedule.epochs = 2;
    c.io.checkpoint_dir = path("ck").string();
    c.seed = 3;
    return c;
  }

  fs::path dir_;
};

std::string bytes_of(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::vector<nlohmann::json> parse_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

template <class Fn>
std::string error_of(Fn fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

// ---------------------------------------------------------------- Adam

TEST(Adam, FirstTwoStepsMatchHandComputation) {
  Var<double> w(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{1.0, -2.0}), true);
  const Var<double> c(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{3.0, -0.5}));
  Adam<double> adam({w}, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  // loss = sum(c * w^2 / 2): grad = c * w
  auto grad_step = [&] {
    adam.zero_grad();
    backward(sum(mul(c, mul(w, w))));
    adam.step();
  };
  std::vector<double> ref{1.0, -2.0}, m{0, 0}, v{0, 0};
  const std::vector<double> cv{3.0, -0.5};
  for (int t = 1; t <= 2; ++t) {
    grad_step();
    for (std::size_t i = 0; i < 2; ++i) {
      const double g = 2.0 * cv[i] * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    EXPECT_NEAR(w.value()[0], ref[0], 1e-12);
    EXPECT_NEAR(w.value()[1], ref[1], 1e-12);
    if (t == 1) {
      // The first step moves each coordinate by lr against the gradient sign.
      EXPECT_NEAR(w.value()[0], 0.9, 1e-9);
      EXPECT_NEAR(w.value()[1], -2.1, 1e-9);
    }
  }
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, ParametersWithoutGradientStayPut) {
  Var<double> used(Tensor<double>::full(Shape{1, 1, 1, 1}, 1.0), true);
  Var<double> idle(Tensor<double>::full(Shape{1, 1, 1, 1}, 5.0), true);
  Adam<double> adam({used, idle});
  backward(sum(mul(used, used)));
  adam.step();
  EXPECT_LT(used.value()[0], 1.0);
  EXPECT_EQ(idle.value()[0], 5.0);
}

// ---------------------------------------------------------------- RunConfig

TEST(RunConfig, DefaultsEchoTrainingSchedule) {
  const RunConfig c;
  EXPECT_EQ(c.optimizer.lr, 0.001);
  EXPECT_EQ(c.optimizer.beta1, 0.9);
  EXPECT_EQ(c.optimizer.beta2, 0.999);
  EXPECT_EQ(c.optimizer.epsilon, 1e-8);
  EXPECT_EQ(c.schedule.lr_drop_factor, 0.1);
  EXPECT_EQ(c.schedule.lr_drop_epoch, 30u);
  EXPECT_EQ(c.schedule.epochs, 41u);
  EXPECT_EQ(c.data.batch_size, 6u);
  EXPECT_DOUBLE_EQ(c.lr_at(0), 1e-3);
  EXPECT_DOUBLE_EQ(c.lr_at(29), 1e-3);
  EXPECT_DOUBLE_EQ(c.lr_at(30), 1e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(40), 1e-4);

  const nlohmann::json j = c;
  EXPECT_EQ(j["optimizer"]["lr"], 0.001);
  EXPECT_EQ(j["schedule"]["lr_drop_epoch"], 30);
  EXPECT_EQ(j["schedule"]["epochs"], 41);
}

TEST(RunConfig, ValidationNamesTheField) {
  auto msg = [](auto mutate) {
    RunConfig c;
    mutate(c);
    return error_of([&] { c.validate(); });
  };
  EXPECT_NE(msg([](RunConfig& c) { c.optimizer.lr = 0.0; }).find("optimizer.lr"), std::string::npos);
  EXPECT_NE(msg([](RunConfig& c) { c.optimizer.beta2 = 1.0; }).find("optimizer.betas"), std::string::npos);
  EXPECT_NE(msg([](RunConfig& c) { c.data.batch_size = 0; }).find("data.batch_size"), std::string::npos);
  EXPECT_NE(msg([](RunConfig& c) { c.loss.alpha_window = 30; }).find("loss.alpha_window"), std::string::npos);
  EXPECT_NE(msg([](RunConfig& c) { c.schedule.epochs = 0; }).find("schedule.epochs"), std::string::npos);
  EXPECT_NE(msg([](RunConfig& c) { c.network.input_resolution = 100; }).find("input_resolution"), std::string::npos);
  EXPECT_NE(msg([](RunConfig& c) {
              c.network.enable_msa = c.network.enable_lpm = c.network.enable_mrffam = false;
            }).find("enable_msa"),
            std::string::npos);
  EXPECT_EQ(msg([](RunConfig&) {}), "");
}

TEST(RunConfig, UnknownKeysAreRejected) {
  RunConfig c;
  const std::string m = error_of([&] { from_json(nlohmann::json{{"optimizer", {{"lrr", 0.1}}}}, c); });
  EXPECT_NE(m.find("optimizer.lrr"), std::string::npos);
  EXPECT_THROW(from_json(nlohmann::json{{"epochs", 3}}, c), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"optimizer", {{"kind", "sgd"}}}}, c), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"loss", {{"weight_mode", "focal"}}}}, c), ConfigError);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.network = nn::NetworkConfig::toy(64, 8);
  c.network.enable_lpm = false;
  c.optimizer.lr = 2e-4;
  c.schedule = {5, 3, 0.5};
  c.loss.weight_mode = WeightMode::one_plus_lambda_alpha;
  c.loss.lambda = 5.0;
  c.loss.normalization = WeightNorm::pixel_count;
  c.data = {"m.json", 3, false};
  c.io = {"out", "log.jsonl"};
  c.seed = 99;
  c.deterministic = true;
  c.max_steps = 17;
  RunConfig back;
  from_json(nlohmann::json(c), back);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  EXPECT_EQ(back.network, c.network);
  EXPECT_EQ(back.max_steps, 17u);
}

TEST_F(AppDir, FlagsOverrideConfigFile) {
  std::ofstream(path("run.json")) << R"({"optimizer": {"lr": 0.01}, "schedule": {"epochs": 7}, "seed": 4})";
  GlobalFlags g;
  g.config = path("run.json").string();
  g.out = "ck_dir";
  TrainFlags t;
  t.lr = 0.02;
  t.no_lpm = true;
  t.variant = "small";
  const RunConfig c = resolve_config(g, t);
  EXPECT_EQ(c.optimizer.lr, 0.02);
  EXPECT_EQ(c.schedule.epochs, 7u);
  EXPECT_EQ(c.seed, 4u);
  EXPECT_FALSE(c.network.enable_lpm);
  EXPECT_EQ(c.network.width_multiplier, 0.5);
  EXPECT_EQ(c.io.checkpoint_dir, "ck_dir");

  std::ofstream(path("bad.json")) << "{ not json";
  g.config = path("bad.json").string();
  EXPECT_THROW(resolve_config(g), ConfigError);
  g.config = path("absent.json").string();
  EXPECT_THROW(resolve_config(g), ConfigError);
}

// ---------------------------------------------------------------- Trainer

TEST_F(AppDir, LogReplaysToLoggedTotals) {
  RunConfig c = toy_run(3);
  c.data.expand_flips = true;
  std::ostringstream log;
  Trainer<float> tr(c, load_training_set<float>(c), &log);
  const TrainSummary s = tr.run();
  const auto lines = parse_lines(log.str());
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines[0]["event"], "config");
  EXPECT_EQ(lines[0]["config"], nlohmann::json(c));

  std::size_t last_step = 0, steps = 0;
  for (const auto& j : lines) {
    if (j["event"] != "step") continue;
    ++steps;
    EXPECT_GT(j["step"].get<std::size_t>(), last_step);
    last_step = j["step"];
    double sal = 0.0, con = 0.0;
    for (const auto& [k, v] : j["salient"]["terms"].items()) sal += j["salient"]["coefficients"][k].get<double>() * v.get<double>();
    for (const auto& [k, v] : j["contour"]["terms"].items()) con += j["contour"]["coefficients"][k].get<double>() * v.get<double>();
    EXPECT_NEAR(sal, j["salient_total"].get<double>(), 1e-9);
    EXPECT_NEAR(con, j["contour_total"].get<double>(), 1e-9);
    EXPECT_NEAR(sal + con, j["total"].get<double>(), 1e-9);
    EXPECT_EQ(j["contour"]["coefficients"]["bce"], 0.001);
  }
  // 9 samples (3 + flips) in batches of 2 over 2 epochs
  EXPECT_EQ(s.steps, 10u);
  EXPECT_EQ(steps, s.steps);
}

TEST_F(AppDir, ContourOffMeansSalientLossOnly) {
  RunConfig c = toy_run();
  c.network.enable_contour_head = false;
  c.max_steps = 1;
  Trainer<float> tr(c, load_training_set<float>(c), nullptr);
  const TrainSummary s = tr.run();
  ASSERT_EQ(s.history.size(), 1u);
  EXPECT_FALSE(s.history[0].contour.has_value());
  EXPECT_EQ(s.history[0].total(), s.history[0].salient_total());
}

TEST_F(AppDir, CheckpointsEveryEpochWithBestMarker) {
  RunConfig c = toy_run();
  c.schedule = {3, 1, 0.1};
  Trainer<float> tr(c, load_training_set<float>(c), nullptr);
  const TrainSummary s = tr.run();
  EXPECT_EQ(s.epochs_run, 3u);
  for (const char* f : {"epoch_001.swc", "epoch_002.swc", "epoch_003.swc", "last.swc", "best.swc", "best.txt"}) {
    EXPECT_TRUE(fs::exists(path("ck") / f)) << f;
  }
  EXPECT_EQ(bytes_of(path("ck/last.swc")), bytes_of(path("ck/epoch_003.swc")));
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03zu.swc", s.best_epoch);
  EXPECT_EQ(bytes_of(path("ck/best.swc")), bytes_of(path("ck") / name));
  EXPECT_NE(bytes_of(path("ck/best.txt")).find(name), std::string::npos);
  // lr drops after the first epoch
  EXPECT_DOUBLE_EQ(s.history.front().lr, 1e-3);
  EXPECT_DOUBLE_EQ(s.history.back().lr, 1e-4);
  // the checkpoint reloads into the same network
  const auto net = nn::load_checkpoint<float>(path("ck/last.swc"));
  EXPECT_EQ(net->config(), c.network);
}

TEST_F(AppDir, SeededRunsAreByteIdentical) {
  RunConfig c = toy_run();
  c.deterministic = true;
  c.max_steps = 3;
  std::vector<std::string> out;
  for (const char* d : {"ck_a", "ck_b"}) {
    c.io.checkpoint_dir = path(d).string();
    Trainer<float> tr(c, load_training_set<float>(c), nullptr);
    tr.run();
    out.push_back(bytes_of(path(d) / "last.swc"));
  }
  EXPECT_FALSE(out[0].empty());
  EXPECT_EQ(out[0], out[1]);

  c.seed = 4;
  c.io.checkpoint_dir = path("ck_c").string();
  Trainer<float> other(c, load_training_set<float>(c), nullptr);
  other.run();
  EXPECT_NE(bytes_of(path("ck_c/last.swc")), out[0]);
}

TEST_F(AppDir, NonFiniteLossAborts) {
  RunConfig c = toy_run();
  auto samples = load_training_set<float>(c);
  samples[0].image[5] = std::numeric_limits<float>::quiet_NaN();
  c.data.batch_size = 1;
  std::ostringstream log;
  Trainer<float> tr(c, samples, &log);
  EXPECT_THROW(tr.run(), NumericalError);
  const auto lines = parse_lines(log.str());
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines.back()["event"], "nan");
  EXPECT_GE(lines.back()["step"].get<std::size_t>(), 1u);
}

TEST_F(AppDir, TrainerRejectsMismatchedInputs) {
  RunConfig c = toy_run();
  auto samples = load_training_set<float>(c);
  c.network.input_resolution = 64;
  EXPECT_THROW(Trainer<float>(c, samples, nullptr), ConfigError);
  c.network.input_resolution = 32;
  EXPECT_THROW(Trainer<float>(c, {}, nullptr), DataError);
  c.data.train_manifest.clear();
  EXPECT_THROW(load_training_set<float>(c), ConfigError);
}

// ---------------------------------------------------------------- evaluation

TEST_F(AppDir, PerfectPredictionsScoreZeroOneOne) {
  std::ostringstream sink;
  const auto m = cmd_synth(path("data"), 1, 3, 32, sink);
  fs::create_directories(path("pred"));
  for (const auto& e : m.entries) fs::copy_file(e.mask, path("pred") / (e.stem() + ".pgm"));
  const data::EvalResult r = cmd_eval(path("pred"), path("data/manifest.json"), {}, path("eval"), sink);
  EXPECT_EQ(r.report.n_images, 3u);
  EXPECT_DOUBLE_EQ(r.report.mae, 0.0);
  EXPECT_DOUBLE_EQ(r.report.f_max, 1.0);
  EXPECT_DOUBLE_EQ(r.report.e_max, 1.0);

  const std::string csv = bytes_of(path("eval/eval.csv"));
  EXPECT_EQ(csv.rfind("image,mae,f_max,e_max\nsynth_0000,", 0), 0u);
  const auto j = nlohmann::json::parse(bytes_of(path("eval/eval.json")));
  EXPECT_EQ(j["n_images"], 3);
  EXPECT_EQ(j["mae"], 0.0);
}

TEST_F(AppDir, MissingPredictionIsNamed) {
  std::ostringstream sink;
  const auto m = cmd_synth(path("data"), 1, 2, 32, sink);
  fs::create_directories(path("pred"));
  fs::copy_file(m.entries[0].mask, path("pred/synth_0000.pgm"));
  const std::string msg = error_of([&] { data::evaluate_dataset(path("pred"), m); });
  EXPECT_NE(msg.find("synth_0001"), std::string::npos);
  EXPECT_THROW(data::evaluate_dataset(path("pred"), m), DataError);
  EXPECT_FALSE(fs::exists(path("eval.csv")));
}

TEST_F(AppDir, DatasetScoresAverageImages) {
  std::ostringstream sink;
  const auto m = cmd_synth(path("data"), 2, 2, 32, sink);
  fs::create_directories(path("pred"));
  std::mt19937_64 rng(1);
  std::vector<ImageMetrics> ref;
  for (const auto& e : m.entries) {
    const Tensor<double> p = Tensor<double>::uniform(Shape{1, 1, 32, 32}, rng);
    data::write_pnm(path("pred") / (e.stem() + ".pgm"), data::to_pnm8(p));
    ref.push_back(evaluate_image(e.stem(), data::load_planes<double>(path("pred") / (e.stem() + ".pgm")),
                                 data::load_planes<double>(e.mask)));
  }
  const data::EvalResult r = data::evaluate_dataset(path("pred"), m);
  EXPECT_NEAR(r.report.mae, (ref[0].mae + ref[1].mae) / 2.0, 1e-12);
  EXPECT_NEAR(r.report.f_max, aggregate(ref).f_max, 1e-12);
  MetricOptions per_image;
  per_image.per_image_f = true;
  EXPECT_NEAR(data::evaluate_dataset(path("pred"), m, per_image).report.f_max, (ref[0].f_max + ref[1].f_max) / 2.0,
              1e-12);
}

TEST_F(AppDir, PredictionIsResizedToGroundTruth) {
  std::ostringstream sink;
  const auto m = cmd_synth(path("data"), 3, 1, 32, sink);
  fs::create_directories(path("pred"));
  const Tensor<double> gt = data::load_planes<double>(m.entries[0].mask);
  data::write_pnm(path("pred/synth_0000.pgm"), data::to_pnm8(kernels::bilinear_resize_forward(gt, 64, 64)));
  const data::EvalResult r = data::evaluate_dataset(path("pred"), m);
  EXPECT_LT(r.report.mae, 0.1);
  EXPECT_GT(r.report.f_max, 0.9);
}

// ---------------------------------------------------------------- commands

TEST_F(AppDir, InferWritesOneMapPerEntry) {
  RunConfig c = toy_run(3);
  c.max_steps = 1;
  std::ostringstream sink;
  ASSERT_EQ(cmd_train(c, sink), kOk);
  const InferResult r = cmd_infer(path("ck/last.swc"), c.data.train_manifest, path("pred"), std::nullopt, sink);
  ASSERT_EQ(r.outputs.size(), 3u);
  std::vector<std::string> first;
  for (const auto& p : r.outputs) {
    const data::PnmImage img = data::read_pnm(p);
    EXPECT_EQ(img.width, 32u);
    EXPECT_EQ(img.channels, 1u);
    EXPECT_EQ(img.maxval, 255u);
    first.push_back(bytes_of(p));
  }
  cmd_infer(path("ck/last.swc"), c.data.train_manifest, path("pred"), 32, sink);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(bytes_of(r.outputs[i]), first[i]);
  EXPECT_NE(sink.str().find(" ms\n"), std::string::npos);
  EXPECT_THROW(cmd_infer(path("ck/last.swc"), c.data.train_manifest, path("pred"), 64, sink), ConfigError);
}

TEST_F(AppDir, TrainEchoesResolvedConfigFirst) {
  RunConfig c = toy_run();
  c.max_steps = 1;
  c.io.log_path = path("logs/run.jsonl").string();
  std::ostringstream sink;
  ASSERT_EQ(cmd_train(c, sink), kOk);
  const auto lines = parse_lines(bytes_of(path("logs/run.jsonl")));
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(lines[0]["event"], "config");
  EXPECT_EQ(lines[0]["config"]["optimizer"]["lr"], 0.001);
  EXPECT_EQ(lines[1]["event"], "step");
  for (std::size_t i = 1; i < lines.size(); ++i) EXPECT_NE(lines[i]["event"], "config");

  // Invalid config fails before any log or checkpoint is written.
  c.io.log_path = path("never.jsonl").string();
  c.io.checkpoint_dir = path("never_ck").string();
  c.loss.alpha_window = 2;
  EXPECT_THROW(cmd_train(c, sink), ConfigError);
  EXPECT_FALSE(fs::exists(path("never.jsonl")));
  EXPECT_FALSE(fs::exists(path("never_ck")));
}

TEST(Commands, ExitCodesFollowErrorKind) {
  std::ostringstream err;
  EXPECT_EQ(run_guarded([] { return 0; }, err), kOk);
  EXPECT_EQ(run_guarded([]() -> int { throw ConfigError("x"); }, err), kUsage);
  EXPECT_EQ(run_guarded([]() -> int { throw ShapeError("x"); }, err), kUsage);
  EXPECT_EQ(run_guarded([]() -> int { throw DataError("x"); }, err), kData);
  EXPECT_EQ(run_guarded([]() -> int { throw NumericalError("x"); }, err), kNumerical);
  EXPECT_NE(err.str().find("numerical error: x"), std::string::npos);
}

TEST(Commands, InspectReportsTablesAndDeltas) {
  std::ostringstream out;
  cmd_inspect(nn::NetworkConfig{}, out);
  const std::string s = out.str();
  EXPECT_NE(s.find("HB1  192x192x64     -> 96x96x128      rates (6,10,14,18,22)"), std::string::npos);
  EXPECT_NE(s.find("HB2  96x96x128      -> 48x48x128      rates (6,10,14,18)"), std::string::npos);
  EXPECT_NE(s.find("published 9.03M  delta -"), std::string::npos);
  EXPECT_NE(s.find("published 3.03M  delta -"), std::string::npos);
  EXPECT_EQ(signed_millions(1.5e6), "+1.50M");
  EXPECT_EQ(signed_millions(-2.25e6), "-2.25M");

  nn::NetworkConfig no_msa;
  no_msa.enable_msa = false;
  std::ostringstream small;
  cmd_inspect(no_msa, small);
  EXPECT_EQ(small.str().find("hb1.msa"), std::string::npos);
  EXPECT_LT(nn::SodaWideNet<float>(no_msa, 0).params().count(), nn::SodaWideNet<float>(nn::NetworkConfig{}, 0).params().count());
}

TEST(Commands, ScopeParsing) {
  EXPECT_EQ(parse_scopes("all").size(), 4u);
  EXPECT_EQ(parse_scopes("end-to-end").front(), AuditScope::end_to_end);
  EXPECT_THROW(parse_scopes("everything"), ConfigError);
}
