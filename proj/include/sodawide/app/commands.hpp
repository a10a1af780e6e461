#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sodawide/app/run_config.hpp"
#include "sodawide/app/train.hpp"
#include "sodawide/audit.hpp"
#include "sodawide/data/evaluate.hpp"
#include "sodawide/data/synth.hpp"
#include "sodawide/nn/checkpoint.hpp"
#include "sodawide/nn/network.hpp"

namespace sodawide::app {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

inline constexpr double kPublishedParamsFull = 9.03e6;
inline constexpr double kPublishedParamsSmall = 3.03e6;

struct GlobalFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> out;
  std::optional<std::string> log;
};

/// Network and training overrides; unset fields keep the file/default value.
struct TrainFlags {
  std::optional<std::string> manifest;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> lr_drop_epoch;
  std::optional<double> lr_drop_factor;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> resolution;
  std::optional<std::string> variant;
  bool no_msa = false;
  bool no_mrffam = false;
  bool no_decoder_mrffam = false;
  bool no_lpm = false;
  bool no_contours = false;
  std::optional<std::size_t> alpha_window;
  std::optional<std::size_t> max_steps;
};

/// Defaults, then the JSON file, then flags. Validates the result.
inline RunConfig resolve_config(const GlobalFlags& g, const TrainFlags& t = {}) {
  RunConfig c = g.config ? load_run_config(*g.config) : RunConfig{};
  if (t.variant) {
    c.network.variant = nn::parse_variant(*t.variant);
    c.network.width_multiplier = nn::NetworkConfig::for_variant(c.network.variant).width_multiplier;
  }
  if (t.resolution) c.network.input_resolution = *t.resolution;
  if (t.no_msa) c.network.enable_msa = false;
  if (t.no_mrffam) c.network.enable_mrffam = false;
  if (t.no_decoder_mrffam) c.network.enable_mrffam_decoder = false;
  if (t.no_lpm) c.network.enable_lpm = false;
  if (t.no_contours) c.network.enable_contour_head = false;
  if (t.manifest) c.data.train_manifest = *t.manifest;
  if (t.lr) c.optimizer.lr = *t.lr;
  if (t.epochs) c.schedule.epochs = *t.epochs;
  if (t.lr_drop_epoch) c.schedule.lr_drop_epoch = *t.lr_drop_epoch;
  if (t.lr_drop_factor) c.schedule.lr_drop_factor = *t.lr_drop_factor;
  if (t.batch) c.data.batch_size = *t.batch;
  if (t.alpha_window) c.loss.alpha_window = *t.alpha_window;
  if (t.max_steps) c.max_steps = *t.max_steps;
  if (g.seed) c.seed = *g.seed;
  if (g.deterministic) c.deterministic = true;
  if (g.out) c.io.checkpoint_dir = *g.out;
  if (g.log) c.io.log_path = *g.log;
  c.validate();
  return c;
}

/// Runs `fn`, mapping library errors to exit codes and a one-line message.
inline int run_guarded(const std::function<int()>& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

// ---------------------------------------------------------------- train

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  std::ofstream log_file;
  if (!cfg.io.log_path.empty()) {
    const fs::path p = cfg.io.log_path;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    log_file.open(p);
    if (!log_file) throw DataError("cannot open log " + cfg.io.log_path);
  }
  JsonLog log(log_file.is_open() ? &log_file : nullptr);
  log.write(nlohmann::json{{"event", "config"}, {"config", cfg}});

  Trainer<float> trainer(cfg, load_training_set<float>(cfg), log_file.is_open() ? &log_file : nullptr);
  trainer.set_log_config(false);
  const TrainSummary s = trainer.run();
  out << "trained " << s.steps << " steps over " << s.epochs_run << " epochs\n";
  if (!s.history.empty()) {
    out << "salient loss " << s.history.front().salient_total() << " -> " << s.history.back().salient_total() << '\n';
  }
  out << "last checkpoint " << s.last_checkpoint.string() << '\n';
  out << "best checkpoint " << s.best_checkpoint.string() << " (epoch " << s.best_epoch << ")\n";
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferResult {
  std::vector<fs::path> outputs;
  std::vector<double> ms;
};

/// Forward + sigmoid for every manifest entry at the checkpoint's resolution;
/// writes <stem>.pgm into out_dir.
inline InferResult cmd_infer(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out_dir,
                             std::optional<std::size_t> resolution, std::ostream& out) {
  const auto net = nn::load_checkpoint<float>(checkpoint);
  const std::size_t res = net->config().input_resolution;
  if (resolution && *resolution != res) {
    throw ConfigError("checkpoint " + checkpoint.string() + " was built for resolution " + std::to_string(res) +
                      ", not " + std::to_string(*resolution));
  }
  const data::DatasetManifest m = data::load_manifest(manifest);
  fs::create_directories(out_dir);
  InferResult r;
  for (const auto& e : m.entries) {
    const data::Sample<float> s = data::load_sample<float>(e, res);
    const auto t0 = std::chrono::steady_clock::now();
    const nn::NetOutput<float> o = net->forward(s.image, false);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const fs::path p = out_dir / (e.stem() + ".pgm");
    data::write_saliency(o.saliency.value(), p, true);
    out << e.stem() << ' ' << std::fixed << std::setprecision(1) << ms << " ms\n" << std::defaultfloat;
    r.outputs.push_back(p);
    r.ms.push_back(ms);
  }
  return r;
}

// ---------------------------------------------------------------- eval

/// Writes eval.csv and eval.json into out_dir.
inline data::EvalResult cmd_eval(const fs::path& pred_dir, const fs::path& manifest, const MetricOptions& opt,
                                 const fs::path& out_dir, std::ostream& out) {
  const data::EvalResult r = data::evaluate_dataset(pred_dir, data::load_manifest(manifest), opt);
  fs::create_directories(out_dir);
  data::write_eval_csv(out_dir / "eval.csv", r);
  data::write_eval_json(out_dir / "eval.json", r.report);
  out << std::setprecision(6) << "images " << r.report.n_images << "\nmae " << r.report.mae << "\nf_max "
      << r.report.f_max << "\ne_max " << r.report.e_max << '\n';
  return r;
}

// ---------------------------------------------------------------- gradcheck

inline std::vector<AuditScope> parse_scopes(const std::string& s) {
  if (s == "all") return {AuditScope::primitives, AuditScope::blocks, AuditScope::losses, AuditScope::end_to_end};
  return {parse_audit_scope(s)};
}

/// Prints one row per audited item; returns kNumerical if any fails.
inline int cmd_gradcheck(const std::vector<AuditScope>& scopes, std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-11s %-28s %12s %10s %6s  %s\n", "scope", "item", "max_rel_err", "threshold",
                "kinks", "status");
  out << line;
  for (AuditScope scope : scopes) {
    for (const AuditItem& it : run_audit(scope, seed)) {
      const GradCheckReport& r = it.report;
      std::snprintf(line, sizeof line, "%-11s %-28s %12.3e %10.0e %6zu  %s\n", it.scope.c_str(), it.name.c_str(),
                    r.max_rel_error, r.threshold, r.kinks_crossed, r.passed ? "pass" : "FAIL");
      out << line;
      ok = ok && r.passed;
    }
  }
  out << (ok ? "all checks passed\n" : "gradient check FAILED\n");
  return ok ? kOk : kNumerical;
}

// ---------------------------------------------------------------- inspect

inline std::string hwc(const Shape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

inline std::string rates_str(const std::vector<std::size_t>& r) {
  std::string s = "(";
  for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + std::to_string(r[i]);
  return s + ")";
}

inline std::string signed_millions(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2fM", v / 1e6);
  return buf;
}

struct ParamTotals {
  std::size_t full = 0;
  std::size_t small = 0;
  double ratio() const { return static_cast<double>(small) / static_cast<double>(full); }
};

/// Trainable parameter totals of the reference configurations at 384x384.
inline ParamTotals reference_totals() {
  ParamTotals t;
  t.full = nn::SodaWideNet<float>(nn::NetworkConfig::for_variant(nn::Variant::full), 0).params().count();
  t.small = nn::SodaWideNet<float>(nn::NetworkConfig::for_variant(nn::Variant::small), 0).params().count();
  return t;
}

inline void cmd_inspect(const nn::NetworkConfig& c, std::ostream& out) {
  c.validate();
  const nn::SodaWideNet<float> net(c, 0);
  const nn::Trace trace = net.shape_trace();

  out << "network: variant " << to_string(c.variant) << ", width " << c.width() << ", input " << c.input_resolution
      << "x" << c.input_resolution << "\n  branches: mrffam " << c.enable_mrffam << ", lpm " << c.enable_lpm
      << ", msa " << c.enable_msa << ", decoder mrffam " << c.enable_mrffam_decoder << ", contour head "
      << c.enable_contour_head << "\n";
  const auto& d = c.dilation_schedule;
  out << "\ndilation schedule\n  HB1 " << rates_str(d.hb1) << "\n  HB2 " << rates_str(d.hb2) << "\n  CB2 "
      << rates_str(d.cb2) << "\n  CB3 " << rates_str(d.cb3) << "\n";

  out << "\nlayer graph (H x W x C)\n";
  char line[200];
  for (const auto& e : trace) {
    std::snprintf(line, sizeof line, "  %-16s %-14s -> %-14s %s\n", e.block.c_str(), hwc(e.input).c_str(),
                  hwc(e.output).c_str(), e.rates.empty() ? "" : rates_str(e.rates).c_str());
    out << line;
  }

  out << "\nblock shapes\n";
  for (const char* name : {"hb1", "hb2", "cb2", "cb3"}) {
    for (const auto& e : trace) {
      if (e.block != name) continue;
      std::string label = name;
      for (auto& ch : label) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      std::snprintf(line, sizeof line, "  %-4s %-14s -> %-14s rates %s\n", label.c_str(), hwc(e.input).c_str(),
                    hwc(e.output).c_str(), rates_str(e.rates).c_str());
      out << line;
    }
  }

  out << "\nparameters\n";
  for (const auto& [prefix, n] : nn::count_by_prefix(net.params(), 1)) {
    std::snprintf(line, sizeof line, "  %-16s %10zu\n", prefix.c_str(), n);
    out << line;
  }
  std::snprintf(line, sizeof line, "  %-16s %10zu\n", "total", net.params().count());
  out << line;

  const ParamTotals ref = reference_totals();
  out << "\nreference totals at 384x384\n";
  std::snprintf(line, sizeof line, "  full  %10zu  published 9.03M  delta %s\n", ref.full,
                signed_millions(static_cast<double>(ref.full) - kPublishedParamsFull).c_str());
  out << line;
  std::snprintf(line, sizeof line, "  small %10zu  published 3.03M  delta %s\n", ref.small,
                signed_millions(static_cast<double>(ref.small) - kPublishedParamsSmall).c_str());
  out << line;
  std::snprintf(line, sizeof line, "  small/full %.3f\n", ref.ratio());
  out << line;
}

// ---------------------------------------------------------------- synth

inline data::DatasetManifest cmd_synth(const fs::path& dir, std::uint64_t seed, std::size_t count,
                                       std::size_t resolution, std::ostream& out) {
  data::DatasetManifest m = data::synth_dataset(dir, seed, count, resolution);
  out << "wrote " << m.size() << " samples to " << dir.string() << " (manifest " << (dir / "manifest.json").string()
      << ")\n";
  return m;
}

}  // namespace sodawide::app
