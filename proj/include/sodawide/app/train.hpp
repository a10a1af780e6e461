#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sodawide/app/run_config.hpp"
#include "sodawide/data/dataset.hpp"
#include "sodawide/losses.hpp"
#include "sodawide/nn/checkpoint.hpp"
#include "sodawide/nn/network.hpp"
#include "sodawide/optim.hpp"

namespace sodawide::app {

namespace fs = std::filesystem;

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport salient;
  std::optional<LossReport> contour;
  double ms = 0.0;

  double salient_total() const { return salient.total(); }
  double contour_total() const { return contour ? contour->total() : 0.0; }
  double total() const { return salient_total() + contour_total(); }
};

inline nlohmann::json report_json(const LossReport& r) {
  return nlohmann::json{{"terms", r.terms}, {"coefficients", r.coefficients}};
}

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j{{"event", "step"},
                   {"step", r.step},
                   {"epoch", r.epoch},
                   {"lr", r.lr},
                   {"salient", report_json(r.salient)},
                   {"salient_total", r.salient_total()},
                   {"contour_total", r.contour_total()},
                   {"total", r.total()},
                   {"ms", r.ms}};
  if (r.contour) j["contour"] = report_json(*r.contour);
  return j;
}

struct TrainSummary {
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  std::vector<StepRecord> history;
  fs::path last_checkpoint;
  fs::path best_checkpoint;
  std::size_t best_epoch = 0;
};

/// JSON-lines sink; a null stream drops records.
class JsonLog {
 public:
  explicit JsonLog(std::ostream* os) : os_(os) {}
  void write(const nlohmann::json& j) {
    if (!os_) return;
    *os_ << j.dump() << '\n';
    os_->flush();
  }

 private:
  std::ostream* os_;
};

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1));
}

inline void copy_file(const fs::path& from, const fs::path& to) {
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

}  // namespace detail

/// Trains on in-memory samples. Checkpoints go to io.checkpoint_dir after
/// every epoch (epoch_NNN.swc, last.swc) and the epoch with the lowest mean
/// training loss is copied to best.swc with a best.txt marker.
template <class T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<data::Sample<T>> samples, std::ostream* log)
      : cfg_(cfg), samples_(std::move(samples)), log_(log), net_(cfg.network, cfg.seed) {
    cfg_.validate();
    if (samples_.empty()) throw DataError("training set is empty");
    const Shape s = samples_[0].image.shape();
    if (s.h != cfg_.network.input_resolution || s.w != cfg_.network.input_resolution) {
      throw ConfigError("samples are " + s.str() + " but network.input_resolution is " +
                        std::to_string(cfg_.network.input_resolution));
    }
  }

  nn::SodaWideNet<T>& network() { return net_; }

  /// Off when the caller already wrote the config event to the same log.
  void set_log_config(bool on) { log_config_ = on; }

  TrainSummary run() {
    if (log_config_) log_.write(nlohmann::json{{"event", "config"}, {"config", cfg_}});
    Adam<T> adam(net_.params().trainable(), cfg_.optimizer);
    TrainSummary out;
    fs::create_directories(cfg_.io.checkpoint_dir);
    const fs::path dir = cfg_.io.checkpoint_dir;
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = samples_.size();
    const std::size_t batch = std::min(cfg_.data.batch_size, n);

    for (std::size_t epoch = 0; epoch < cfg_.schedule.epochs; ++epoch) {
      if (cfg_.max_steps && out.steps >= *cfg_.max_steps) break;
      adam.set_lr(cfg_.lr_at(epoch));
      const auto order = data::shuffled_order(n, detail::epoch_seed(cfg_.seed, epoch));
      double epoch_sum = 0.0;
      std::size_t epoch_steps = 0;
      for (std::size_t start = 0; start < n; start += batch) {
        if (cfg_.max_steps && out.steps >= *cfg_.max_steps) break;
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(start + batch, n)));
        StepRecord rec = step(adam, data::collate(samples_, idx), out.steps + 1, epoch);
        ++out.steps;
        epoch_sum += rec.total();
        ++epoch_steps;
        log_.write(to_json(rec));
        out.history.push_back(std::move(rec));
      }
      if (epoch_steps == 0) break;
      ++out.epochs_run;
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.swc", epoch + 1);
      nn::save_checkpoint(dir / name, net_);
      detail::copy_file(dir / name, dir / "last.swc");
      out.last_checkpoint = dir / "last.swc";
      const double mean = epoch_sum / static_cast<double>(epoch_steps);
      if (mean < best) {
        best = mean;
        out.best_epoch = epoch + 1;
        detail::copy_file(dir / name, dir / "best.swc");
        std::ofstream marker(dir / "best.txt");
        marker << "epoch " << epoch + 1 << "\nmean_total " << mean << "\nfile " << name << '\n';
        out.best_checkpoint = dir / "best.swc";
      }
      log_.write(nlohmann::json{{"event", "epoch"}, {"epoch", epoch + 1}, {"mean_total", mean}, {"checkpoint", name}});
    }
    return out;
  }

 private:
  StepRecord step(Adam<T>& adam, const data::Batch<T>& b, std::size_t step_no, std::size_t epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    adam.zero_grad();
    const nn::NetOutput<T> out = net_.forward(Var<T>(b.image), nn::Context{true, nullptr});
    LossResult<T> sal = salient_loss(out.saliency, b.mask, cfg_.loss);
    StepRecord rec;
    rec.step = step_no;
    rec.epoch = epoch + 1;
    rec.lr = adam.options().lr;
    rec.salient = sal.report;
    Var<T> total = sal.total;
    if (out.contour) {
      LossResult<T> con = contour_loss(*out.contour, b.contour);
      rec.contour = con.report;
      total = add(total, con.total);
    }
    if (!std::isfinite(rec.total()) || !std::isfinite(static_cast<double>(total.value().item()))) {
      log_.write(nlohmann::json{{"event", "nan"}, {"step", step_no}, {"epoch", epoch + 1}});
      throw NumericalError("non-finite loss at step " + std::to_string(step_no));
    }
    backward(total);
    adam.step();
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  RunConfig cfg_;
  std::vector<data::Sample<T>> samples_;
  JsonLog log_;
  nn::SodaWideNet<T> net_;
  bool log_config_ = true;
};

/// Loads every manifest entry (with flip copies when configured) at the
/// network resolution.
template <class T>
std::vector<data::Sample<T>> load_training_set(const RunConfig& cfg) {
  if (cfg.data.train_manifest.empty()) throw ConfigError("data.train_manifest is required for training");
  data::DatasetManifest m = data::load_manifest(cfg.data.train_manifest);
  if (m.entries.empty()) throw DataError("manifest " + cfg.data.train_manifest + " has no entries");
  if (cfg.data.expand_flips) m = data::expand_with_flips(m);
  std::vector<data::Sample<T>> samples;
  for (const auto& e : m.entries) samples.push_back(data::load_sample<T>(e, cfg.network.input_resolution));
  return samples;
}

}  // namespace sodawide::app
