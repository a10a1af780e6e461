#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "sodawide/losses.hpp"
#include "sodawide/nn/config.hpp"
#include "sodawide/optim.hpp"

namespace sodawide::app {

struct ScheduleConfig {
  std::size_t epochs = 41;
  std::size_t lr_drop_epoch = 30;  // epochs before the drop
  double lr_drop_factor = 0.1;
};

struct DataConfig {
  std::string train_manifest;
  std::size_t batch_size = 6;
  bool expand_flips = true;  // original + horizontal + vertical copies
};

struct IoConfig {
  std::string checkpoint_dir = "checkpoints";
  std::string log_path;  // empty: no log file
};

/// Everything a command needs, merged from defaults, a JSON file and flags.
struct RunConfig {
  nn::NetworkConfig network;
  AdamOptions optimizer;
  ScheduleConfig schedule;
  LossOptions loss;
  DataConfig data;
  IoConfig io;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::optional<std::size_t> max_steps;

  /// Learning rate for a zero-based epoch.
  double lr_at(std::size_t epoch) const {
    return epoch >= schedule.lr_drop_epoch ? optimizer.lr * schedule.lr_drop_factor : optimizer.lr;
  }

  void validate() const {
    network.validate();
    auto positive = [](double v, const char* field) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(field) + " must be a positive number");
    };
    positive(optimizer.lr, "optimizer.lr");
    positive(optimizer.epsilon, "optimizer.epsilon");
    positive(schedule.lr_drop_factor, "schedule.lr_drop_factor");
    for (double b : {optimizer.beta1, optimizer.beta2}) {
      if (!(b >= 0.0 && b < 1.0)) throw ConfigError("optimizer.betas must lie in [0, 1)");
    }
    if (schedule.epochs < 1) throw ConfigError("schedule.epochs must be >= 1");
    if (data.batch_size < 1) throw ConfigError("data.batch_size must be >= 1");
    if (loss.alpha_window < 1 || loss.alpha_window % 2 == 0) {
      throw ConfigError("loss.alpha_window must be odd, got " + std::to_string(loss.alpha_window));
    }
    if (loss.weight_mode == WeightMode::one_plus_lambda_alpha && !(loss.lambda >= 0.0)) {
      throw ConfigError("loss.lambda must be >= 0");
    }
    if (max_steps && *max_steps == 0) throw ConfigError("max_steps must be >= 1");
  }
};

inline std::string to_string(WeightMode m) { return m == WeightMode::alpha ? "alpha" : "one_plus_lambda_alpha"; }
inline std::string to_string(WeightNorm n) { return n == WeightNorm::weight_sum ? "weight_sum" : "pixel_count"; }

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"network", c.network},
      {"optimizer",
       {{"kind", "adam"},
        {"lr", c.optimizer.lr},
        {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
        {"epsilon", c.optimizer.epsilon}}},
      {"schedule",
       {{"epochs", c.schedule.epochs},
        {"lr_drop_epoch", c.schedule.lr_drop_epoch},
        {"lr_drop_factor", c.schedule.lr_drop_factor}}},
      {"loss",
       {{"alpha_window", c.loss.alpha_window},
        {"weight_mode", to_string(c.loss.weight_mode)},
        {"lambda", c.loss.lambda},
        {"normalization", to_string(c.loss.normalization)}}},
      {"data",
       {{"train_manifest", c.data.train_manifest},
        {"batch_size", c.data.batch_size},
        {"expand_flips", c.data.expand_flips}}},
      {"io", {{"checkpoint_dir", c.io.checkpoint_dir}, {"log_path", c.io.log_path}}},
      {"seed", c.seed},
      {"deterministic", c.deterministic},
      {"max_steps", c.max_steps ? nlohmann::json(*c.max_steps) : nlohmann::json(nullptr)}};
}

/// Overlays the keys present in `j`; unknown keys are rejected so typos
/// do not silently fall back to defaults.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  auto check_keys = [](const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, _] : obj.items()) {
      bool known = false;
      for (const char* key : keys) known = known || k == key;
      if (!known) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
    }
  };
  try {
    check_keys(j, "", {"network", "optimizer", "schedule", "loss", "data", "io", "seed", "deterministic", "max_steps"});
    if (j.contains("network")) {
      check_keys(j.at("network"), "network",
                 {"variant", "base_channels", "width_multiplier", "dilation_schedule", "enable_msa", "enable_mrffam",
                  "enable_mrffam_decoder", "enable_lpm", "enable_contour_head", "attention_heads", "groupnorm_groups",
                  "input_resolution"});
      nn::from_json(j.at("network"), c.network);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, "optimizer", {"kind", "lr", "betas", "epsilon"});
      if (o.contains("kind") && o.at("kind") != "adam") throw ConfigError("optimizer.kind: only 'adam' is supported");
      if (o.contains("lr")) o.at("lr").get_to(c.optimizer.lr);
      if (o.contains("betas")) {
        const auto& b = o.at("betas");
        if (!b.is_array() || b.size() != 2) throw ConfigError("optimizer.betas must be a two-element array");
        b.at(0).get_to(c.optimizer.beta1);
        b.at(1).get_to(c.optimizer.beta2);
      }
      if (o.contains("epsilon")) o.at("epsilon").get_to(c.optimizer.epsilon);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, "schedule", {"epochs", "lr_drop_epoch", "lr_drop_factor"});
      if (s.contains("epochs")) s.at("epochs").get_to(c.schedule.epochs);
      if (s.contains("lr_drop_epoch")) s.at("lr_drop_epoch").get_to(c.schedule.lr_drop_epoch);
      if (s.contains("lr_drop_factor")) s.at("lr_drop_factor").get_to(c.schedule.lr_drop_factor);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      check_keys(l, "loss", {"alpha_window", "weight_mode", "lambda", "normalization"});
      if (l.contains("alpha_window")) l.at("alpha_window").get_to(c.loss.alpha_window);
      if (l.contains("weight_mode")) {
        const auto m = l.at("weight_mode").get<std::string>();
        if (m == "alpha") {
          c.loss.weight_mode = WeightMode::alpha;
        } else if (m == "one_plus_lambda_alpha") {
          c.loss.weight_mode = WeightMode::one_plus_lambda_alpha;
        } else {
          throw ConfigError("loss.weight_mode must be alpha or one_plus_lambda_alpha");
        }
      }
      if (l.contains("lambda")) l.at("lambda").get_to(c.loss.lambda);
      if (l.contains("normalization")) {
        const auto n = l.at("normalization").get<std::string>();
        if (n == "weight_sum") {
          c.loss.normalization = WeightNorm::weight_sum;
        } else if (n == "pixel_count") {
          c.loss.normalization = WeightNorm::pixel_count;
        } else {
          throw ConfigError("loss.normalization must be weight_sum or pixel_count");
        }
      }
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, "data", {"train_manifest", "batch_size", "expand_flips"});
      if (d.contains("train_manifest")) d.at("train_manifest").get_to(c.data.train_manifest);
      if (d.contains("batch_size")) d.at("batch_size").get_to(c.data.batch_size);
      if (d.contains("expand_flips")) d.at("expand_flips").get_to(c.data.expand_flips);
    }
    if (j.contains("io")) {
      const auto& io = j.at("io");
      check_keys(io, "io", {"checkpoint_dir", "log_path"});
      if (io.contains("checkpoint_dir")) io.at("checkpoint_dir").get_to(c.io.checkpoint_dir);
      if (io.contains("log_path")) io.at("log_path").get_to(c.io.log_path);
    }
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("deterministic")) j.at("deterministic").get_to(c.deterministic);
    if (j.contains("max_steps")) {
      c.max_steps = j.at("max_steps").is_null() ? std::nullopt : std::optional<std::size_t>(j.at("max_steps").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  RunConfig c;
  try {
    from_json(nlohmann::json::parse(is), c);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return c;
}

}  // namespace sodawide::app
