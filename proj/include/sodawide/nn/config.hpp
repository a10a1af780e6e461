#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "sodawide/tensor.hpp"

namespace sodawide::nn {

enum class Variant { full, small };

inline std::string to_string(Variant v) { return v == Variant::full ? "full" : "small"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "small") return Variant::small;
  throw ConfigError("variant: expected 'full' or 'small', got '" + s + "'");
}

/// Dilation rates of the MRFFAM in each hybrid (HB) and convolution (CB) block.
struct DilationSchedule {
  std::vector<std::size_t> hb1{6, 10, 14, 18, 22};
  std::vector<std::size_t> hb2{6, 10, 14, 18};
  std::vector<std::size_t> cb2{6, 10, 14, 18};
  std::vector<std::size_t> cb3{6, 10, 14, 18, 22};

  void validate() const {
    auto check = [](const std::vector<std::size_t>& rates, const char* block) {
      if (rates.empty()) throw ConfigError(std::string("dilation_schedule.") + block + ": rates must be nonempty");
      for (std::size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] < 1) throw ConfigError(std::string("dilation_schedule.") + block + ": rates must be >= 1");
        if (i > 0 && rates[i] <= rates[i - 1]) {
          throw ConfigError(std::string("dilation_schedule.") + block + ": rates must be strictly increasing");
        }
      }
    };
    check(hb1, "hb1");
    check(hb2, "hb2");
    check(cb2, "cb2");
    check(cb3, "cb3");
  }

  friend bool operator==(const DilationSchedule&, const DilationSchedule&) = default;
};

struct NetworkConfig {
  Variant variant = Variant::full;
  std::size_t base_channels = 64;
  double width_multiplier = 1.0;
  DilationSchedule dilation_schedule;
  bool enable_msa = true;
  bool enable_mrffam = true;
  bool enable_mrffam_decoder = true;
  bool enable_lpm = true;
  bool enable_contour_head = true;
  std::size_t attention_heads = 1;
  std::size_t groupnorm_groups = 8;
  std::size_t input_resolution = 384;

  static NetworkConfig for_variant(Variant v) {
    NetworkConfig c;
    c.variant = v;
    c.width_multiplier = v == Variant::full ? 1.0 : 0.5;
    return c;
  }

  /// Desk-scale configuration used for training smoke runs and gradient audits.
  static NetworkConfig toy(std::size_t resolution = 96, std::size_t base = 8) {
    NetworkConfig c;
    c.base_channels = base;
    c.groupnorm_groups = base >= 8 ? 4 : 1;
    c.input_resolution = resolution;
    return c;
  }

  /// Channel count of the stem and decoder (C); encoder blocks run at 2C.
  std::size_t width() const {
    return static_cast<std::size_t>(std::lround(static_cast<double>(base_channels) * width_multiplier));
  }

  std::size_t encoder_branch_count() const {
    return static_cast<std::size_t>(enable_msa) + static_cast<std::size_t>(enable_mrffam) +
           static_cast<std::size_t>(enable_lpm);
  }

  void validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (!(width_multiplier > 0.0)) throw ConfigError("width_multiplier must be > 0");
    const std::size_t c = width();
    if (c < 1) throw ConfigError("width_multiplier leaves no channels");
    if (groupnorm_groups < 1 || c % groupnorm_groups != 0) {
      throw ConfigError("groupnorm_groups (" + std::to_string(groupnorm_groups) + ") must divide the block width " +
                        std::to_string(c));
    }
    if (attention_heads < 1 || c % attention_heads != 0) {
      throw ConfigError("attention_heads (" + std::to_string(attention_heads) + ") must divide the block width " +
                        std::to_string(c));
    }
    if (input_resolution < 16 || input_resolution % 16 != 0) {
      throw ConfigError("input_resolution must be a positive multiple of 16, got " +
                        std::to_string(input_resolution));
    }
    if (encoder_branch_count() == 0) {
      throw ConfigError("enable_msa/enable_mrffam/enable_lpm: at least one hybrid-block branch must be enabled");
    }
    dilation_schedule.validate();
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline void to_json(nlohmann::json& j, const DilationSchedule& d) {
  j = nlohmann::json{{"hb1", d.hb1}, {"hb2", d.hb2}, {"cb2", d.cb2}, {"cb3", d.cb3}};
}

inline void from_json(const nlohmann::json& j, DilationSchedule& d) {
  if (j.contains("hb1")) j.at("hb1").get_to(d.hb1);
  if (j.contains("hb2")) j.at("hb2").get_to(d.hb2);
  if (j.contains("cb2")) j.at("cb2").get_to(d.cb2);
  if (j.contains("cb3")) j.at("cb3").get_to(d.cb3);
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"base_channels", c.base_channels},
                     {"width_multiplier", c.width_multiplier},
                     {"dilation_schedule", c.dilation_schedule},
                     {"enable_msa", c.enable_msa},
                     {"enable_mrffam", c.enable_mrffam},
                     {"enable_mrffam_decoder", c.enable_mrffam_decoder},
                     {"enable_lpm", c.enable_lpm},
                     {"enable_contour_head", c.enable_contour_head},
                     {"attention_heads", c.attention_heads},
                     {"groupnorm_groups", c.groupnorm_groups},
                     {"input_resolution", c.input_resolution}};
}

/// Missing keys keep their current values, so a partial object overlays defaults.
inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  try {
    if (j.contains("variant")) {
      c = NetworkConfig{NetworkConfig::for_variant(parse_variant(j.at("variant").get<std::string>()))};
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("base_channels", c.base_channels);
    get("width_multiplier", c.width_multiplier);
    get("dilation_schedule", c.dilation_schedule);
    get("enable_msa", c.enable_msa);
    get("enable_mrffam", c.enable_mrffam);
    get("enable_mrffam_decoder", c.enable_mrffam_decoder);
    get("enable_lpm", c.enable_lpm);
    get("enable_contour_head", c.enable_contour_head);
    get("attention_heads", c.attention_heads);
    get("groupnorm_groups", c.groupnorm_groups);
    get("input_resolution", c.input_resolution);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
}

}  // namespace sodawide::nn
