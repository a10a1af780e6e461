#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include "sodawide/data/dataset.hpp"

namespace sodawide::data {

/// One generated picture: image in [0, 1] (1x3xRxR) and binary mask (1x1xRxR).
struct SynthImage {
  Tensor<double> image;
  Tensor<double> mask;
};

namespace detail {

struct SynthShape {
  bool ellipse;
  double cx, cy, a, b, angle;
  std::array<double, 3> color;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
    return ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
  }
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

inline double color_distance(const std::array<double, 3>& p, const std::array<double, 3>& q) {
  return std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]));
}

inline SynthImage synth_attempt(std::mt19937_64& rng, std::size_t res) {
  const double r = static_cast<double>(res);
  const std::array<double, 3> bg{uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85),
                                 uniform(rng, 0.15, 0.85)};
  const double fx = uniform(rng, 0.1, 0.6), fy = uniform(rng, 0.1, 0.6);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);

  const auto n_shapes = 1 + static_cast<std::size_t>(unit_uniform(rng) * 3.0);
  std::vector<SynthShape> shapes;
  for (std::size_t k = 0; k < n_shapes; ++k) {
    SynthShape s{};
    s.ellipse = unit_uniform(rng) < 0.5;
    s.cx = uniform(rng, 0.25, 0.75) * r;
    s.cy = uniform(rng, 0.25, 0.75) * r;
    s.a = std::max(1.5, uniform(rng, 0.08, 0.25) * r);
    s.b = std::max(1.5, uniform(rng, 0.08, 0.25) * r);
    s.angle = uniform(rng, 0.0, std::numbers::pi);
    // Keep the bounding circle one pixel inside the frame.
    const double reach = s.ellipse ? std::max(s.a, s.b) : std::hypot(s.a, s.b);
    const double room = std::min({s.cx, s.cy, r - s.cx, r - s.cy}) - 1.0;
    if (reach > room) {
      s.a *= room / reach;
      s.b *= room / reach;
    }
    s.color = {unit_uniform(rng), unit_uniform(rng), unit_uniform(rng)};
    for (int tries = 0; tries < 16 && color_distance(s.color, bg) < 0.45; ++tries) {
      s.color = {unit_uniform(rng), unit_uniform(rng), unit_uniform(rng)};
    }
    if (color_distance(s.color, bg) < 0.45) s.color = {1.0 - bg[0], 1.0 - bg[1], 1.0 - bg[2]};
    shapes.push_back(s);
  }

  SynthImage out{Tensor<double>(Shape{1, 3, res, res}), Tensor<double>(Shape{1, 1, res, res})};
  const std::size_t plane = res * res;
  constexpr int kSub = 4;
  for (std::size_t y = 0; y < res; ++y)
    for (std::size_t x = 0; x < res; ++x) {
      const double stripe = 0.08 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      std::array<double, 3> px{};
      for (std::size_t c = 0; c < 3; ++c) px[c] = bg[c] + stripe + uniform(rng, -0.03, 0.03);
      int inside_any = 0;
      std::vector<int> hits(shapes.size(), 0);
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px_x = static_cast<double>(x) + (sx + 0.5) / kSub;
          const double px_y = static_cast<double>(y) + (sy + 0.5) / kSub;
          bool any = false;
          for (std::size_t k = 0; k < shapes.size(); ++k) {
            if (shapes[k].contains(px_x, px_y)) {
              ++hits[k];
              any = true;
            }
          }
          inside_any += any;
        }
      // Painter's order: later shapes cover earlier ones.
      for (std::size_t k = 0; k < shapes.size(); ++k) {
        const double cov = static_cast<double>(hits[k]) / (kSub * kSub);
        for (std::size_t c = 0; c < 3; ++c) px[c] = (1.0 - cov) * px[c] + cov * shapes[k].color[c];
      }
      for (std::size_t c = 0; c < 3; ++c) out.image[c * plane + y * res + x] = std::clamp(px[c], 0.0, 1.0);
      out.mask[y * res + x] = 2 * inside_any >= kSub * kSub ? 1.0 : 0.0;
    }
  return out;
}

}  // namespace detail

/// 1-3 anti-aliased ellipses or rectangles on a striped, noisy background.
/// Shapes stay at least one pixel inside the frame. The mask marks pixels
/// with at least half their 4x4 subsamples inside some shape and is never
/// empty (a draw with an empty mask is redrawn).
inline SynthImage synth_image(std::mt19937_64& rng, std::size_t res) {
  if (res < 8) throw ConfigError("synthetic images need resolution >= 8");
  for (;;) {
    SynthImage s = detail::synth_attempt(rng, res);
    for (double v : s.mask.data()) {
      if (v > 0.0) return s;
    }
  }
}

/// Writes `count` synthetic samples under `dir` (images/, masks/,
/// manifest.json) and returns the manifest. Deterministic per seed.
inline DatasetManifest synth_dataset(const fs::path& dir, std::uint64_t seed, std::size_t count, std::size_t resolution) {
  if (count == 0) throw ConfigError("synthetic dataset count must be positive");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::mt19937_64 rng(seed);
  DatasetManifest m{"synth", {}};
  for (std::size_t i = 0; i < count; ++i) {
    const SynthImage s = synth_image(rng, resolution);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu", i);
    ManifestEntry e;
    e.image = dir / "images" / (std::string(name) + ".ppm");
    e.mask = dir / "masks" / (std::string(name) + ".pgm");
    write_pnm(e.image, to_pnm8(s.image));
    write_pnm(e.mask, to_pnm8(s.mask));
    m.entries.push_back(std::move(e));
  }
  save_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace sodawide::data
