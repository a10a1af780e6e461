#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sodawide/data/netpbm.hpp"
#include "sodawide/losses.hpp"
#include "sodawide/ops/resample.hpp"
#include "sodawide/serialize.hpp"

namespace sodawide::data {

namespace fs = std::filesystem;

enum class Flip { none, horizontal, vertical };

inline std::string to_string(Flip f) {
  switch (f) {
    case Flip::horizontal: return "horizontal";
    case Flip::vertical: return "vertical";
    case Flip::none: break;
  }
  return "none";
}

inline Flip parse_flip(const std::string& s) {
  if (s == "none") return Flip::none;
  if (s == "horizontal") return Flip::horizontal;
  if (s == "vertical") return Flip::vertical;
  throw DataError("flip must be none, horizontal or vertical, got '" + s + "'");
}

/// Paths are stored resolved against the manifest directory.
struct ManifestEntry {
  fs::path image;
  fs::path mask;
  std::optional<fs::path> contour;
  Flip flip = Flip::none;

  /// File stem used for per-entry outputs; flipped copies get a suffix.
  std::string stem() const {
    std::string s = image.stem().string();
    if (flip == Flip::horizontal) s += "_hflip";
    if (flip == Flip::vertical) s += "_vflip";
    return s;
  }
};

struct DatasetManifest {
  std::string split;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
};

namespace detail {

inline void require_file(const fs::path& p, const char* role) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) throw DataError(std::string(role) + " file not found: " + p.string());
}

}  // namespace detail

/// Checks that every file exists and no (image, flip) pair repeats.
inline void validate_manifest(const DatasetManifest& m) {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& e : m.entries) {
    detail::require_file(e.image, "image");
    detail::require_file(e.mask, "mask");
    if (e.contour) detail::require_file(*e.contour, "contour");
    const std::string key = fs::absolute(e.image).lexically_normal().string();
    if (!seen.insert({key, static_cast<int>(e.flip)}).second) {
      throw DataError("duplicate image in manifest: " + e.image.string());
    }
  }
}

/// JSON array of {"image", "mask", "contour"?, "flip"?}; relative paths are
/// resolved against `base_dir`.
inline DatasetManifest parse_manifest(const nlohmann::json& j, const fs::path& base_dir, std::string split) {
  if (!j.is_array()) throw DataError("manifest must be a JSON array of entries");
  DatasetManifest m;
  m.split = std::move(split);
  auto resolve = [&](const nlohmann::json& v, const char* field) {
    if (!v.is_string()) throw DataError(std::string("manifest field '") + field + "' must be a string");
    const fs::path p = v.get<std::string>();
    return p.is_absolute() ? p : (base_dir / p).lexically_normal();
  };
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    if (!item.is_object() || !item.contains("image") || !item.contains("mask")) {
      throw DataError("manifest entry " + std::to_string(i) + " needs \"image\" and \"mask\"");
    }
    ManifestEntry e;
    e.image = resolve(item.at("image"), "image");
    e.mask = resolve(item.at("mask"), "mask");
    if (item.contains("contour") && !item.at("contour").is_null()) e.contour = resolve(item.at("contour"), "contour");
    if (item.contains("flip")) e.flip = parse_flip(item.at("flip").get<std::string>());
    m.entries.push_back(std::move(e));
  }
  validate_manifest(m);
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return parse_manifest(j, path.parent_path(), path.stem().string());
}

/// Writes paths relative to the manifest's directory.
inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_normal().lexically_relative(base).generic_string(); };
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json item{{"image", rel(e.image)}, {"mask", rel(e.mask)}};
    if (e.contour) item["contour"] = rel(*e.contour);
    if (e.flip != Flip::none) item["flip"] = to_string(e.flip);
    j.push_back(std::move(item));
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << j.dump(2) << '\n';
}

/// Original entries followed by their horizontal and vertical flips (3N).
inline DatasetManifest expand_with_flips(const DatasetManifest& m) {
  DatasetManifest out{m.split, {}};
  for (Flip f : {Flip::none, Flip::horizontal, Flip::vertical}) {
    for (auto e : m.entries) {
      if (e.flip != Flip::none) throw DataError("manifest is already flip-expanded");
      e.flip = f;
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

/// Loads a PGM, PPM or SWT1 file as a 1 x C x H x W tensor in [0, 1].
template <class T>
Tensor<T> load_planes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::array<char, 2> head{};
  is.read(head.data(), 2);
  is.seekg(0);
  try {
    if (head[0] == 'P') return to_tensor<T>(read_pnm(is));
    Tensor<T> t = read_swt1<T>(is);
    if (t.shape().n != 1) throw DataError("SWT1 sample must have N = 1, got " + t.shape().str());
    for (T v : t.data()) {
      if (!(v >= T{0} && v <= T{1})) throw DataError("SWT1 sample values must lie in [0, 1]");
    }
    return t;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template <class T>
Tensor<T> flip(const Tensor<T>& x, Flip f) {
  if (f == Flip::none) return x;
  const Shape s = x.shape();
  Tensor<T> y(s);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = x.data().data() + nc * s.plane();
    T* dst = y.data().data() + nc * s.plane();
    for (std::size_t r = 0; r < s.h; ++r)
      for (std::size_t c = 0; c < s.w; ++c) {
        const std::size_t sr = f == Flip::vertical ? s.h - 1 - r : r;
        const std::size_t sc = f == Flip::horizontal ? s.w - 1 - c : c;
        dst[r * s.w + c] = src[sr * s.w + sc];
      }
  }
  return y;
}

/// One training or evaluation sample. `image` is normalized to [-1, 1]
/// ((x - 0.5) / 0.5); `mask` is in [0, 1]; `contour` is binary.
template <class T>
struct Sample {
  std::string name;
  Tensor<T> image;    // 1 x 3 x H x W
  Tensor<T> mask;     // 1 x 1 x H x W
  Tensor<T> contour;  // 1 x 1 x H x W
};

template <class T>
Sample<T> flip_augment(const Sample<T>& s, Flip f) {
  return Sample<T>{s.name, flip(s.image, f), flip(s.mask, f), flip(s.contour, f)};
}

namespace detail {

inline Shape with_c(Shape s, std::size_t c) {
  s.c = c;
  return s;
}

template <class T>
Tensor<T> resized(const Tensor<T>& t, std::size_t res) {
  if (t.shape().h == res && t.shape().w == res) return t;
  return kernels::bilinear_resize_forward(t, res, res);
}

}  // namespace detail

template <class T>
Sample<T> load_sample(const ManifestEntry& e, std::size_t resolution) {
  if (resolution == 0) throw ConfigError("sample resolution must be positive");
  Tensor<T> image = load_planes<T>(e.image);
  if (image.shape().c == 1) {
    Tensor<T> rgb(detail::with_c(image.shape(), 3));
    for (std::size_t c = 0; c < 3; ++c) std::copy(image.data().begin(), image.data().end(), rgb.plane(0, c));
    image = std::move(rgb);
  }
  if (image.shape().c != 3) throw DataError(e.image.string() + ": image must have 1 or 3 channels");
  Tensor<T> mask = load_planes<T>(e.mask);
  if (mask.shape().c != 1) throw DataError(e.mask.string() + ": mask must have one channel");
  image = detail::resized(image, resolution);
  mask = detail::resized(mask, resolution);
  Tensor<T> contour;
  if (e.contour) {
    contour = load_planes<T>(*e.contour);
    if (contour.shape().c != 1) throw DataError(e.contour->string() + ": contour must have one channel");
    contour = detail::resized(contour, resolution);
    for (auto& v : contour.data()) v = v >= T(0.5) ? T{1} : T{0};
  } else {
    contour = contour_from_mask(mask);
  }
  for (auto& v : image.data()) v = (v - T(0.5)) / T(0.5);
  return flip_augment(Sample<T>{e.stem(), std::move(image), std::move(mask), std::move(contour)}, e.flip);
}

template <class T>
struct Batch {
  Tensor<T> image, mask, contour;
};

/// Stacks the selected samples along N.
template <class T>
Batch<T> collate(const std::vector<Sample<T>>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("empty batch");
  auto stack = [&](auto member) {
    const Shape one = (samples.at(indices[0]).*member).shape();
    Tensor<T> out(Shape{indices.size(), one.c, one.h, one.w});
    const std::size_t len = one.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Tensor<T>& t = samples.at(indices[i]).*member;
      if (t.shape() != one) throw ShapeError("batch samples differ in shape: " + one.str() + " vs " + t.shape().str());
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * len));
    }
    return out;
  };
  return Batch<T>{stack(&Sample<T>::image), stack(&Sample<T>::mask), stack(&Sample<T>::contour)};
}

/// Seeded Fisher-Yates permutation of 0..n-1, reproducible across platforms.
inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

/// Writes a 1 x 1 x H x W map as an 8-bit PGM, applying a sigmoid first when
/// `logits` is set; optionally also stores the probabilities as SWT1.
template <class T>
void write_saliency(const Tensor<T>& map, const fs::path& pgm_path, bool logits,
                    const std::optional<fs::path>& swt_path = std::nullopt) {
  if (map.shape().n != 1 || map.shape().c != 1) throw ShapeError("saliency map must be 1x1xHxW, got " + map.shape().str());
  Tensor<T> p = map;
  if (logits) {
    for (auto& v : p.data()) v = sigmoid_scalar(v);
  }
  write_pnm(pgm_path, to_pnm8(p));
  if (swt_path) save_swt1(*swt_path, p);
}

}  // namespace sodawide::data
