#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sodawide {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents of a rank-4 tensor in batch-channel-height-width order.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Deterministic uniform double in [0, 1) drawn from a 64-bit engine; does not
/// depend on the standard library's distribution implementation.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Box-Muller on top of unit_uniform, stable across platforms.
inline double standard_normal(std::mt19937_64& rng) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Dense NCHW array. A default-constructed tensor is empty (numel 0) and acts
/// as a "no value" placeholder; every other constructor requires dims >= 1.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0, 0, 0, 0} {}

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape) {
    check_shape(shape);
    data_.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape);
    if (data_.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T{0}); }
  static Tensor ones(Shape shape) { return Tensor(shape, T{1}); }
  static Tensor full(Shape shape, T value) { return Tensor(shape, value); }

  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data_) v = static_cast<T>(stddev * standard_normal(rng));
    return t;
  }

  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data_) v = static_cast<T>(lo + (hi - lo) * unit_uniform(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[index(n, c, h, w)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the start of plane (n, c).
  const T* plane(std::size_t n, std::size_t c) const { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
      throw ShapeError("accumulate shape mismatch: " + shape_.str() + " vs " + other.shape_.str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

 private:
  static void check_shape(const Shape& s) {
    if (!s.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + s.str());
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Per-channel vectors (biases, normalization affine terms) use shape 1xCx1x1.
inline Shape channel_vector(std::size_t channels) { return Shape{1, channels, 1, 1}; }

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("compare shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

enum class FlipMode { horizontal, vertical };

template <class T>
Tensor<T> flip(const Tensor<T>& x, FlipMode mode) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xw = 0; xw < s.w; ++xw) {
          const std::size_t sy = mode == FlipMode::vertical ? s.h - 1 - y : y;
          const std::size_t sx = mode == FlipMode::horizontal ? s.w - 1 - xw : xw;
          out.at(n, c, y, xw) = x.at(n, c, sy, sx);
        }
  return out;
}

template <class T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, s.w, s.h});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xw = 0; xw < s.w; ++xw) out.at(n, c, xw, y) = x.at(n, c, y, xw);
  return out;
}

/// Concatenates tensors along the batch axis; all must share C, H, W.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch of empty list");
  Shape s = items[0].shape();
  std::vector<T> data;
  data.reserve(s.numel() * items.size());
  for (const auto& t : items) {
    if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw ShapeError("stack_batch mismatch: " + s.str() + " vs " + t.shape().str());
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  std::size_t total = 0;
  for (const auto& t : items) total += t.shape().n;
  s.n = total;
  return Tensor<T>(s, std::move(data));
}

template <class T>
Tensor<T> batch_item(const Tensor<T>& x, std::size_t n) {
  const Shape s = x.shape();
  if (n >= s.n) throw ShapeError("batch index out of range for " + s.str());
  const std::size_t stride = s.c * s.h * s.w;
  std::vector<T> data(x.data().begin() + n * stride, x.data().begin() + (n + 1) * stride);
  return Tensor<T>(Shape{1, s.c, s.h, s.w}, std::move(data));
}

}  // namespace sodawide
