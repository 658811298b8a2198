#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmvac {

// Dense rank-4 shape (batch, channels, height, width).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t count() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Rank-4 tensor of 32-bit reals, row-major with width fastest.
// Value type: copies are deep, moves are cheap.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(static_cast<std::size_t>(check_shape(shape)), fill) {}

  static Tensor scalar(float v) {
    Tensor t(Shape{1, 1, 1, 1});
    t.data_[0] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::int64_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  float& at(int n, int c, int y, int x) { return data_[static_cast<std::size_t>(index(n, c, y, x))]; }
  float at(int n, int c, int y, int x) const { return data_[static_cast<std::size_t>(index(n, c, y, x))]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Scalar convenience for 1x1x1x1 tensors (loss values).
  float item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: tensor has " + std::to_string(size()) + " entries");
    return data_[0];
  }

  void fill(float v) {
    for (auto& e : data_) e = v;
  }

  bool all_finite() const {
    for (float e : data_)
      if (!std::isfinite(e)) return false;
    return true;
  }

 private:
  static std::int64_t check_shape(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
      throw std::invalid_argument("Tensor: negative shape " + s.str());
    return s.count();
  }

  Shape shape_{};
  std::vector<float> data_;
};

inline Tensor clamp(const Tensor& t, float lo, float hi) {
  Tensor out = t;
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, out[i]));
  return out;
}

inline float max_abs(const Tensor& t) {
  float m = 0.0f;
  for (std::int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::fabs(t[i]));
  return m;
}

// Mean squared difference, accumulated in 64-bit.
inline double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("mean_squared_error: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (a.size() == 0) throw std::invalid_argument("mean_squared_error: empty tensors");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace wmvac
