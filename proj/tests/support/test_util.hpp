#pragma once

#include <initializer_list>

#include "wmvac/rng.hpp"
#include "wmvac/tensor.hpp"

namespace wmvac::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  Tensor t(shape);
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor tensor_2d(int h, int w, std::initializer_list<float> values) {
  Tensor t(Shape{1, 1, h, w});
  std::int64_t i = 0;
  for (float v : values) t[i++] = v;
  return t;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace wmvac::test
