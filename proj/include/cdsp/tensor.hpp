// Dense row-major tensor buffer. Shapes are small (desk scale), so plain
// std::vector storage with explicit index math is enough.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "cdsp/common.hpp"

namespace cdsp {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    CDSP_CHECK(d >= 0, "negative extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> data;

  TensorData() = default;
  explicit TensorData(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  TensorData(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    CDSP_CHECK(static_cast<int64_t>(data.size()) == shape_numel(shape),
               "data length ", data.size(), " does not match shape ", shape_str(shape));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int axis) const { return shape[static_cast<size_t>(axis)]; }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 2-D and 3-D accessors for the common cases.
  T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  T& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  static TensorData zeros(Shape s) { return TensorData(std::move(s)); }
  static TensorData full(Shape s, T v) {
    TensorData t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorData scalar(T v) { return TensorData({1}, {v}); }

  static TensorData randn(Shape s, Rng& rng, T sd = T(1)) {
    TensorData t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, static_cast<double>(sd)));
    return t;
  }

  template <class U>
  TensorData<U> cast() const {
    TensorData<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool same_shape(const TensorData& o) const { return shape == o.shape; }
};

}  // namespace cdsp
