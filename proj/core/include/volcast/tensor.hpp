#pragma once

#include <cstring>
#include <vector>

#include "volcast/common.hpp"

namespace volcast {

// Dense 4D tensor in channels-last layout: index (x, y, z, c) with c
// fastest. For movie data c is the time axis, so a contiguous run of
// frames at one voxel is a contiguous slice in memory, and reinterpreting
// a [X,Y,Z,T] read as a [X,Y,Z,C] network input is a no-op.
template <typename T>
struct Tensor4 {
  Vec4i shape{0, 0, 0, 0};
  std::vector<T> data;

  Tensor4() = default;
  explicit Tensor4(const Vec4i& s) : shape(s), data(static_cast<std::size_t>(prod(s)), T(0)) {}
  Tensor4(const Vec4i& s, T fill)
      : shape(s), data(static_cast<std::size_t>(prod(s)), fill) {}

  std::int64_t size() const { return prod(shape); }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) const {
    return ((x * shape[1] + y) * shape[2] + z) * shape[3] + c;
  }
  T& at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) {
    return data[static_cast<std::size_t>(index(x, y, z, c))];
  }
  const T& at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) const {
    return data[static_cast<std::size_t>(index(x, y, z, c))];
  }

  T* ptr(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data.data() + index(x, y, z, 0);
  }
  const T* ptr(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data.data() + index(x, y, z, 0);
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { std::memset(data.data(), 0, data.size() * sizeof(T)); }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

// Copy of channels [c0, c1) of every voxel; for a movie tensor this selects
// a frame range.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& t, std::int64_t c0, std::int64_t c1) {
  if (c0 < 0 || c1 > t.shape[3] || c0 >= c1)
    throw DataError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                    ") outside 0.." + std::to_string(t.shape[3]));
  Tensor4<T> out({t.shape[0], t.shape[1], t.shape[2], c1 - c0});
  const std::int64_t nvox = t.shape[0] * t.shape[1] * t.shape[2];
  const std::int64_t cin = t.shape[3], cout = c1 - c0;
  for (std::int64_t v = 0; v < nvox; ++v)
    std::memcpy(out.data.data() + v * cout, t.data.data() + v * cin + c0,
                static_cast<std::size_t>(cout) * sizeof(T));
  return out;
}

}  // namespace volcast
