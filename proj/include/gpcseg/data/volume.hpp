#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gpcseg/core/error.hpp"
#include "gpcseg/core/tensor.hpp"

namespace gpcseg {

using Dims = std::array<std::int64_t, 3>;  // (D, H, W)

// Dense 3-D scalar volume, row-major (D, H, W).
template <class V>
struct Volume {
  Dims dims{1, 1, 1};
  std::vector<V> data;

  Volume() = default;
  explicit Volume(Dims d, V fill = V{}) : dims(d), data(static_cast<std::size_t>(d[0] * d[1] * d[2]), fill) {
    if (d[0] < 1 || d[1] < 1 || d[2] < 1) throw ShapeError("volume dims must be >= 1");
  }

  std::int64_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x);
  }
  V& at(std::int64_t z, std::int64_t y, std::int64_t x) { return data[index(z, y, x)]; }
  const V& at(std::int64_t z, std::int64_t y, std::int64_t x) const { return data[index(z, y, x)]; }
  Dims coord(std::int64_t flat) const {
    return {flat / (dims[1] * dims[2]), (flat / dims[2]) % dims[1], flat % dims[2]};
  }

  bool operator==(const Volume&) const = default;
};

using LabelVolume = Volume<std::uint8_t>;
using Mask = Volume<std::uint8_t>;

}  // namespace gpcseg
