#pragma once

#include <array>
#include <string>

#include "gpcseg/core/error.hpp"
#include "gpcseg/data/volume.hpp"

namespace gpcseg {

enum class Region { et, wt, tc };

inline constexpr std::array<Region, 3> kRegions{Region::et, Region::wt, Region::tc};

inline const char* region_name(Region r) {
  switch (r) {
    case Region::et: return "ET";
    case Region::wt: return "WT";
    case Region::tc: return "TC";
  }
  return "?";
}

// Internal label encoding: 1 edema, 2 enhancing, 3 necrosis/non-enhancing.
inline bool in_region(std::uint8_t label, Region r) {
  switch (r) {
    case Region::wt: return label >= 1 && label <= 3;
    case Region::tc: return label == 2 || label == 3;
    case Region::et: return label == 2;
  }
  return false;
}

struct RegionMasks {
  Mask whole_tumor, tumor_core, enhancing_tumor;

  const Mask& get(Region r) const {
    switch (r) {
      case Region::wt: return whole_tumor;
      case Region::tc: return tumor_core;
      case Region::et: return enhancing_tumor;
    }
    return whole_tumor;
  }
};

inline RegionMasks regions_from_labels(const LabelVolume& labels) {
  RegionMasks m{Mask(labels.dims), Mask(labels.dims), Mask(labels.dims)};
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const auto v = labels.data[i];
    if (v > 3) throw ConfigError("label value " + std::to_string(int(v)) + " out of range");
    m.whole_tumor.data[i] = in_region(v, Region::wt);
    m.tumor_core.data[i] = in_region(v, Region::tc);
    m.enhancing_tumor.data[i] = in_region(v, Region::et);
  }
  return m;
}

}  // namespace gpcseg
