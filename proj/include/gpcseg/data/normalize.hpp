#pragma once

#include <cmath>
#include <string>

#include "gpcseg/core/error.hpp"
#include "gpcseg/data/case.hpp"

namespace gpcseg {

enum class Normalization { none, zscore };

inline std::string normalization_name(Normalization n) { return n == Normalization::zscore ? "zscore" : "none"; }

inline Normalization parse_normalization(const std::string& s) {
  if (s == "zscore") return Normalization::zscore;
  if (s == "none") return Normalization::none;
  throw ConfigError("unknown normalization '" + s + "' (expected zscore or none)");
}

// Per modality: moments over nonzero voxels; zeros stay zero.
inline Case zscore_normalize(const Case& c) {
  Case out = c;
  for (auto& m : out.modalities) {
    double s = 0, n = 0;
    for (float v : m.volume.data)
      if (v != 0.0f) {
        s += v;
        n += 1;
      }
    if (n < 2) throw NumericalError("modality '" + m.name + "' of case '" + c.id + "' has fewer than 2 nonzero voxels");
    const double mu = s / n;
    double var = 0;
    for (float v : m.volume.data)
      if (v != 0.0f) var += (v - mu) * (v - mu);
    var /= n;
    if (!(var > 0)) throw NumericalError("modality '" + m.name + "' of case '" + c.id + "' has zero variance");
    const double sd = std::sqrt(var);
    for (float& v : m.volume.data)
      if (v != 0.0f) {
        v = static_cast<float>((v - mu) / sd);
        // a voxel landing exactly on the mean would otherwise read as background
        if (v == 0.0f) v = 1e-30f;
      }
  }
  return out;
}

inline Case normalize(const Case& c, Normalization n) { return n == Normalization::zscore ? zscore_normalize(c) : c; }

}  // namespace gpcseg
