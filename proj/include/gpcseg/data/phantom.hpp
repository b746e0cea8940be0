#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpcseg/core/error.hpp"
#include "gpcseg/core/tensor.hpp"
#include "gpcseg/data/case.hpp"

namespace gpcseg {

using Radii = std::array<double, 3>;  // (D, H, W) semi-axes in voxels

// Rows: healthy, edema, enhancing, necrosis. Columns: t1, t1gd, t2, flair.
using IntensityTable = std::array<std::array<double, 4>, 4>;

inline IntensityTable default_intensities() {
  return {{{0.60, 0.60, 0.50, 0.50},
           {0.45, 0.50, 0.90, 1.00},
           {0.55, 1.00, 0.70, 0.75},
           {0.30, 0.30, 1.00, 0.60}}};
}

struct PhantomConfig {
  std::string id = "phantom";
  Dims dims{48, 48, 48};
  std::array<double, 3> center{23.5, 23.5, 23.5};  // tumor center, voxel coords
  Radii brain_radius{21, 21, 21};                  // brain ellipsoid, centered in the volume
  Radii edema_radius{12, 12, 12};
  Radii enhancing_radius{7, 7, 7};
  Radii necrosis_radius{4, 4, 4};
  IntensityTable intensities = default_intensities();
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw ConfigError("phantom dims must be positive");
      if (!(necrosis_radius[a] > 0)) throw ConfigError("phantom radii must be positive");
      if (!(necrosis_radius[a] < enhancing_radius[a] && enhancing_radius[a] < edema_radius[a]))
        throw ConfigError("phantom radii must be strictly nested: necrosis < enhancing < edema");
      if (!(edema_radius[a] < brain_radius[a])) throw ConfigError("phantom edema radius must be inside the brain");
      if (static_cast<double>(dims[a]) < 2.0 * brain_radius[a])
        throw ConfigError("phantom size must be at least twice the largest radius");
      const double mid = 0.5 * static_cast<double>(dims[a] - 1);
      if (std::abs(center[a] - mid) + edema_radius[a] > brain_radius[a])
        throw ConfigError("phantom tumor extends outside the brain");
    }
    if (!(noise_sigma >= 0)) throw ConfigError("phantom noise sigma must be >= 0");
  }
};

namespace detail {
inline bool inside(const std::array<double, 3>& p, const std::array<double, 3>& c, const Radii& r) {
  double s = 0;
  for (int a = 0; a < 3; ++a) {
    const double q = (p[a] - c[a]) / r[a];
    s += q * q;
  }
  return s <= 1.0;
}
}  // namespace detail

// Label of the voxel at p under the nested-ellipsoid model; 255 outside the brain.
inline std::uint8_t phantom_class(const PhantomConfig& cfg, const std::array<double, 3>& p) {
  if (detail::inside(p, cfg.center, cfg.necrosis_radius)) return 3;
  if (detail::inside(p, cfg.center, cfg.enhancing_radius)) return 2;
  if (detail::inside(p, cfg.center, cfg.edema_radius)) return 1;
  std::array<double, 3> mid{};
  for (int a = 0; a < 3; ++a) mid[a] = 0.5 * static_cast<double>(cfg.dims[a] - 1);
  return detail::inside(p, mid, cfg.brain_radius) ? 0 : 255;
}

inline Case generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  Case c;
  c.id = cfg.id;
  LabelVolume labels(cfg.dims);
  std::vector<std::uint8_t> tissue(static_cast<std::size_t>(labels.size()));
  for (std::int64_t z = 0; z < cfg.dims[0]; ++z)
    for (std::int64_t y = 0; y < cfg.dims[1]; ++y)
      for (std::int64_t x = 0; x < cfg.dims[2]; ++x) {
        const auto cls = phantom_class(cfg, {double(z), double(y), double(x)});
        const auto i = labels.index(z, y, x);
        tissue[i] = cls;
        labels.data[i] = cls == 255 ? 0 : cls;
      }
  Rng rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int m = 0; m < 4; ++m) {
    Volume<float> v(cfg.dims);
    for (std::size_t i = 0; i < tissue.size(); ++i) {
      const double n = noise(rng);
      if (tissue[i] == 255) continue;
      double val = cfg.intensities[tissue[i]][m] + cfg.noise_sigma * n;
      // brain voxels stay strictly positive so background remains the only zero
      v.data[i] = static_cast<float>(std::max(val, 1e-3));
    }
    c.modalities.push_back({canonical_modalities()[m], std::move(v)});
  }
  c.labels = std::move(labels);
  return c;
}

struct PhantomSetConfig {
  int count = 10;
  Dims dims{48, 48, 48};
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  std::string id_prefix = "phantom";
};

// Case i draws its radii, anisotropy and offset from seed + i.
inline PhantomConfig phantom_variant(const PhantomSetConfig& s, int i) {
  if (s.count < 1) throw ConfigError("phantom count must be >= 1");
  Rng rng(s.seed + static_cast<std::uint64_t>(i));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PhantomConfig p;
  p.dims = s.dims;
  p.noise_sigma = s.noise_sigma;
  p.seed = rng();
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03d", i);
  p.id = s.id_prefix + buf;
  const double edema_frac = 0.20 + 0.08 * u(rng);
  const double enh_frac = 0.58 + 0.10 * u(rng);
  const double nec_frac = 0.40 + 0.15 * u(rng);
  for (int a = 0; a < 3; ++a) {
    const double dim = static_cast<double>(s.dims[a]);
    const double aniso = 0.85 + 0.30 * u(rng);
    p.brain_radius[a] = 0.45 * dim;
    p.edema_radius[a] = edema_frac * dim * aniso;
    p.enhancing_radius[a] = p.edema_radius[a] * enh_frac;
    p.necrosis_radius[a] = p.enhancing_radius[a] * nec_frac;
    const double slack = std::max(0.0, p.brain_radius[a] - p.edema_radius[a] - 1.0);
    const double mid = 0.5 * (dim - 1);
    p.center[a] = mid + (2.0 * u(rng) - 1.0) * std::min(slack, 0.1 * dim);
  }
  return p;
}

inline std::vector<Case> generate_phantom_set(const PhantomSetConfig& s) {
  std::vector<Case> out;
  for (int i = 0; i < s.count; ++i) out.push_back(generate_phantom(phantom_variant(s, i)));
  return out;
}

}  // namespace gpcseg
