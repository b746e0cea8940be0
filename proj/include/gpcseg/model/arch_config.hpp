#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpcseg/core/error.hpp"

namespace gpcseg {

enum class ArchKind { unet, resunet, contextnet };

inline const char* arch_kind_name(ArchKind k) {
  switch (k) {
    case ArchKind::unet: return "unet";
    case ArchKind::resunet: return "resunet";
    case ArchKind::contextnet: return "contextnet";
  }
  return "?";
}

inline ArchKind parse_arch_kind(const std::string& s) {
  if (s == "unet") return ArchKind::unet;
  if (s == "resunet") return ArchKind::resunet;
  if (s == "contextnet") return ArchKind::contextnet;
  throw ConfigError("unknown architecture kind '" + s + "' (expected unet, resunet or contextnet)");
}

// JSON keys are the field names below.
struct ArchConfig {
  ArchKind kind = ArchKind::contextnet;
  int in_channels = 4;
  int num_classes = 4;
  int levels = 4;
  std::vector<int> filters_per_level{8, 16, 32, 64};
  int gpc_out_channels = 15;
  int gpc_kernel = 15;
  // Uniform width multiplier applied to filters_per_level and
  // gpc_out_channels; topology is unchanged.
  double base_filter_scale = 1.0;

  static int scaled(int width, double factor) {
    return std::max(1, static_cast<int>(std::lround(width * factor)));
  }

  std::vector<int> widths() const {
    std::vector<int> w;
    for (int f : filters_per_level) w.push_back(scaled(f, base_filter_scale));
    return w;
  }
  int gpc_width() const { return scaled(gpc_out_channels, base_filter_scale); }

  // Spatial dims of a forward input must be multiples of this.
  std::int64_t divisor() const { return std::int64_t(1) << (levels - 1); }

  void validate() const {
    if (in_channels < 2 || in_channels > 4)
      throw ConfigError("in_channels must be in 2..4, got " + std::to_string(in_channels));
    if (num_classes != 4) throw ConfigError("num_classes must be 4");
    if (levels < 2 || levels > 4) throw ConfigError("levels must be in 2..4, got " + std::to_string(levels));
    if (static_cast<int>(filters_per_level.size()) != levels)
      throw ConfigError("filters_per_level has " + std::to_string(filters_per_level.size()) +
                        " entries but levels is " + std::to_string(levels));
    for (std::size_t i = 0; i < filters_per_level.size(); ++i) {
      if (filters_per_level[i] < 1) throw ConfigError("filters_per_level entries must be >= 1");
      if (i > 0 && filters_per_level[i] < filters_per_level[i - 1])
        throw ConfigError("filters_per_level must be non-decreasing with depth");
    }
    if (!(base_filter_scale > 0.0)) throw ConfigError("base_filter_scale must be positive");
    if (kind == ArchKind::contextnet) {
      if (gpc_out_channels < 1) throw ConfigError("contextnet requires gpc_out_channels >= 1");
      if (gpc_kernel < 1) throw ConfigError("contextnet requires gpc_kernel >= 1");
    }
  }

  bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& c) {
  j = nlohmann::json{{"kind", arch_kind_name(c.kind)},
                     {"in_channels", c.in_channels},
                     {"num_classes", c.num_classes},
                     {"levels", c.levels},
                     {"filters_per_level", c.filters_per_level},
                     {"gpc_out_channels", c.gpc_out_channels},
                     {"gpc_kernel", c.gpc_kernel},
                     {"base_filter_scale", c.base_filter_scale}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ArchConfig& c) {
  if (!j.is_object()) throw ConfigError("architecture config must be a JSON object");
  static const char* known[] = {"kind", "in_channels", "num_classes", "levels", "filters_per_level",
                                "gpc_out_channels", "gpc_kernel", "base_filter_scale"};
  for (const auto& [key, _] : j.items())
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known))
      throw ConfigError("unknown architecture key '" + key + "'");
  try {
    if (j.contains("kind")) c.kind = parse_arch_kind(j.at("kind").get<std::string>());
    if (j.contains("in_channels")) c.in_channels = j.at("in_channels").get<int>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
    if (j.contains("levels")) c.levels = j.at("levels").get<int>();
    if (j.contains("filters_per_level")) c.filters_per_level = j.at("filters_per_level").get<std::vector<int>>();
    if (j.contains("gpc_out_channels")) c.gpc_out_channels = j.at("gpc_out_channels").get<int>();
    if (j.contains("gpc_kernel")) c.gpc_kernel = j.at("gpc_kernel").get<int>();
    if (j.contains("base_filter_scale")) c.base_filter_scale = j.at("base_filter_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture config: ") + e.what());
  }
}

// Reference widths for the full-size networks. UNet/ResUNet use
// [16,32,64,96]; ContextNet with 4 levels uses [8,16,32,64]; the reduced
// ContextNets use [16,32,64] and [32,64].
inline ArchConfig reference_config(ArchKind kind, int levels = 4) {
  ArchConfig c;
  c.kind = kind;
  c.levels = levels;
  if (kind != ArchKind::contextnet) {
    if (levels != 4) throw ConfigError("reference UNet/ResUNet configs have 4 levels");
    c.filters_per_level = {16, 32, 64, 96};
    return c;
  }
  switch (levels) {
    case 2: c.filters_per_level = {32, 64}; break;
    case 3: c.filters_per_level = {16, 32, 64}; break;
    case 4: c.filters_per_level = {8, 16, 32, 64}; break;
    default: throw ConfigError("reference ContextNet configs have 2, 3 or 4 levels");
  }
  return c;
}

}  // namespace gpcseg
