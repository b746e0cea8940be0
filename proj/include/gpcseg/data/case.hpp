#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gpcseg/core/error.hpp"
#include "gpcseg/data/blob.hpp"
#include "gpcseg/data/volume.hpp"

namespace gpcseg {

inline constexpr int kCaseFormatVersion = 1;
inline constexpr int kNumClasses = 4;

inline const std::array<std::string, 4>& canonical_modalities() {
  static const std::array<std::string, 4> names{"t1", "t1gd", "t2", "flair"};
  return names;
}

inline const std::array<std::string, 4>& label_legend() {
  static const std::array<std::string, 4> names{"background", "edema", "enhancing", "necrosis"};
  return names;
}

// Throws ConfigError on unknown or duplicated names, or names out of canonical order.
inline void validate_modality_names(const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("at least one modality is required");
  const auto& canon = canonical_modalities();
  std::ptrdiff_t last = -1;
  for (const auto& n : names) {
    const auto it = std::find(canon.begin(), canon.end(), n);
    if (it == canon.end()) throw ConfigError("unknown modality '" + n + "' (expected t1, t1gd, t2, flair)");
    const auto pos = it - canon.begin();
    if (pos <= last) throw ConfigError("modalities must be unique and in order t1, t1gd, t2, flair");
    last = pos;
  }
}

struct Modality {
  std::string name;
  Volume<float> volume;
};

struct Case {
  std::string id;
  std::vector<Modality> modalities;
  std::optional<LabelVolume> labels;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};  // (D, H, W)

  Dims dims() const {
    if (!modalities.empty()) return modalities.front().volume.dims;
    if (labels) return labels->dims;
    throw ShapeError("case '" + id + "' has no volumes");
  }

  std::vector<std::string> modality_names() const {
    std::vector<std::string> out;
    for (const auto& m : modalities) out.push_back(m.name);
    return out;
  }

  const Volume<float>& modality(const std::string& name) const {
    for (const auto& m : modalities)
      if (m.name == name) return m.volume;
    throw ConfigError("case '" + id + "' has no modality '" + name + "'");
  }

  bool has_modality(const std::string& name) const {
    return std::any_of(modalities.begin(), modalities.end(), [&](const Modality& m) { return m.name == name; });
  }

  const LabelVolume& label_volume() const {
    if (!labels) throw ConfigError("case '" + id + "' has no labels");
    return *labels;
  }

  // Keeps only the named modalities, in the given order.
  Case select(const std::vector<std::string>& names) const {
    Case out{id, {}, labels, spacing_mm};
    for (const auto& n : names) out.modalities.push_back({n, modality(n)});
    return out;
  }

  void validate() const {
    if (id.empty()) throw ConfigError("case id is empty");
    const Dims d = dims();
    for (const auto& m : modalities) {
      if (m.volume.dims != d) throw ShapeError("modality '" + m.name + "' dims differ within case '" + id + "'");
      if (static_cast<std::int64_t>(m.volume.data.size()) != m.volume.size())
        throw ShapeError("modality '" + m.name + "' has wrong voxel count");
    }
    if (labels) {
      if (labels->dims != d) throw ShapeError("label dims differ within case '" + id + "'");
      for (auto v : labels->data)
        if (v >= kNumClasses)
          throw ConfigError("case '" + id + "' has invalid label value " + std::to_string(int(v)));
    }
    for (double s : spacing_mm)
      if (!(s > 0)) throw ConfigError("spacing must be positive");
  }

  bool operator==(const Case& o) const {
    if (id != o.id || spacing_mm != o.spacing_mm || labels != o.labels) return false;
    if (modalities.size() != o.modalities.size()) return false;
    for (std::size_t i = 0; i < modalities.size(); ++i)
      if (modalities[i].name != o.modalities[i].name || modalities[i].volume != o.modalities[i].volume) return false;
    return true;
  }
};

// Writes <dir>/manifest.json plus one blob per volume.
inline void save_case(const Case& c, const std::filesystem::path& dir) {
  c.validate();
  std::filesystem::create_directories(dir);
  const Dims d = c.dims();
  nlohmann::json m;
  m["format_version"] = kCaseFormatVersion;
  m["id"] = c.id;
  m["dims"] = {d[0], d[1], d[2]};
  m["spacing_mm"] = {c.spacing_mm[0], c.spacing_mm[1], c.spacing_mm[2]};
  m["modalities"] = nlohmann::json::array();
  for (const auto& mod : c.modalities) {
    const std::string file = mod.name + ".f32";
    blob::write_f32(dir / file, mod.volume.data);
    m["modalities"].push_back({{"name", mod.name}, {"file", file}});
  }
  if (c.labels) {
    blob::write_u8(dir / "labels.u8", c.labels->data);
    m["labels"] = {{"file", "labels.u8"},
                   {"legend", {label_legend()[0], label_legend()[1], label_legend()[2], label_legend()[3]}}};
  } else {
    m["labels"] = nullptr;
  }
  blob::write_json(dir / "manifest.json", m);
}

inline Case load_case(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  const auto m = blob::read_json(path);
  Case c;
  try {
    if (!m.is_object()) throw FormatError("manifest is not an object");
    const int version = m.at("format_version").get<int>();
    if (version != kCaseFormatVersion)
      throw FormatError("unsupported case format_version " + std::to_string(version));
    c.id = m.at("id").get<std::string>();
    const auto dv = m.at("dims").get<std::vector<std::int64_t>>();
    if (dv.size() != 3 || dv[0] < 1 || dv[1] < 1 || dv[2] < 1) throw FormatError("manifest dims must be 3 positive ints");
    const Dims d{dv[0], dv[1], dv[2]};
    const auto sp = m.at("spacing_mm").get<std::vector<double>>();
    if (sp.size() != 3) throw FormatError("spacing_mm must have 3 entries");
    c.spacing_mm = {sp[0], sp[1], sp[2]};
    const auto count = static_cast<std::size_t>(d[0] * d[1] * d[2]);
    for (const auto& e : m.at("modalities")) {
      Modality mod{e.at("name").get<std::string>(), Volume<float>(d)};
      mod.volume.data = blob::read_f32(dir / e.at("file").get<std::string>(), count, mod.name);
      c.modalities.push_back(std::move(mod));
    }
    const auto& lab = m.at("labels");
    if (!lab.is_null()) {
      LabelVolume lv(d);
      lv.data = blob::read_u8(dir / lab.at("file").get<std::string>(), count, "labels");
      c.labels = std::move(lv);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt manifest '" + path.string() + "': " + e.what());
  }
  if (!c.modalities.empty()) validate_modality_names(c.modality_names());
  else if (!c.labels) throw FormatError("case '" + c.id + "' has neither modalities nor labels");
  c.validate();
  return c;
}

}  // namespace gpcseg
