#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gpcseg/core/error.hpp"
#include "gpcseg/data/blob.hpp"
#include "gpcseg/data/case.hpp"
#include "gpcseg/data/volume.hpp"

// Uncompressed single-file NIfTI-1 (.nii), little-endian only.
// Datatypes: uint8 (2), int16 (4), float32 (16). File x/y/z map to W/H/D.

namespace gpcseg::nifti {

inline constexpr std::int16_t kUint8 = 2;
inline constexpr std::int16_t kInt16 = 4;
inline constexpr std::int16_t kFloat32 = 16;

struct Image {
  Volume<float> volume;
  std::array<double, 3> spacing_mm{1, 1, 1};  // (D, H, W)
  std::int16_t datatype = kFloat32;
};

namespace detail {
template <class V>
V get(const std::vector<char>& b, std::size_t off) {
  V v;
  std::memcpy(&v, b.data() + off, sizeof(V));
  return v;
}
template <class V>
void put(std::vector<char>& b, std::size_t off, V v) {
  std::memcpy(b.data() + off, &v, sizeof(V));
}
}  // namespace detail

inline Image read(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  const auto b = blob::read_bytes(path);
  const std::string name = path.filename().string();
  if (b.size() < 352) throw FormatError("NIfTI file '" + name + "' is shorter than its header");
  if (detail::get<std::int32_t>(b, 0) != 348) throw FormatError("'" + name + "' is not little-endian NIfTI-1");
  if (std::memcmp(b.data() + 344, "n+1", 4) != 0) throw FormatError("'" + name + "' lacks the n+1 magic");
  const auto ndim = detail::get<std::int16_t>(b, 40);
  if (ndim < 3 || ndim > 4) throw FormatError("'" + name + "' must be 3-D");
  if (ndim == 4 && detail::get<std::int16_t>(b, 48) > 1) throw FormatError("'" + name + "' has more than one frame");
  const std::int64_t nx = detail::get<std::int16_t>(b, 42), ny = detail::get<std::int16_t>(b, 44),
                     nz = detail::get<std::int16_t>(b, 46);
  if (nx < 1 || ny < 1 || nz < 1) throw FormatError("'" + name + "' has non-positive dims");
  const auto dtype = detail::get<std::int16_t>(b, 70);
  const auto offset = static_cast<std::size_t>(detail::get<float>(b, 108));
  float slope = detail::get<float>(b, 112), inter = detail::get<float>(b, 116);
  if (slope == 0.0f) {
    slope = 1.0f;
    inter = 0.0f;
  }
  std::size_t width = 0;
  switch (dtype) {
    case kUint8: width = 1; break;
    case kInt16: width = 2; break;
    case kFloat32: width = 4; break;
    default: throw FormatError("'" + name + "' has unsupported datatype " + std::to_string(dtype));
  }
  Image img;
  img.datatype = dtype;
  img.volume = Volume<float>({nz, ny, nx});
  const auto n = static_cast<std::size_t>(nx * ny * nz);
  if (b.size() < offset + n * width) throw FormatError("'" + name + "' voxel data is truncated");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = offset + i * width;
    double v = dtype == kUint8 ? static_cast<unsigned char>(b[o])
               : dtype == kInt16 ? detail::get<std::int16_t>(b, o)
                                 : detail::get<float>(b, o);
    if (dtype != kFloat32) v = v * slope + inter;
    img.volume.data[i] = static_cast<float>(v);
  }
  img.spacing_mm = {detail::get<float>(b, 88), detail::get<float>(b, 84), detail::get<float>(b, 80)};
  for (auto& s : img.spacing_mm)
    if (!(s > 0)) s = 1.0;
  return img;
}

inline void write(const std::filesystem::path& path, const Volume<float>& v, std::array<double, 3> spacing_mm,
                  std::int16_t dtype = kFloat32) {
  std::size_t width = dtype == kUint8 ? 1 : dtype == kInt16 ? 2 : dtype == kFloat32 ? 4 : 0;
  if (!width) throw FormatError("unsupported NIfTI datatype " + std::to_string(dtype));
  const auto n = v.data.size();
  std::vector<char> b(352 + n * width, 0);
  detail::put<std::int32_t>(b, 0, 348);
  detail::put<std::int16_t>(b, 40, 3);
  detail::put<std::int16_t>(b, 42, static_cast<std::int16_t>(v.dims[2]));
  detail::put<std::int16_t>(b, 44, static_cast<std::int16_t>(v.dims[1]));
  detail::put<std::int16_t>(b, 46, static_cast<std::int16_t>(v.dims[0]));
  for (int i = 4; i < 8; ++i) detail::put<std::int16_t>(b, 40 + 2 * i, 1);
  detail::put<std::int16_t>(b, 70, dtype);
  detail::put<std::int16_t>(b, 72, static_cast<std::int16_t>(width * 8));
  detail::put<float>(b, 76, 1.0f);
  detail::put<float>(b, 80, static_cast<float>(spacing_mm[2]));
  detail::put<float>(b, 84, static_cast<float>(spacing_mm[1]));
  detail::put<float>(b, 88, static_cast<float>(spacing_mm[0]));
  detail::put<float>(b, 108, 352.0f);
  std::memcpy(b.data() + 344, "n+1", 4);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = 352 + i * width;
    if (dtype == kUint8) b[o] = static_cast<char>(static_cast<std::uint8_t>(v.data[i]));
    else if (dtype == kInt16) detail::put<std::int16_t>(b, o, static_cast<std::int16_t>(v.data[i]));
    else detail::put<float>(b, o, v.data[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

// Challenge label codes (0 bg, 1 necrosis/non-enhancing, 2 edema, 4 enhancing)
// to internal (0 bg, 1 edema, 2 enhancing, 3 necrosis/non-enhancing).
inline std::uint8_t challenge_to_internal(int code) {
  switch (code) {
    case 0: return 0;
    case 1: return 3;
    case 2: return 1;
    case 4: return 2;
    default: throw FormatError("unknown challenge label code " + std::to_string(code));
  }
}

struct CaseFiles {
  std::string id;
  std::vector<std::pair<std::string, std::filesystem::path>> modalities;  // canonical name, file
  std::filesystem::path labels;                                            // empty when unlabeled
  bool challenge_codes = true;
};

inline Case read_case(const CaseFiles& f) {
  Case c;
  c.id = f.id;
  for (const auto& [name, path] : f.modalities) {
    auto img = read(path);
    c.spacing_mm = img.spacing_mm;
    c.modalities.push_back({name, std::move(img.volume)});
  }
  if (!f.labels.empty()) {
    const auto img = read(f.labels);
    LabelVolume lv(img.volume.dims);
    for (std::size_t i = 0; i < lv.data.size(); ++i) {
      const int code = static_cast<int>(std::lround(img.volume.data[i]));
      if (f.challenge_codes) lv.data[i] = challenge_to_internal(code);
      else if (code < 0 || code >= kNumClasses) throw ConfigError("invalid label value " + std::to_string(code));
      else lv.data[i] = static_cast<std::uint8_t>(code);
    }
    c.labels = std::move(lv);
  }
  validate_modality_names(c.modality_names());
  c.validate();
  return c;
}

}  // namespace gpcseg::nifti
