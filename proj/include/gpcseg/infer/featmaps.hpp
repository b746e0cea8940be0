#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "gpcseg/data/volume.hpp"
#include "gpcseg/model/model.hpp"

namespace gpcseg {

struct FeatureSelector {
  int level = 0;
  Stage stage = Stage::gpc;
};

struct FeatureMapStack {
  std::string layer;
  Tensor<float> maps;  // (C, D', H', W')
  int level = 0;
  Stage stage = Stage::none;
};

// Every (level, stage) pair the model exposes, in node order.
inline std::vector<FeatureSelector> feature_selectors(const Model<float>& model) {
  std::vector<FeatureSelector> out;
  for (const auto& n : model.nodes())
    if (n.stage != Stage::none) out.push_back({n.level, n.stage});
  return out;
}

inline const Node<float>& feature_node(const Model<float>& model, const FeatureSelector& sel) {
  for (const auto& n : model.nodes())
    if (n.stage == sel.stage && n.level == sel.level) return n;
  std::string msg = "no feature map at level " + std::to_string(sel.level) + " stage " + stage_name(sel.stage) +
                    "; valid selectors:";
  const auto all = feature_selectors(model);
  if (all.empty()) msg += " none (model has no tagged stages)";
  for (const auto& s : all) msg += " " + std::to_string(s.level) + ":" + stage_name(s.stage);
  throw ConfigError(msg);
}

// Eval-mode forward on a (C, D, H, W) input, capturing the selected node.
inline FeatureMapStack extract_feature_maps(Model<float>& model, const Tensor<float>& x, const FeatureSelector& sel,
                                            Tensor<float>* logits = nullptr) {
  const auto& node = feature_node(model, sel);
  NoGradGuard ng;
  FeatureMapStack fm{node.name, {}, sel.level, sel.stage};
  auto out = model.forward(x, Mode::eval, [&](const Node<float>& n, const Tensor<float>& t) {
    if (&n == &node) fm.maps = t.clone();
  });
  if (logits) *logits = out;
  return fm;
}

// Channel indices by descending mean |activation|; ties to the lower index.
inline std::vector<std::int64_t> top_k_by_mean_abs(const Tensor<float>& maps, std::int64_t k = 4) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (maps.ndim() != 4) throw ShapeError("feature maps must be (C, D, H, W)");
  const auto c = maps.dim(0);
  const auto per = maps.numel() / c;
  const auto d = maps.data();
  std::vector<double> score(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0;
    for (std::int64_t i = 0; i < per; ++i) s += std::abs(static_cast<double>(d[static_cast<std::size_t>(ch * per + i)]));
    score[static_cast<std::size_t>(ch)] = s / static_cast<double>(per);
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(c));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(std::min(k, c)));
  return idx;
}

inline Volume<float> channel_volume(const Tensor<float>& maps, std::int64_t ch) {
  if (maps.ndim() != 4 || ch < 0 || ch >= maps.dim(0)) throw ShapeError("channel index out of range");
  Volume<float> v({maps.dim(1), maps.dim(2), maps.dim(3)});
  const auto d = maps.data();
  std::copy_n(d.begin() + ch * v.size(), v.size(), v.data.begin());
  return v;
}

struct GrayImage {
  std::int64_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Slice perpendicular to `axis` (0 = D, 1 = H, 2 = W), min-max scaled to
// 0..255 with rounding; a constant slice maps to 128.
inline GrayImage slice_image(const Volume<float>& v, int axis, std::int64_t index) {
  if (axis < 0 || axis > 2) throw ConfigError("slice axis must be 0, 1 or 2");
  if (index < 0 || index >= v.dims[axis])
    throw ShapeError("slice index " + std::to_string(index) + " out of bounds for axis of size " +
                     std::to_string(v.dims[axis]));
  const int ra = axis == 0 ? 1 : 0, ca = axis == 2 ? 1 : 2;
  GrayImage img{v.dims[ca], v.dims[ra], {}};
  std::vector<float> vals;
  vals.reserve(static_cast<std::size_t>(img.width * img.height));
  for (std::int64_t r = 0; r < img.height; ++r)
    for (std::int64_t c = 0; c < img.width; ++c) {
      Dims p{};
      p[axis] = index;
      p[ra] = r;
      p[ca] = c;
      vals.push_back(v.at(p[0], p[1], p[2]));
    }
  const auto [mn, mx] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *mn, hi = *mx;
  for (float f : vals)
    img.pixels.push_back(hi > lo ? static_cast<std::uint8_t>(std::lround((f - lo) / (hi - lo) * 255.0)) : 128);
  return img;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || !in || img.width < 1 || img.height < 1 || maxval != 255)
    throw FormatError("'" + path.string() + "' is not an 8-bit binary PGM");
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw FormatError("'" + path.string() + "' pixel data is truncated");
  return img;
}

inline void export_slice(const Volume<float>& v, int axis, std::int64_t index, const std::filesystem::path& path) {
  write_pgm(slice_image(v, axis, index), path);
}

}  // namespace gpcseg
