#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gpcseg/core/error.hpp"
#include "gpcseg/core/tensor.hpp"
#include "gpcseg/data/case.hpp"

namespace gpcseg {

struct SamplerConfig {
  std::array<double, 4> class_probs{0.50, 0.20, 0.15, 0.15};
  std::int64_t patch_size = 80;

  void validate() const {
    double s = 0;
    for (double p : class_probs) {
      if (!(p >= 0)) throw ConfigError("sampler probabilities must be >= 0");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ConfigError("sampler probabilities must sum to 1");
    if (patch_size < 1) throw ConfigError("patch size must be >= 1");
  }
};

// Flat voxel indices per label class.
struct ClassIndex {
  Dims dims{};
  std::array<std::vector<std::int64_t>, 4> voxels;

  explicit ClassIndex(const LabelVolume& labels) : dims(labels.dims) {
    for (std::int64_t i = 0; i < labels.size(); ++i) {
      const auto v = labels.data[static_cast<std::size_t>(i)];
      if (v >= kNumClasses) throw ConfigError("invalid label value " + std::to_string(int(v)));
      voxels[v].push_back(i);
    }
  }

  // Probabilities renormalized over the classes present.
  std::array<double, 4> effective_probs(const SamplerConfig& cfg) const {
    std::array<double, 4> p{};
    double s = 0;
    for (int k = 0; k < 4; ++k) {
      p[k] = voxels[k].empty() ? 0.0 : cfg.class_probs[k];
      s += p[k];
    }
    if (s <= 0) {
      if (voxels[0].empty()) throw ConfigError("case has no voxels of any sampled class");
      return {1.0, 0.0, 0.0, 0.0};
    }
    for (auto& v : p) v /= s;
    return p;
  }
};

struct CenterSample {
  int cls = 0;
  Dims coord{};
};

inline CenterSample sample_center(const ClassIndex& idx, const SamplerConfig& cfg, Rng& rng) {
  if (idx.voxels[0].empty()) throw ConfigError("background class is empty");
  const auto p = idx.effective_probs(cfg);
  const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  int cls = 3;
  double acc = 0;
  for (int k = 0; k < 4; ++k) {
    acc += p[k];
    if (r < acc && p[k] > 0) {
      cls = k;
      break;
    }
  }
  while (p[cls] == 0) --cls;  // rounding at the top end
  const auto& list = idx.voxels[cls];
  const auto pick = std::uniform_int_distribution<std::size_t>(0, list.size() - 1)(rng);
  const auto flat = list[pick];
  const auto& d = idx.dims;
  return {cls, {flat / (d[1] * d[2]), (flat / d[2]) % d[1], flat % d[2]}};
}

inline CenterSample sample_center(const Case& c, const SamplerConfig& cfg, Rng& rng) {
  return sample_center(ClassIndex(c.label_volume()), cfg, rng);
}

// Window start per axis: centered, then clamped inside the volume.
inline Dims patch_origin(const Dims& dims, const Dims& center, std::int64_t size) {
  Dims o{};
  for (int a = 0; a < 3; ++a) {
    if (size > dims[a])
      throw ShapeError("patch size " + std::to_string(size) + " exceeds volume dim " + std::to_string(dims[a]));
    o[a] = std::clamp<std::int64_t>(center[a] - size / 2, 0, dims[a] - size);
  }
  return o;
}

struct Patch {
  Tensor<float> image;  // (C, s, s, s)
  LabelVolume labels;   // (s, s, s); empty dims when the case is unlabeled
  Dims origin{};
};

inline Patch extract_patch(const Case& c, const Dims& center, std::int64_t size) {
  const Dims dims = c.dims();
  if (size < 1) throw ShapeError("patch size must be >= 1");
  const Dims o = patch_origin(dims, center, size);
  const auto nc = static_cast<std::int64_t>(c.modalities.size());
  Patch p{Tensor<float>({nc, size, size, size}), LabelVolume({size, size, size}), o};
  auto out = p.image.data();
  const auto vol = size * size * size;
  for (std::int64_t ch = 0; ch < nc; ++ch) {
    const auto& src = c.modalities[static_cast<std::size_t>(ch)].volume;
    for (std::int64_t z = 0; z < size; ++z)
      for (std::int64_t y = 0; y < size; ++y) {
        const float* row = &src.data[src.index(o[0] + z, o[1] + y, o[2])];
        std::copy(row, row + size, out.begin() + ch * vol + (z * size + y) * size);
      }
  }
  if (c.labels) {
    for (std::int64_t z = 0; z < size; ++z)
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x)
          p.labels.at(z, y, x) = c.labels->at(o[0] + z, o[1] + y, o[2] + x);
  }
  return p;
}

// Whole case as a (C, D, H, W) tensor.
inline Tensor<float> case_tensor(const Case& c) {
  const Dims d = c.dims();
  const auto nc = static_cast<std::int64_t>(c.modalities.size());
  Tensor<float> t({nc, d[0], d[1], d[2]});
  auto out = t.data();
  const auto vol = d[0] * d[1] * d[2];
  for (std::int64_t ch = 0; ch < nc; ++ch) {
    const auto& src = c.modalities[static_cast<std::size_t>(ch)].volume.data;
    std::copy(src.begin(), src.end(), out.begin() + ch * vol);
  }
  return t;
}

// Integer labels for a batch, shape (N, D, H, W).
struct LabelBatch {
  Shape shape;
  std::vector<std::uint8_t> data;
};

struct Batch {
  Tensor<float> image;  // (N, C, s, s, s)
  LabelBatch labels;
  std::vector<CenterSample> centers;
  std::vector<std::size_t> case_index;
};

inline LabelBatch single_label_batch(const LabelVolume& l) {
  return {{1, l.dims[0], l.dims[1], l.dims[2]}, l.data};
}

// Draws `n` patches: uniform case, then class-balanced center.
inline Batch sample_batch(const std::vector<Case>& cases, const std::vector<ClassIndex>& index,
                          const SamplerConfig& cfg, std::int64_t n, Rng& rng) {
  if (cases.empty()) throw ConfigError("no training cases");
  if (index.size() != cases.size()) throw ConfigError("class index count differs from case count");
  cfg.validate();
  const auto s = cfg.patch_size;
  const auto nc = static_cast<std::int64_t>(cases.front().modalities.size());
  Batch b;
  b.image = Tensor<float>({n, nc, s, s, s});
  b.labels.shape = {n, s, s, s};
  b.labels.data.resize(static_cast<std::size_t>(n * s * s * s));
  auto out = b.image.data();
  const auto per = nc * s * s * s;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto ci = std::uniform_int_distribution<std::size_t>(0, cases.size() - 1)(rng);
    const auto c = sample_center(index[ci], cfg, rng);
    const auto p = extract_patch(cases[ci], c.coord, s);
    if (p.image.dim(0) != nc) throw ShapeError("cases differ in modality count");
    std::copy(p.image.data().begin(), p.image.data().end(), out.begin() + i * per);
    std::copy(p.labels.data.begin(), p.labels.data.end(), b.labels.data.begin() + i * s * s * s);
    b.centers.push_back(c);
    b.case_index.push_back(ci);
  }
  return b;
}

}  // namespace gpcseg
