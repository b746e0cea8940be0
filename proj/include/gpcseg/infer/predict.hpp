#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "gpcseg/data/case.hpp"
#include "gpcseg/data/sampler.hpp"
#include "gpcseg/model/model.hpp"
#include "gpcseg/nn/activation.hpp"

namespace gpcseg {

// (4, D, H, W) softmax probabilities.
using ProbabilityVolume = Tensor<float>;

enum class PredictMode { full, sliding };

struct PredictOptions {
  PredictMode mode = PredictMode::full;
  std::int64_t window = 80;   // sliding only
  std::int64_t overlap = 16;  // sliding only, voxels shared by neighbouring windows
};

namespace detail {

inline Tensor<float> pad_volume(const Tensor<float>& x, const Dims& lo, const Dims& size) {
  const auto c = x.dim(0);
  Tensor<float> out({c, size[0], size[1], size[2]});
  const auto src = x.data();
  auto dst = out.data();
  const auto d = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t z = 0; z < d; ++z)
      for (std::int64_t y = 0; y < h; ++y)
        std::copy_n(src.begin() + ((ch * d + z) * h + y) * w, w,
                    dst.begin() + ((ch * size[0] + z + lo[0]) * size[1] + y + lo[1]) * size[2] + lo[2]);
  return out;
}

inline Tensor<float> crop_volume(const Tensor<float>& x, const Dims& lo, const Dims& size) {
  const auto c = x.dim(0);
  const auto H = x.dim(2), W = x.dim(3);
  Tensor<float> out({c, size[0], size[1], size[2]});
  const auto src = x.data();
  auto dst = out.data();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t z = 0; z < size[0]; ++z)
      for (std::int64_t y = 0; y < size[1]; ++y)
        std::copy_n(src.begin() + ((ch * x.dim(1) + z + lo[0]) * H + y + lo[1]) * W + lo[2], size[2],
                    dst.begin() + ((ch * size[0] + z) * size[1] + y) * size[2]);
  return out;
}

inline std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

// Window starts covering [0, n) with stride window - overlap; last flush to the end.
inline std::vector<std::int64_t> window_starts(std::int64_t n, std::int64_t window, std::int64_t overlap) {
  std::vector<std::int64_t> s;
  const auto step = window - overlap;
  for (std::int64_t p = 0;; p += step) {
    if (p + window >= n) {
      s.push_back(std::max<std::int64_t>(n - window, 0));
      break;
    }
    s.push_back(p);
  }
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

}  // namespace detail

// Eval-mode probabilities for a (C, D, H, W) input. Non-divisible volumes are
// zero-padded symmetrically (extra voxel on the high side) and cropped back.
inline ProbabilityVolume predict_tensor(Model<float>& model, const Tensor<float>& x, const PredictOptions& opt = {}) {
  NoGradGuard ng;
  if (x.ndim() != 4) throw ShapeError("predict expects a (C, D, H, W) volume");
  if (x.dim(0) != model.config().in_channels)
    throw ShapeError("model expects " + std::to_string(model.config().in_channels) + " modalities, case has " +
                     std::to_string(x.dim(0)));
  const auto div = model.config().divisor();
  const Dims dims{x.dim(1), x.dim(2), x.dim(3)};
  if (opt.mode == PredictMode::full) {
    Dims padded{}, lo{};
    for (int a = 0; a < 3; ++a) {
      padded[a] = detail::round_up(dims[a], div);
      lo[a] = (padded[a] - dims[a]) / 2;
    }
    const bool pad = padded != dims;
    const auto in = pad ? detail::pad_volume(x, lo, padded) : x;
    auto p = softmax_channels(model.forward(in, Mode::eval));
    return pad ? detail::crop_volume(p, lo, dims) : p;
  }
  if (opt.window < 1 || opt.window % div)
    throw ShapeError("sliding window " + std::to_string(opt.window) + " must be a positive multiple of " +
                     std::to_string(div));
  if (opt.overlap < 0 || opt.overlap >= opt.window) throw ConfigError("overlap must be in [0, window)");
  // volumes smaller than the window are padded up to it
  Dims padded{}, lo{};
  for (int a = 0; a < 3; ++a) {
    padded[a] = std::max(dims[a], opt.window);
    lo[a] = (padded[a] - dims[a]) / 2;
  }
  const bool pad = padded != dims;
  const auto in = pad ? detail::pad_volume(x, lo, padded) : x;
  const auto nc = static_cast<std::int64_t>(model.config().num_classes);
  const auto c = in.dim(0);
  const auto W = opt.window;
  std::vector<double> acc(static_cast<std::size_t>(nc * padded[0] * padded[1] * padded[2]), 0.0);
  std::vector<std::int32_t> hits(static_cast<std::size_t>(padded[0] * padded[1] * padded[2]), 0);
  const auto src = in.data();
  for (auto z0 : detail::window_starts(padded[0], W, opt.overlap))
    for (auto y0 : detail::window_starts(padded[1], W, opt.overlap))
      for (auto x0 : detail::window_starts(padded[2], W, opt.overlap)) {
        Tensor<float> win({c, W, W, W});
        auto wd = win.data();
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t z = 0; z < W; ++z)
            for (std::int64_t y = 0; y < W; ++y)
              std::copy_n(src.begin() + ((ch * padded[0] + z0 + z) * padded[1] + y0 + y) * padded[2] + x0, W,
                          wd.begin() + ((ch * W + z) * W + y) * W);
        const auto p = softmax_channels(model.forward(win, Mode::eval));
        const auto pd = p.data();
        for (std::int64_t z = 0; z < W; ++z)
          for (std::int64_t y = 0; y < W; ++y)
            for (std::int64_t xx = 0; xx < W; ++xx) {
              const auto v = ((z0 + z) * padded[1] + y0 + y) * padded[2] + x0 + xx;
              ++hits[static_cast<std::size_t>(v)];
              for (std::int64_t k = 0; k < nc; ++k)
                acc[static_cast<std::size_t>(k * padded[0] * padded[1] * padded[2] + v)] +=
                    pd[static_cast<std::size_t>(((k * W + z) * W + y) * W + xx)];
            }
      }
  Tensor<float> out({nc, padded[0], padded[1], padded[2]});
  auto od = out.data();
  const auto vol = padded[0] * padded[1] * padded[2];
  for (std::int64_t k = 0; k < nc; ++k)
    for (std::int64_t v = 0; v < vol; ++v)
      od[static_cast<std::size_t>(k * vol + v)] =
          static_cast<float>(acc[static_cast<std::size_t>(k * vol + v)] / hits[static_cast<std::size_t>(v)]);
  return pad ? detail::crop_volume(out, lo, dims) : out;
}

inline ProbabilityVolume predict(Model<float>& model, const Case& c, const PredictOptions& opt = {}) {
  return predict_tensor(model, case_tensor(c), opt);
}

// Per-voxel, per-class mean. Each voxel's values are summed in sorted order,
// so the result does not depend on the order of the inputs.
inline ProbabilityVolume ensemble(const std::vector<ProbabilityVolume>& vols) {
  if (vols.empty()) throw ConfigError("ensemble needs at least one probability volume");
  for (const auto& v : vols)
    if (v.shape() != vols.front().shape())
      throw ShapeError("ensemble inputs differ in shape: " + to_string(v.shape()) + " vs " +
                       to_string(vols.front().shape()));
  if (vols.size() == 1) return vols.front().clone();
  Tensor<float> out(vols.front().shape());
  auto od = out.data();
  const auto n = static_cast<std::int64_t>(od.size());
  const auto m = vols.size();
  parallel_for(n, [&](std::int64_t i) {
    double buf[16];
    std::vector<double> big;
    double* vals = buf;
    if (m > 16) {
      big.resize(m);
      vals = big.data();
    }
    for (std::size_t k = 0; k < m; ++k) vals[k] = vols[k][static_cast<std::size_t>(i)];
    std::sort(vals, vals + m);
    double s = 0;
    for (std::size_t k = 0; k < m; ++k) s += vals[k];
    od[static_cast<std::size_t>(i)] = static_cast<float>(s / static_cast<double>(m));
  });
  return out;
}

// Per-voxel argmax over channels; ties go to the lowest class index.
inline LabelVolume argmax_seg(const ProbabilityVolume& pv) {
  if (pv.ndim() != 4) throw ShapeError("argmax_seg expects (C, D, H, W)");
  const auto c = pv.dim(0);
  LabelVolume out({pv.dim(1), pv.dim(2), pv.dim(3)});
  const auto vol = out.size();
  const auto d = pv.data();
  for (std::int64_t v = 0; v < vol; ++v) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < c; ++k)
      if (d[static_cast<std::size_t>(k * vol + v)] > d[static_cast<std::size_t>(best * vol + v)]) best = k;
    out.data[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Largest deviation of a per-voxel channel sum from 1.
inline float max_channel_sum_error(const ProbabilityVolume& pv) {
  const auto c = pv.dim(0);
  const auto vol = pv.numel() / c;
  const auto d = pv.data();
  double worst = 0;
  for (std::int64_t v = 0; v < vol; ++v) {
    double s = 0;
    for (std::int64_t k = 0; k < c; ++k) s += d[static_cast<std::size_t>(k * vol + v)];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return static_cast<float>(worst);
}

}  // namespace gpcseg
