#pragma once

#include <string>
#include <vector>

#include "gpcseg/core/ops.hpp"

namespace gpcseg {

// Max over non-overlapping windows. Spatial dims must be divisible by the
// stride. Gradient routes to the first maximum in scan order.
template <class T>
Tensor<T> maxpool3d(const Tensor<T>& x, std::int64_t window = 2, std::int64_t stride = 2) {
  if (window < 1 || stride < 1) throw ShapeError("maxpool3d: window and stride must be >= 1");
  const auto l = volume_layout(x.shape(), "maxpool3d");
  for (auto d : {l.d, l.h, l.w})
    if (d % stride != 0 || d < window)
      throw ShapeError("maxpool3d: spatial dims " + to_string({l.d, l.h, l.w}) + " not divisible by stride " +
                       std::to_string(stride));
  const VolumeLayout o{l.n, l.c, (l.d - window) / stride + 1, (l.h - window) / stride + 1,
                       (l.w - window) / stride + 1};
  Tensor<T> y(o.shape_like(x.ndim(), l.c));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(y.numel()));
  const auto xs = x.data();
  auto ys = y.data();
  const auto planes = l.n * l.c;
  parallel_for(planes, [&](std::int64_t p) {
    const T* src = xs.data() + p * l.spatial();
    const auto ybase = p * o.spatial();
    for (std::int64_t od = 0; od < o.d; ++od)
      for (std::int64_t oh = 0; oh < o.h; ++oh)
        for (std::int64_t ow = 0; ow < o.w; ++ow) {
          std::int64_t best = -1;
          T best_v = T(0);
          for (std::int64_t a = 0; a < window; ++a)
            for (std::int64_t b = 0; b < window; ++b)
              for (std::int64_t c = 0; c < window; ++c) {
                const auto idx = ((od * stride + a) * l.h + oh * stride + b) * l.w + ow * stride + c;
                if (best < 0 || src[idx] > best_v) {
                  best = idx;
                  best_v = src[idx];
                }
              }
          const auto yi = ybase + (od * o.h + oh) * o.w + ow;
          ys[static_cast<std::size_t>(yi)] = best_v;
          (*argmax)[static_cast<std::size_t>(yi)] = p * l.spatial() + best;
        }
  });
  if (detail::needs_record({x.requires_grad()})) {
    detail::record(y, [argmax, xi = x.impl_ptr()](std::span<const T> g) {
      auto gx = detail::grad_of(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[static_cast<std::size_t>((*argmax)[i])] += g[i];
    });
  }
  return y;
}

}  // namespace gpcseg
