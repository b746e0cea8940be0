#pragma once

#include <cmath>
#include <limits>

#include "gpcseg/core/ops.hpp"

namespace gpcseg {

enum class Activation { relu, elu };

inline const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "elu"; }

// relu: max(0, x), subgradient 0 at the kink. elu: alpha = 1.
template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  const auto xs = x.data();
  auto ys = y.data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] > T(0) ? xs[i] : T(0);
  } else {
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] > T(0) ? xs[i] : std::expm1(xs[i]);
  }
  if (detail::needs_record({x.requires_grad()})) {
    detail::record(y, [kind, xi = x.impl_ptr(), yi = y.impl()](std::span<const T> g) {
      auto gx = detail::grad_of(xi);
      const auto& xv = xi->data;
      if (kind == Activation::relu) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > T(0)) gx[i] += g[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += xv[i] > T(0) ? g[i] : g[i] * (yi->data[i] + T(1));
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}
template <class T>
Tensor<T> elu(const Tensor<T>& x) {
  return activation(x, Activation::elu);
}

// Softmax over the channel axis (axis 0 of a 4-D tensor, axis 1 of a 5-D
// batch), stabilized by subtracting the per-voxel maximum.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const auto l = volume_layout(x.shape(), "softmax_channels");
  const auto sp = l.spatial();
  Tensor<T> y(x.shape());
  const auto xs = x.data();
  auto ys = y.data();
  parallel_for(l.n, [&](std::int64_t n) {
    const T* src = xs.data() + n * l.c * sp;
    T* dst = ys.data() + n * l.c * sp;
    for (std::int64_t v = 0; v < sp; ++v) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t c = 0; c < l.c; ++c) mx = std::max(mx, src[c * sp + v]);
      double z = 0.0;
      for (std::int64_t c = 0; c < l.c; ++c) {
        const double e = std::exp(static_cast<double>(src[c * sp + v] - mx));
        dst[c * sp + v] = static_cast<T>(e);
        z += e;
      }
      for (std::int64_t c = 0; c < l.c; ++c)
        dst[c * sp + v] = static_cast<T>(static_cast<double>(dst[c * sp + v]) / z);
    }
  });
  if (detail::needs_record({x.requires_grad()})) {
    detail::record(y, [l, sp, xi = x.impl_ptr(), yi = y.impl()](std::span<const T> g) {
      auto gx = detail::grad_of(xi);
      const auto& p = yi->data;
      for (std::int64_t n = 0; n < l.n; ++n)
        for (std::int64_t v = 0; v < sp; ++v) {
          const auto base = n * l.c * sp + v;
          double dot = 0.0;
          for (std::int64_t c = 0; c < l.c; ++c)
            dot += static_cast<double>(g[base + c * sp]) * static_cast<double>(p[base + c * sp]);
          for (std::int64_t c = 0; c < l.c; ++c) {
            const auto k = static_cast<std::size_t>(base + c * sp);
            gx[k] += static_cast<T>(static_cast<double>(p[k]) * (static_cast<double>(g[k]) - dot));
          }
        }
    });
  }
  return y;
}

}  // namespace gpcseg
