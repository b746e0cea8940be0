#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "json.hpp"

#include "gpcseg/core/ops.hpp"
#include "gpcseg/model/layers.hpp"

namespace gpcseg {

struct LossConfig {
  double l1_coeff = 1e-6;
  double l2_coeff = 1e-4;

  void validate() const {
    if (!(l1_coeff >= 0) || !(l2_coeff >= 0)) throw ConfigError("penalty coefficients must be >= 0");
  }
};

// Mean over all voxels of -log softmax(logits)[label]. Logits are
// (C, D, H, W) or (N, C, D, H, W); labels hold N*D*H*W class ids.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const auto l = volume_layout(logits.shape(), "cross_entropy");
  const auto sp = l.spatial();
  if (static_cast<std::int64_t>(labels.size()) != l.n * sp)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  for (auto v : labels)
    if (v >= l.c) throw ConfigError("cross_entropy: label " + std::to_string(int(v)) + " out of range");
  const auto xs = logits.data();
  const auto count = l.n * sp;
  std::vector<double> per(static_cast<std::size_t>(count));
  parallel_for(l.n, [&](std::int64_t n) {
    const T* src = xs.data() + n * l.c * sp;
    for (std::int64_t v = 0; v < sp; ++v) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < l.c; ++c) mx = std::max(mx, static_cast<double>(src[c * sp + v]));
      double z = 0;
      for (std::int64_t c = 0; c < l.c; ++c) z += std::exp(static_cast<double>(src[c * sp + v]) - mx);
      const auto y = labels[static_cast<std::size_t>(n * sp + v)];
      per[static_cast<std::size_t>(n * sp + v)] = std::log(z) + mx - static_cast<double>(src[y * sp + v]);
    }
  });
  double total = 0;
  for (double p : per) total += p;
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) throw NumericalError("cross_entropy is not finite");
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
  if (detail::needs_record({logits.requires_grad()})) {
    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    detail::record(out, [l, sp, count, lab = std::move(lab), xi = logits.impl_ptr()](std::span<const T> g) {
      auto gx = detail::grad_of(xi);
      const auto& x = xi->data;
      const double scale = static_cast<double>(g[0]) / static_cast<double>(count);
      parallel_for(l.n, [&](std::int64_t n) {
        const std::int64_t base = n * l.c * sp;
        for (std::int64_t v = 0; v < sp; ++v) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::int64_t c = 0; c < l.c; ++c) mx = std::max(mx, static_cast<double>(x[base + c * sp + v]));
          double z = 0;
          for (std::int64_t c = 0; c < l.c; ++c) z += std::exp(static_cast<double>(x[base + c * sp + v]) - mx);
          const auto y = lab[static_cast<std::size_t>(n * sp + v)];
          for (std::int64_t c = 0; c < l.c; ++c) {
            const double p = std::exp(static_cast<double>(x[base + c * sp + v]) - mx) / z;
            gx[base + c * sp + v] += static_cast<T>(scale * (p - (c == y ? 1.0 : 0.0)));
          }
        }
      });
    });
  }
  return out;
}

// l1 * sum|w| + l2 * sum w^2 over tensors whose role is `weight`.
template <class T>
Tensor<T> penalty(const std::vector<NamedTensor<T>>& params, const LossConfig& cfg) {
  cfg.validate();
  std::vector<Tensor<T>> weights;
  for (const auto& p : params)
    if (p.role == ParamRole::weight) weights.push_back(p.tensor);
  double l1 = 0, l2 = 0;
  for (const auto& w : weights)
    for (T v : w.data()) {
      l1 += std::abs(static_cast<double>(v));
      l2 += static_cast<double>(v) * static_cast<double>(v);
    }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(cfg.l1_coeff * l1 + cfg.l2_coeff * l2));
  bool any = false;
  for (const auto& w : weights) any = any || w.requires_grad();
  if ((cfg.l1_coeff > 0 || cfg.l2_coeff > 0) && detail::needs_record({any})) {
    std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
    for (const auto& w : weights)
      if (w.requires_grad()) impls.push_back(w.impl_ptr());
    detail::record(out, [impls = std::move(impls), a = cfg.l1_coeff, b = cfg.l2_coeff](std::span<const T> g) {
      const double s = static_cast<double>(g[0]);
      for (const auto& impl : impls) {
        auto gw = detail::grad_of(impl);
        const auto& w = impl->data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double v = static_cast<double>(w[i]);
          const double sign = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
          gw[i] += static_cast<T>(s * (a * sign + 2.0 * b * v));
        }
      }
    });
  }
  return out;
}

}  // namespace gpcseg
