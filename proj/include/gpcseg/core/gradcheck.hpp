#pragma once

#include <algorithm>
#include <cmath>

#include "gpcseg/core/tensor.hpp"

namespace gpcseg {

// Compares the taped gradient of fn at x against central differences.
// Returns max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|). Intended for
// Tensor<double> shadows of float layers.
template <class T, class Fn>
double grad_check(Fn&& fn, const Tensor<T>& x, double eps) {
  if (!(eps > 0.0)) throw Error("grad_check: eps must be positive");
  auto probe = x.clone();
  probe.set_requires_grad(true);
  clear_tape();
  Tensor<T> out = fn(probe);
  if (out.numel() != 1) {
    clear_tape();
    throw ShapeError("grad_check: fn must return a scalar, got shape " + to_string(out.shape()));
  }
  backward(out);
  std::vector<T> analytic(static_cast<std::size_t>(probe.numel()), T(0));
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  double worst = 0.0;
  NoGradGuard guard;
  auto shadow = x.clone();
  auto v = shadow.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T keep = v[i];
    v[i] = keep + static_cast<T>(eps);
    const double up = static_cast<double>(fn(shadow).item());
    v[i] = keep - static_cast<T>(eps);
    const double down = static_cast<double>(fn(shadow).item());
    v[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gpcseg
