#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gpcseg/core/error.hpp"
#include "gpcseg/model/layers.hpp"

namespace gpcseg {

// First/second moments per parameter, in parameter order.
template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static AdamState make(const std::vector<NamedTensor<T>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.push_back(Tensor<T>::zeros(p.tensor.shape()));
      s.v.push_back(Tensor<T>::zeros(p.tensor.shape()));
    }
    return s;
  }
};

// Parameters without a gradient buffer are treated as having zero gradient.
template <class T>
void adam_step(AdamState<T>& s, const std::vector<NamedTensor<T>>& params, double lr) {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (s.m.size() != params.size() || s.v.size() != params.size())
    throw ShapeError("optimizer state has " + std::to_string(s.m.size()) + " slots for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.m[i].shape() != params[i].tensor.shape())
      throw ShapeError("optimizer state shape differs for '" + params[i].name + "'");
    if (params[i].tensor.has_grad())
      for (T g : params[i].tensor.grad())
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericalError("non-finite gradient in parameter '" + params[i].name + "'");
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].tensor;
    auto w = p.data();
    auto m = s.m[i].data();
    auto v = s.v[i].data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? static_cast<double>(g[j]) : 0.0;
      const double mj = s.beta1 * static_cast<double>(m[j]) + (1.0 - s.beta1) * gj;
      const double vj = s.beta2 * static_cast<double>(v[j]) + (1.0 - s.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mh = mj / c1, vh = vj / c2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mh / (std::sqrt(vh) + s.epsilon));
    }
  }
}

}  // namespace gpcseg
