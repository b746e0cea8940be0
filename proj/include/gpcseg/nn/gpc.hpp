#pragma once

#include <array>
#include <string>

#include "gpcseg/nn/conv.hpp"

namespace gpcseg {

// Global planar convolution: three planar kernels, one per orthogonal
// orientation, applied to the same input and summed. No normalization
// inside the module; each branch carries a bias.
template <class T>
struct GpcModule {
  std::array<PlanarKernel<T>, 3> branches;

  static GpcModule make(std::int64_t c_in, std::int64_t c_out, std::int64_t k, Rng& rng) {
    GpcModule m;
    const Orientation order[3] = {Orientation::axial, Orientation::coronal, Orientation::sagittal};
    // three summed branches: He variance split across them
    for (int i = 0; i < 3; ++i) m.branches[i] = PlanarKernel<T>::make(order[i], c_in, c_out, k, rng, 3);
    return m;
  }

  std::int64_t c_in() const { return branches[0].c_in(); }
  std::int64_t c_out() const { return branches[0].c_out(); }
  std::int64_t k() const { return branches[0].k; }

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      branches[i].validate();
      for (int j = 0; j < i; ++j)
        if (branches[i].orientation == branches[j].orientation)
          throw ConfigError(std::string("GPC module has duplicate ") +
                            orientation_name(branches[i].orientation) + " branches");
      if (branches[i].c_in() != c_in() || branches[i].c_out() != c_out() || branches[i].k != k())
        throw ConfigError("GPC branches must share C_in, C_out and k");
    }
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& b : branches) n += b.weights.numel() + b.bias.numel();
    return n;
  }

  template <class U>
  GpcModule<U> cast() const {
    return {{branches[0].template cast<U>(), branches[1].template cast<U>(), branches[2].template cast<U>()}};
  }
};

template <class T>
Tensor<T> gpc_forward(const Tensor<T>& x, const GpcModule<T>& m) {
  m.validate();
  auto y = planar_conv(x, m.branches[0]);
  y = add(y, planar_conv(x, m.branches[1]));
  return add(y, planar_conv(x, m.branches[2]));
}

}  // namespace gpcseg
