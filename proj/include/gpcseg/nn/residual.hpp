#pragma once

#include <optional>
#include <string>

#include "gpcseg/nn/activation.hpp"
#include "gpcseg/nn/batchnorm.hpp"
#include "gpcseg/nn/conv.hpp"

namespace gpcseg {

// conv3 -> BN -> act -> conv3 -> BN, added to the identity (or a 1x1x1
// projection when the channel count changes), then an optional final
// activation.
template <class T>
struct ResidualBlock {
  ConvKernel<T> conv1;
  BatchNormState<T> bn1;
  ConvKernel<T> conv2;
  BatchNormState<T> bn2;
  std::optional<ConvKernel<T>> projection;
  bool final_activation = true;
  Activation act = Activation::relu;

  std::int64_t c_in() const { return conv1.weights.dim(1); }
  std::int64_t c_out() const { return conv2.weights.dim(0); }

  static ResidualBlock make(std::int64_t c_in, std::int64_t c_out, bool final_activation, Rng& rng) {
    ResidualBlock rb;
    rb.conv1 = ConvKernel<T>::make(c_in, c_out, {3, 3, 3}, rng);
    rb.bn1 = BatchNormState<T>::make(c_out);
    rb.conv2 = ConvKernel<T>::make(c_out, c_out, {3, 3, 3}, rng);
    rb.bn2 = BatchNormState<T>::make(c_out);
    if (c_in != c_out) rb.projection = ConvKernel<T>::make(c_in, c_out, {1, 1, 1}, rng);
    rb.final_activation = final_activation;
    return rb;
  }

  template <class U>
  ResidualBlock<U> cast() const {
    ResidualBlock<U> r;
    r.conv1 = conv1.template cast<U>();
    r.bn1 = bn1.template cast<U>();
    r.conv2 = conv2.template cast<U>();
    r.bn2 = bn2.template cast<U>();
    if (projection) r.projection = projection->template cast<U>();
    r.final_activation = final_activation;
    r.act = act;
    return r;
  }
};

template <class T>
Tensor<T> residual_block_forward(const Tensor<T>& x, ResidualBlock<T>& rb, Mode mode) {
  const auto l = volume_layout(x.shape(), "residual_block");
  if (l.c != rb.c_in())
    throw ShapeError("residual block expects " + std::to_string(rb.c_in()) + " channels, got " +
                     std::to_string(l.c));
  if (rb.c_in() != rb.c_out() && !rb.projection)
    throw ShapeError("residual block changes channels without a projection");
  auto f = activation(batchnorm3d(conv3d(x, rb.conv1), rb.bn1, mode), rb.act);
  f = batchnorm3d(conv3d(f, rb.conv2), rb.bn2, mode);
  auto y = add(rb.projection ? conv3d(x, *rb.projection) : x, f);
  return rb.final_activation ? activation(y, rb.act) : y;
}

}  // namespace gpcseg
