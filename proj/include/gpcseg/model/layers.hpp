#pragma once

#include <span>
#include <string>
#include <vector>

#include "gpcseg/nn/activation.hpp"
#include "gpcseg/nn/batchnorm.hpp"
#include "gpcseg/nn/conv.hpp"
#include "gpcseg/nn/gpc.hpp"
#include "gpcseg/nn/pool.hpp"
#include "gpcseg/nn/residual.hpp"

namespace gpcseg {

// What a registered tensor is, for regularization and counting.
enum class ParamRole { weight, bias, bn_affine, buffer };

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  ParamRole role;
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual Tensor<T> forward(std::span<const Tensor<T>> inputs, Mode mode) = 0;
  virtual Shape output_shape(std::span<const Shape> inputs) const = 0;
  virtual void collect(const std::string&, std::vector<NamedTensor<T>>&) {}
};

namespace detail {

template <class T>
void collect_conv(const std::string& prefix, const ConvKernel<T>& k, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".weight", k.weights, ParamRole::weight});
  out.push_back({prefix + ".bias", k.bias, ParamRole::bias});
}

template <class T>
void collect_bn(const std::string& prefix, const BatchNormState<T>& s, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".gamma", s.gamma, ParamRole::bn_affine});
  out.push_back({prefix + ".beta", s.beta, ParamRole::bn_affine});
  out.push_back({prefix + ".running_mean", s.running_mean, ParamRole::buffer});
  out.push_back({prefix + ".running_var", s.running_var, ParamRole::buffer});
}

inline Shape with_channels(const Shape& s, std::int64_t c) {
  Shape r = s;
  r[r.size() == 5 ? 1 : 0] = c;
  return r;
}

}  // namespace detail

template <class T>
class InputLayer final : public Layer<T> {
 public:
  const char* kind() const override { return "input"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return in[0]; }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
};

template <class T>
class ConvLayer final : public Layer<T> {
 public:
  explicit ConvLayer(ConvKernel<T> k) : kernel(std::move(k)) {}
  const char* kind() const override { return "conv3d"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return conv3d(in[0], kernel); }
  Shape output_shape(std::span<const Shape> in) const override {
    const auto l = volume_layout(in[0], "conv3d");
    const auto g = conv_geometry(l.c, kernel.weights.dim(0), {l.d, l.h, l.w}, kernel.kernel(), kernel.stride,
                                 kernel.padding);
    VolumeLayout o{l.n, g.c_out, g.out[0], g.out[1], g.out[2]};
    return o.shape_like(in[0].size(), g.c_out);
  }
  void collect(const std::string& p, std::vector<NamedTensor<T>>& out) override {
    detail::collect_conv(p, kernel, out);
  }
  ConvKernel<T> kernel;
};

template <class T>
class TransposedConvLayer final : public Layer<T> {
 public:
  explicit TransposedConvLayer(ConvKernel<T> k) : kernel(std::move(k)) {}
  const char* kind() const override { return "transposed_conv3d"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return transposed_conv3d(in[0], kernel); }
  Shape output_shape(std::span<const Shape> in) const override {
    const auto l = volume_layout(in[0], "transposed_conv3d");
    const auto c = kernel.weights.dim(1);
    VolumeLayout o{l.n, c, l.d * kernel.stride[0], l.h * kernel.stride[1], l.w * kernel.stride[2]};
    return o.shape_like(in[0].size(), c);
  }
  void collect(const std::string& p, std::vector<NamedTensor<T>>& out) override {
    detail::collect_conv(p, kernel, out);
  }
  ConvKernel<T> kernel;
};

// conv3 -> BN -> activation, the plain UNet stage.
template <class T>
class ConvBnActLayer final : public Layer<T> {
 public:
  ConvBnActLayer(ConvKernel<T> k, Activation a) : kernel(std::move(k)), bn(BatchNormState<T>::make(kernel.weights.dim(0))), act(a) {}
  const char* kind() const override { return "conv_bn_act"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode mode) override {
    return activation(batchnorm3d(conv3d(in[0], kernel), bn, mode), act);
  }
  Shape output_shape(std::span<const Shape> in) const override {
    return detail::with_channels(in[0], kernel.weights.dim(0));
  }
  void collect(const std::string& p, std::vector<NamedTensor<T>>& out) override {
    detail::collect_conv(p + ".conv", kernel, out);
    detail::collect_bn(p + ".bn", bn, out);
  }
  ConvKernel<T> kernel;
  BatchNormState<T> bn;
  Activation act;
};

template <class T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(Activation a) : act(a) {}
  const char* kind() const override { return act == Activation::relu ? "relu" : "elu"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return activation(in[0], act); }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
  Activation act;
};

template <class T>
class MaxPoolLayer final : public Layer<T> {
 public:
  const char* kind() const override { return "maxpool3d"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return maxpool3d(in[0], 2, 2); }
  Shape output_shape(std::span<const Shape> in) const override {
    Shape s = in[0];
    for (std::size_t i = s.size() - 3; i < s.size(); ++i) s[i] /= 2;
    return s;
  }
};

template <class T>
class ConcatLayer final : public Layer<T> {
 public:
  const char* kind() const override { return "concat"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return concat_channels(in[0], in[1]); }
  Shape output_shape(std::span<const Shape> in) const override {
    const auto c0 = in[0][in[0].size() == 5 ? 1 : 0];
    const auto c1 = in[1][in[1].size() == 5 ? 1 : 0];
    return detail::with_channels(in[0], c0 + c1);
  }
};

template <class T>
class AddLayer final : public Layer<T> {
 public:
  const char* kind() const override { return "add"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return add(in[0], in[1]); }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
};

template <class T>
class GpcLayer final : public Layer<T> {
 public:
  explicit GpcLayer(GpcModule<T> m) : module(std::move(m)) {}
  const char* kind() const override { return "gpc"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode) override { return gpc_forward(in[0], module); }
  Shape output_shape(std::span<const Shape> in) const override {
    return detail::with_channels(in[0], module.c_out());
  }
  void collect(const std::string& p, std::vector<NamedTensor<T>>& out) override {
    for (const auto& b : module.branches) {
      const auto q = p + "." + orientation_name(b.orientation);
      out.push_back({q + ".weight", b.weights, ParamRole::weight});
      out.push_back({q + ".bias", b.bias, ParamRole::bias});
    }
  }
  GpcModule<T> module;
};

template <class T>
class ResidualLayer final : public Layer<T> {
 public:
  explicit ResidualLayer(ResidualBlock<T> b) : block(std::move(b)) {}
  const char* kind() const override { return "residual"; }
  Tensor<T> forward(std::span<const Tensor<T>> in, Mode mode) override {
    return residual_block_forward(in[0], block, mode);
  }
  Shape output_shape(std::span<const Shape> in) const override {
    return detail::with_channels(in[0], block.c_out());
  }
  void collect(const std::string& p, std::vector<NamedTensor<T>>& out) override {
    detail::collect_conv(p + ".conv1", block.conv1, out);
    detail::collect_bn(p + ".bn1", block.bn1, out);
    detail::collect_conv(p + ".conv2", block.conv2, out);
    detail::collect_bn(p + ".bn2", block.bn2, out);
    if (block.projection) detail::collect_conv(p + ".proj", *block.projection, out);
  }
  ResidualBlock<T> block;
};

}  // namespace gpcseg
