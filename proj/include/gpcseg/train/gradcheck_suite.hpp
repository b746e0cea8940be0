#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gpcseg/core/gradcheck.hpp"
#include "gpcseg/core/ops.hpp"
#include "gpcseg/nn/activation.hpp"
#include "gpcseg/nn/batchnorm.hpp"
#include "gpcseg/nn/conv.hpp"
#include "gpcseg/nn/gpc.hpp"
#include "gpcseg/nn/pool.hpp"
#include "gpcseg/nn/residual.hpp"
#include "gpcseg/train/loss.hpp"

namespace gpcseg {

struct GradCheckResult {
  std::string layer;
  std::string wrt;
  std::uint64_t seed = 0;
  double max_rel_error = 0;
};

namespace detail {

// Random linear functional, so no gradient vanishes by symmetry.
inline Tensor<double> gc_project(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, Tensor<double>::he_normal(y.shape(), 2, seed)));
}

inline Tensor<double> gc_input(Shape s, std::uint64_t seed) { return Tensor<double>::he_normal(std::move(s), 1, seed); }

// Moves values at least `margin` away from zero, keeping their sign.
inline Tensor<double> away_from_zero(Tensor<double> t, double margin) {
  for (auto& v : t.data()) v = v >= 0 ? v + margin : v - margin;
  return t;
}

}  // namespace detail

// Float64 shadows of every layer type, checked against central differences
// with respect to the input and, where the layer has them, its weights.
inline std::vector<GradCheckResult> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds, double eps = 1e-6) {
  using detail::gc_input;
  using detail::gc_project;
  std::vector<GradCheckResult> out;
  auto add_result = [&](const char* layer, const char* wrt, std::uint64_t seed, double err) {
    out.push_back({layer, wrt, seed, err});
  };
  for (const auto s : seeds) {
    const std::uint64_t p = s * 1000 + 17;
    Rng rng(s);
    {
      auto k = ConvKernel<float>::make(2, 3, {3, 3, 3}, rng).cast<double>();
      k.bias = gc_input({3}, p + 1);
      const auto x = gc_input({2, 5, 4, 6}, p + 2);
      add_result("conv3d", "input", s, grad_check([&](const Tensor<double>& t) { return gc_project(conv3d(t, k), p); }, x, eps));
      add_result("conv3d", "weight", s, grad_check([&](const Tensor<double>& w) {
        auto kk = k;
        kk.weights = w;
        return gc_project(conv3d(x, kk), p);
      }, k.weights, eps));
      auto ks = ConvKernel<float>::make(2, 2, {3, 3, 3}, rng, {2, 2, 2}).cast<double>();
      add_result("conv3d_stride2", "input", s,
                 grad_check([&](const Tensor<double>& t) { return gc_project(conv3d(t, ks), p + 3); }, x, eps));
    }
    {
      auto k = ConvKernel<float>::make_transposed(3, 2, {2, 2, 2}, {2, 2, 2}, rng).cast<double>();
      k.bias = gc_input({2}, p + 4);
      const auto x = gc_input({3, 3, 2, 3}, p + 5);
      add_result("transposed_conv3d", "input", s,
                 grad_check([&](const Tensor<double>& t) { return gc_project(transposed_conv3d(t, k), p); }, x, eps));
      add_result("transposed_conv3d", "weight", s, grad_check([&](const Tensor<double>& w) {
        auto kk = k;
        kk.weights = w;
        return gc_project(transposed_conv3d(x, kk), p);
      }, k.weights, eps));
    }
    add_result("maxpool3d", "input", s,
               grad_check([&](const Tensor<double>& t) { return gc_project(maxpool3d(t), p); }, gc_input({2, 4, 4, 6}, p + 6), eps));
    {
      auto bn = BatchNormState<double>::make(3);
      bn.gamma = gc_input({3}, p + 7);
      bn.beta = gc_input({3}, p + 8);
      const auto x = gc_input({2, 3, 3, 3, 2}, p + 9);
      add_result("batchnorm3d_train", "input", s, grad_check([&](const Tensor<double>& t) {
        auto st = bn;
        return gc_project(batchnorm3d(t, st, Mode::train), p);
      }, x, eps));
      add_result("batchnorm3d_train", "gamma", s, grad_check([&](const Tensor<double>& g) {
        auto st = bn;
        st.gamma = g;
        return gc_project(batchnorm3d(x, st, Mode::train), p);
      }, bn.gamma, eps));
    }
    const auto xa = detail::away_from_zero(gc_input({2, 3, 4, 3}, p + 10), 0.05);
    add_result("relu", "input", s, grad_check([&](const Tensor<double>& t) { return gc_project(relu(t), p); }, xa, eps));
    add_result("elu", "input", s, grad_check([&](const Tensor<double>& t) { return gc_project(elu(t), p); }, xa, eps));
    {
      const auto logits = gc_input({4, 3, 2, 3}, p + 11);
      std::vector<std::uint8_t> labels(18);
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(rng() % 4);
      add_result("softmax_cross_entropy", "logits", s,
                 grad_check([&](const Tensor<double>& t) { return cross_entropy(t, labels); }, logits, eps));
    }
    for (auto o : {Orientation::axial, Orientation::coronal, Orientation::sagittal}) {
      auto pk = PlanarKernel<float>::make(o, 2, 2, 3, rng).cast<double>();
      pk.bias = gc_input({2}, p + 12);
      const auto x = gc_input({2, 4, 5, 3}, p + 13);
      const std::string name = std::string("planar_conv_") + orientation_name(o);
      out.push_back({name, "input", s, grad_check([&](const Tensor<double>& t) { return gc_project(planar_conv(t, pk), p); }, x, eps)});
      out.push_back({name, "weight", s, grad_check([&](const Tensor<double>& w) {
        auto kk = pk;
        kk.weights = w;
        return gc_project(planar_conv(x, kk), p);
      }, pk.weights, eps)});
    }
    {
      auto m = GpcModule<float>::make(2, 2, 3, rng).cast<double>();
      const auto x = gc_input({2, 4, 3, 5}, p + 14);
      add_result("gpc", "input", s, grad_check([&](const Tensor<double>& t) { return gc_project(gpc_forward(t, m), p); }, x, eps));
      add_result("gpc", "coronal_weight", s, grad_check([&](const Tensor<double>& w) {
        auto mm = m;
        mm.branches[1].weights = w;
        return gc_project(gpc_forward(x, mm), p);
      }, m.branches[1].weights, eps));
    }
    for (bool final_act : {true, false}) {
      auto rb = ResidualBlock<float>::make(2, 3, final_act, rng).cast<double>();
      const auto x = gc_input({2, 2, 4, 4, 3}, p + 15);
      const char* name = final_act ? "residual_block_final_activation" : "residual_block_no_final_activation";
      add_result(name, "input", s, grad_check([&](const Tensor<double>& t) {
        auto b = rb;
        return gc_project(residual_block_forward(t, b, Mode::train), p);
      }, x, eps));
      add_result(name, "conv1_weight", s, grad_check([&](const Tensor<double>& w) {
        auto b = rb;
        b.conv1.weights = w;
        return gc_project(residual_block_forward(x, b, Mode::train), p);
      }, rb.conv1.weights, eps));
    }
  }
  return out;
}

}  // namespace gpcseg
