#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <cblas.h>

#include "gpcseg/core/ops.hpp"
#include "gpcseg/core/tensor.hpp"

namespace gpcseg {

using Triple = std::array<std::int64_t, 3>;

enum class Padding { same, valid };

// Weights are (C_out, C_in, kd, kh, kw) for conv3d. For transposed_conv3d
// the same tensor layout is read as (C_in, C_out, kd, kh, kw), i.e. the
// weights of the forward convolution it is the adjoint of.
template <class T>
struct ConvKernel {
  Tensor<T> weights;
  Tensor<T> bias;
  Triple stride{1, 1, 1};
  Padding padding = Padding::same;

  Triple kernel() const { return {weights.dim(2), weights.dim(3), weights.dim(4)}; }
  std::int64_t kernel_volume() const { return weights.dim(2) * weights.dim(3) * weights.dim(4); }

  static ConvKernel make(std::int64_t c_in, std::int64_t c_out, Triple k, Rng& rng,
                         Triple stride = {1, 1, 1}, Padding padding = Padding::same) {
    if (c_in < 1 || c_out < 1) throw ConfigError("conv kernel needs C_in, C_out >= 1");
    ConvKernel kc;
    kc.weights = Tensor<T>::he_normal({c_out, c_in, k[0], k[1], k[2]}, c_in * k[0] * k[1] * k[2], rng);
    kc.bias = Tensor<T>::zeros({c_out});
    kc.stride = stride;
    kc.padding = padding;
    return kc;
  }

  // Kernel for transposed_conv3d mapping c_in -> c_out channels.
  static ConvKernel make_transposed(std::int64_t c_in, std::int64_t c_out, Triple k, Triple stride,
                                    Rng& rng) {
    if (c_in < 1 || c_out < 1) throw ConfigError("transposed conv kernel needs C_in, C_out >= 1");
    ConvKernel kc;
    kc.weights = Tensor<T>::he_normal({c_in, c_out, k[0], k[1], k[2]}, c_in * k[0] * k[1] * k[2], rng);
    kc.bias = Tensor<T>::zeros({c_out});
    kc.stride = stride;
    kc.padding = Padding::same;
    return kc;
  }

  template <class U>
  ConvKernel<U> cast() const {
    return {weights.template cast<U>(), bias.template cast<U>(), stride, padding};
  }

  void set_requires_grad(bool on) {
    weights.set_requires_grad(on);
    bias.set_requires_grad(on);
  }
};

// Index arithmetic for one convolution, independent of batch.
struct ConvGeometry {
  std::int64_t c_in = 1, c_out = 1;
  Triple in{}, out{}, k{}, stride{}, pad{};

  std::int64_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::int64_t kernel_volume() const { return k[0] * k[1] * k[2]; }
  std::int64_t rows() const { return c_in * kernel_volume(); }
  bool pointwise() const {
    return kernel_volume() == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

// "same": out = ceil(in / stride), the odd padding voxel goes to the
// high-index side. "valid": out = floor((in - k) / stride) + 1.
inline ConvGeometry conv_geometry(std::int64_t c_in, std::int64_t c_out, Triple in, Triple k,
                                  Triple stride, Padding padding) {
  ConvGeometry g;
  g.c_in = c_in;
  g.c_out = c_out;
  g.in = in;
  g.k = k;
  g.stride = stride;
  for (int a = 0; a < 3; ++a) {
    if (k[a] < 1 || stride[a] < 1) throw ShapeError("kernel and stride dims must be >= 1");
    if (padding == Padding::same) {
      g.out[a] = (in[a] + stride[a] - 1) / stride[a];
      const auto total = std::max<std::int64_t>((g.out[a] - 1) * stride[a] + k[a] - in[a], 0);
      g.pad[a] = total / 2;
    } else {
      if (in[a] < k[a])
        throw ShapeError("valid convolution: spatial dim " + std::to_string(in[a]) +
                         " smaller than kernel dim " + std::to_string(k[a]));
      g.out[a] = (in[a] - k[a]) / stride[a] + 1;
      g.pad[a] = 0;
    }
  }
  return g;
}

namespace detail {

inline void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
                 const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
                 std::int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
                 const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
                 double* c, std::int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// Valid output range [lo, hi) along one axis for kernel tap `tap`.
inline void tap_range(std::int64_t out, std::int64_t in, std::int64_t stride, std::int64_t tap,
                      std::int64_t pad, std::int64_t& lo, std::int64_t& hi) {
  // need 0 <= o*stride + tap - pad < in
  const auto shift = tap - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  hi = in - shift <= 0 ? 0 : (in - shift + stride - 1) / stride;
  hi = std::min(hi, out);
  if (hi < lo) hi = lo;
}

// Output depth slices [od0, od1) are unrolled into a (rows x ncols) matrix.
template <class T, bool Scatter>
void im2col_block(const ConvGeometry& g, std::int64_t od0, std::int64_t od1, T* x, T* col) {
  const auto [id_, ih_, iw_] = g.in;
  const auto [od_, oh_, ow_] = g.out;
  (void)od_;
  const auto ncols = (od1 - od0) * oh_ * ow_;
  const auto in_vol = g.in_volume();
  std::int64_t r = 0;
  for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
    T* xc = x + ci * in_vol;
    for (std::int64_t a = 0; a < g.k[0]; ++a)
      for (std::int64_t b = 0; b < g.k[1]; ++b)
        for (std::int64_t c = 0; c < g.k[2]; ++c, ++r) {
          T* row = col + r * ncols;
          std::int64_t w_lo, w_hi;
          tap_range(ow_, iw_, g.stride[2], c, g.pad[2], w_lo, w_hi);
          for (std::int64_t od = od0; od < od1; ++od) {
            const auto id = od * g.stride[0] + a - g.pad[0];
            T* seg = row + (od - od0) * oh_ * ow_;
            if (id < 0 || id >= id_) {
              if constexpr (!Scatter) std::fill_n(seg, oh_ * ow_, T(0));
              continue;
            }
            for (std::int64_t oh = 0; oh < oh_; ++oh) {
              const auto ih = oh * g.stride[1] + b - g.pad[1];
              T* line = seg + oh * ow_;
              if (ih < 0 || ih >= ih_) {
                if constexpr (!Scatter) std::fill_n(line, ow_, T(0));
                continue;
              }
              T* src = xc + (id * ih_ + ih) * iw_ + c - g.pad[2];
              const auto sw = g.stride[2];
              if constexpr (Scatter) {
                for (auto ow = w_lo; ow < w_hi; ++ow) src[ow * sw] += line[ow];
              } else {
                for (std::int64_t ow = 0; ow < w_lo; ++ow) line[ow] = T(0);
                if (sw == 1)
                  for (auto ow = w_lo; ow < w_hi; ++ow) line[ow] = src[ow];
                else
                  for (auto ow = w_lo; ow < w_hi; ++ow) line[ow] = src[ow * sw];
                for (auto ow = w_hi; ow < ow_; ++ow) line[ow] = T(0);
              }
            }
          }
        }
  }
}

inline std::int64_t slices_per_block(const ConvGeometry& g) {
  constexpr std::int64_t budget = std::int64_t(1) << 22;  // elements in the unrolled buffer
  const auto per_slice = g.rows() * g.out[1] * g.out[2];
  return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(per_slice, 1), 1, g.out[0]);
}

// Direct kernels for stride-1 convolutions whose output grid equals the
// input grid. The input is zero-padded once so every tap is a contiguous
// shifted read over a whole (H, W + kw - 1) plane; the extra columns are
// dropped. Work is split over disjoint outputs, so results do not depend on
// the thread count.
inline bool direct_eligible(const ConvGeometry& g) {
  return g.stride == Triple{1, 1, 1} && g.out == g.in && !g.pointwise() && g.c_out <= 16;
}

template <class T>
struct PaddedVolume {
  std::vector<T> data;
  Triple dims;  // padded
};

template <class T>
PaddedVolume<T> pad_for_direct(const T* x, std::int64_t channels, Triple in, Triple k, Triple pad) {
  PaddedVolume<T> p;
  p.dims = {in[0] + k[0] - 1, in[1] + k[1] - 1, in[2] + k[2] - 1};
  const auto [Dp, Hp, Wp] = p.dims;
  p.data.assign(static_cast<std::size_t>(channels * Dp * Hp * Wp + k[2]), T(0));
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t z = 0; z < in[0]; ++z)
      for (std::int64_t y = 0; y < in[1]; ++y) {
        const T* src = x + ((c * in[0] + z) * in[1] + y) * in[2];
        T* dst = p.data.data() + ((c * Dp + z + pad[0]) * Hp + y + pad[1]) * Wp + pad[2];
        std::copy_n(src, in[2], dst);
      }
  return p;
}

// y += conv(x, w) with w laid out (C_out, C_in, kd, kh, kw) and low pads `pad`.
template <class T>
void direct_conv_sample(const T* x, std::int64_t c_in, std::int64_t c_out, Triple dims, Triple k, Triple pad,
                        const T* w, T* y) {
  constexpr std::int64_t kBlock = 8;
  const auto [D, H, W] = dims;
  const auto xp = pad_for_direct(x, c_in, dims, k, pad);
  const auto [Dp, Hp, Wp] = xp.dims;
  const auto plane = H * Wp;
  const auto nblk = (c_out + kBlock - 1) / kBlock;
  const auto kvol = k[0] * k[1] * k[2];
  parallel_for(nblk * D, [&](std::int64_t task) {
    const auto co0 = (task / D) * kBlock;
    const auto z = task % D;
    const auto cb = std::min(kBlock, c_out - co0);
    std::vector<T> acc(static_cast<std::size_t>(cb * plane), T(0));
    for (std::int64_t ci = 0; ci < c_in; ++ci)
      for (std::int64_t a = 0; a < k[0]; ++a)
        for (std::int64_t b = 0; b < k[1]; ++b)
          for (std::int64_t c = 0; c < k[2]; ++c) {
            const T* src = xp.data.data() + ((ci * Dp + z + a) * Hp + b) * Wp + c;
            const auto tap = (a * k[1] + b) * k[2] + c;
            for (std::int64_t j = 0; j < cb; ++j) {
              const T wv = w[((co0 + j) * c_in + ci) * kvol + tap];
              T* dst = acc.data() + j * plane;
              for (std::int64_t i = 0; i < plane; ++i) dst[i] += wv * src[i];
            }
          }
    for (std::int64_t j = 0; j < cb; ++j)
      for (std::int64_t h = 0; h < H; ++h) {
        T* out = y + (((co0 + j) * D + z) * H + h) * W;
        const T* r = acc.data() + j * plane + h * Wp;
        for (std::int64_t xo = 0; xo < W; ++xo) out[xo] += r[xo];
      }
  });
}

// gx += conv^T(gy): a direct conv with channel-swapped, flipped weights.
template <class T>
void direct_backward_input_sample(const ConvGeometry& g, const T* gy, const T* w, T* gx) {
  const auto kvol = g.kernel_volume();
  std::vector<T> wt(static_cast<std::size_t>(g.c_in * g.c_out * kvol));
  for (std::int64_t co = 0; co < g.c_out; ++co)
    for (std::int64_t ci = 0; ci < g.c_in; ++ci)
      for (std::int64_t t = 0; t < kvol; ++t)
        wt[static_cast<std::size_t>((ci * g.c_out + co) * kvol + (kvol - 1 - t))] = w[(co * g.c_in + ci) * kvol + t];
  const Triple pad{g.k[0] - 1 - g.pad[0], g.k[1] - 1 - g.pad[1], g.k[2] - 1 - g.pad[2]};
  direct_conv_sample(gy, g.c_out, g.c_in, g.in, g.k, pad, wt.data(), gx);
}

// gw += correlation of gy with the padded input, accumulated in register
// lanes and reduced once in double.
template <class T>
void direct_backward_weight_sample(const ConvGeometry& g, const T* x, const T* gy, T* gw) {
  const auto [D, H, W] = g.in;
  const auto xp = pad_for_direct(x, g.c_in, g.in, g.k, g.pad);
  const auto [Dp, Hp, Wp] = xp.dims;
  const auto plane = H * Wp;
  std::vector<T> gyp(static_cast<std::size_t>(g.c_out * D * plane), T(0));
  for (std::int64_t co = 0; co < g.c_out; ++co)
    for (std::int64_t z = 0; z < D; ++z)
      for (std::int64_t h = 0; h < H; ++h)
        std::copy_n(gy + ((co * D + z) * H + h) * W, W, gyp.data() + (co * D + z) * plane + h * Wp);
  const auto kvol = g.kernel_volume();
  const auto kw = g.k[2];
  parallel_for(g.c_in * g.k[0] * g.k[1], [&](std::int64_t task) {
    const auto ci = task / (g.k[0] * g.k[1]);
    const auto a = (task / g.k[1]) % g.k[0];
    const auto b = task % g.k[1];
    constexpr std::int64_t kLanes = 8, kCo = 4;
    const auto body = plane - plane % kLanes;
    for (std::int64_t c = 0; c < kw; ++c)
      for (std::int64_t co0 = 0; co0 < g.c_out; co0 += kCo) {
        const auto cb = std::min(kCo, g.c_out - co0);
        T lanes[kCo][kLanes] = {};
        T tail[kCo] = {};
        for (std::int64_t z = 0; z < D; ++z) {
          const T* src = xp.data.data() + ((ci * Dp + z + a) * Hp + b) * Wp + c;
          const T* gr[kCo];
          for (std::int64_t j = 0; j < kCo; ++j) gr[j] = gyp.data() + ((co0 + std::min(j, cb - 1)) * D + z) * plane;
          for (std::int64_t i = 0; i < body; i += kLanes)
            for (std::int64_t j = 0; j < kCo; ++j)
              for (std::int64_t l = 0; l < kLanes; ++l) lanes[j][l] += gr[j][i + l] * src[i + l];
          for (std::int64_t i = body; i < plane; ++i)
            for (std::int64_t j = 0; j < kCo; ++j) tail[j] += gr[j][i] * src[i];
        }
        for (std::int64_t j = 0; j < cb; ++j) {
          double s = tail[j];
          for (std::int64_t l = 0; l < kLanes; ++l) s += static_cast<double>(lanes[j][l]);
          gw[((co0 + j) * g.c_in + ci) * kvol + (a * g.k[1] + b) * kw + c] += static_cast<T>(s);
        }
      }
  });
}

// y (C_out x out) = W * x, one sample. beta = 1 accumulates into y.
template <class T>
void conv_forward_sample(const ConvGeometry& g, const T* x, const T* w, T* y, T beta) {
  const auto ov = g.out_volume();
  if (direct_eligible(g)) {
    if (beta == T(0)) std::fill_n(y, g.c_out * ov, T(0));
    direct_conv_sample(x, g.c_in, g.c_out, g.in, g.k, g.pad, w, y);
    return;
  }
  if (g.pointwise()) {
    gemm(false, false, g.c_out, ov, g.c_in, T(1), w, g.c_in, x, ov, beta, y, ov);
    return;
  }
  const auto hw = g.out[1] * g.out[2];
  const auto step = slices_per_block(g);
  std::vector<T> col(static_cast<std::size_t>(g.rows() * step * hw));
  for (std::int64_t od0 = 0; od0 < g.out[0]; od0 += step) {
    const auto od1 = std::min(od0 + step, g.out[0]);
    const auto nc = (od1 - od0) * hw;
    im2col_block<T, false>(g, od0, od1, const_cast<T*>(x), col.data());
    gemm(false, false, g.c_out, nc, g.rows(), T(1), w, g.rows(), col.data(), nc, beta, y + od0 * hw, ov);
  }
}

// gx += W^T * gy, one sample.
template <class T>
void conv_backward_input_sample(const ConvGeometry& g, const T* gy, const T* w, T* gx) {
  const auto ov = g.out_volume();
  if (direct_eligible(g)) {
    direct_backward_input_sample(g, gy, w, gx);
    return;
  }
  if (g.pointwise()) {
    gemm(true, false, g.c_in, ov, g.c_out, T(1), w, g.c_in, gy, ov, T(1), gx, ov);
    return;
  }
  const auto hw = g.out[1] * g.out[2];
  const auto step = slices_per_block(g);
  std::vector<T> col(static_cast<std::size_t>(g.rows() * step * hw));
  for (std::int64_t od0 = 0; od0 < g.out[0]; od0 += step) {
    const auto od1 = std::min(od0 + step, g.out[0]);
    const auto nc = (od1 - od0) * hw;
    gemm(true, false, g.rows(), nc, g.c_out, T(1), w, g.rows(), gy + od0 * hw, ov, T(0), col.data(), nc);
    im2col_block<T, true>(g, od0, od1, gx, col.data());
  }
}

// gw += gy * x_unrolled^T, one sample.
template <class T>
void conv_backward_weight_sample(const ConvGeometry& g, const T* x, const T* gy, T* gw) {
  const auto ov = g.out_volume();
  if (direct_eligible(g)) {
    direct_backward_weight_sample(g, x, gy, gw);
    return;
  }
  if (g.pointwise()) {
    gemm(false, true, g.c_out, g.c_in, ov, T(1), gy, ov, x, ov, T(1), gw, g.c_in);
    return;
  }
  const auto hw = g.out[1] * g.out[2];
  const auto step = slices_per_block(g);
  std::vector<T> col(static_cast<std::size_t>(g.rows() * step * hw));
  for (std::int64_t od0 = 0; od0 < g.out[0]; od0 += step) {
    const auto od1 = std::min(od0 + step, g.out[0]);
    const auto nc = (od1 - od0) * hw;
    im2col_block<T, false>(g, od0, od1, const_cast<T*>(x), col.data());
    gemm(false, true, g.c_out, g.rows(), nc, T(1), gy + od0 * hw, ov, col.data(), nc, T(1), gw, g.rows());
  }
}


template <class T>
void add_bias(T* y, const T* b, std::int64_t channels, std::int64_t volume) {
  for (std::int64_t c = 0; c < channels; ++c) {
    T* p = y + c * volume;
    const T v = b[c];
    for (std::int64_t i = 0; i < volume; ++i) p[i] += v;
  }
}

template <class T>
void accumulate_bias_grad(const T* gy, T* gb, std::int64_t channels, std::int64_t volume) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* p = gy + c * volume;
    double s = 0.0;
    for (std::int64_t i = 0; i < volume; ++i) s += static_cast<double>(p[i]);
    gb[c] += static_cast<T>(s);
  }
}

template <class T>
void check_kernel(const ConvKernel<T>& k, const char* op) {
  if (!k.weights.defined() || k.weights.ndim() != 5)
    throw ShapeError(std::string(op) + ": weights must be 5-D");
  if (!k.bias.defined() || k.bias.ndim() != 1)
    throw ShapeError(std::string(op) + ": bias must be 1-D");
}

}  // namespace detail

// Cross-correlation plus bias (no kernel flip).
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvKernel<T>& kernel) {
  detail::check_kernel(kernel, "conv3d");
  const auto lay = volume_layout(x.shape(), "conv3d");
  const auto c_out = kernel.weights.dim(0);
  if (kernel.weights.dim(1) != lay.c)
    throw ShapeError("conv3d: input has " + std::to_string(lay.c) + " channels, kernel expects " +
                     std::to_string(kernel.weights.dim(1)));
  if (kernel.bias.dim(0) != c_out) throw ShapeError("conv3d: bias length differs from C_out");
  const auto g = conv_geometry(lay.c, c_out, {lay.d, lay.h, lay.w}, kernel.kernel(), kernel.stride,
                               kernel.padding);
  VolumeLayout ol{lay.n, c_out, g.out[0], g.out[1], g.out[2]};
  Tensor<T> y(ol.shape_like(x.ndim(), c_out));
  const auto iv = lay.c * g.in_volume();
  const auto ov = c_out * g.out_volume();
  for (std::int64_t n = 0; n < lay.n; ++n) {
    T* yn = y.data().data() + n * ov;
    detail::conv_forward_sample(g, x.data().data() + n * iv, kernel.weights.data().data(), yn, T(0));
    detail::add_bias(yn, kernel.bias.data().data(), c_out, g.out_volume());
  }
  if (detail::needs_record({x.requires_grad(), kernel.weights.requires_grad(), kernel.bias.requires_grad()})) {
    detail::record(y, [g, lay, iv, ov, xi = x.impl_ptr(), wi = kernel.weights.impl_ptr(),
                       bi = kernel.bias.impl_ptr()](std::span<const T> gy) {
      for (std::int64_t n = 0; n < lay.n; ++n) {
        const T* gyn = gy.data() + n * ov;
        if (xi->requires_grad)
          detail::conv_backward_input_sample(g, gyn, wi->data.data(), detail::grad_of(xi).data() + n * iv);
        if (wi->requires_grad)
          detail::conv_backward_weight_sample(g, xi->data.data() + n * iv, gyn, detail::grad_of(wi).data());
        if (bi->requires_grad)
          detail::accumulate_bias_grad(gyn, detail::grad_of(bi).data(), g.c_out, g.out_volume());
      }
    });
  }
  return y;
}

// Adjoint of the "same"-padded strided conv3d with the same weights, plus
// bias. Output spatial dims are input dims times the stride.
template <class T>
Tensor<T> transposed_conv3d(const Tensor<T>& x, const ConvKernel<T>& kernel) {
  detail::check_kernel(kernel, "transposed_conv3d");
  const auto lay = volume_layout(x.shape(), "transposed_conv3d");
  if (kernel.weights.dim(0) != lay.c)
    throw ShapeError("transposed_conv3d: input has " + std::to_string(lay.c) +
                     " channels, kernel expects " + std::to_string(kernel.weights.dim(0)));
  const auto c_out = kernel.weights.dim(1);
  if (kernel.bias.dim(0) != c_out) throw ShapeError("transposed_conv3d: bias length differs from C_out");
  const Triple big{lay.d * kernel.stride[0], lay.h * kernel.stride[1], lay.w * kernel.stride[2]};
  // forward conv: big (c_out channels) -> x (lay.c channels)
  const auto g = conv_geometry(c_out, lay.c, big, kernel.kernel(), kernel.stride, Padding::same);
  VolumeLayout ol{lay.n, c_out, big[0], big[1], big[2]};
  Tensor<T> y(ol.shape_like(x.ndim(), c_out));
  const auto xv = lay.c * g.out_volume();
  const auto yv = c_out * g.in_volume();
  for (std::int64_t n = 0; n < lay.n; ++n) {
    T* yn = y.data().data() + n * yv;
    detail::conv_backward_input_sample(g, x.data().data() + n * xv, kernel.weights.data().data(), yn);
    detail::add_bias(yn, kernel.bias.data().data(), c_out, g.in_volume());
  }
  if (detail::needs_record({x.requires_grad(), kernel.weights.requires_grad(), kernel.bias.requires_grad()})) {
    detail::record(y, [g, lay, xv, yv, c_out, xi = x.impl_ptr(), wi = kernel.weights.impl_ptr(),
                       bi = kernel.bias.impl_ptr()](std::span<const T> gy) {
      for (std::int64_t n = 0; n < lay.n; ++n) {
        const T* gyn = gy.data() + n * yv;
        if (xi->requires_grad)
          detail::conv_forward_sample(g, gyn, wi->data.data(), detail::grad_of(xi).data() + n * xv, T(1));
        if (wi->requires_grad)
          detail::conv_backward_weight_sample(g, gyn, xi->data.data() + n * xv, detail::grad_of(wi).data());
        if (bi->requires_grad)
          detail::accumulate_bias_grad(gyn, detail::grad_of(bi).data(), c_out, g.in_volume());
      }
    });
  }
  return y;
}

enum class Orientation { axial, coronal, sagittal };

inline const char* orientation_name(Orientation o) {
  switch (o) {
    case Orientation::axial: return "axial";
    case Orientation::coronal: return "coronal";
    case Orientation::sagittal: return "sagittal";
  }
  return "?";
}

// Kernel extents in (D,H,W) order; the orientation axis has size 1.
inline Triple planar_extent(Orientation o, std::int64_t k) {
  switch (o) {
    case Orientation::axial: return {1, k, k};
    case Orientation::coronal: return {k, 1, k};
    case Orientation::sagittal: return {k, k, 1};
  }
  return {k, k, k};
}

template <class T>
struct PlanarKernel {
  Orientation orientation = Orientation::axial;
  std::int64_t k = 15;
  Tensor<T> weights;  // (C_out, C_in, planar_extent(orientation, k))
  Tensor<T> bias;     // (C_out)

  std::int64_t c_in() const { return weights.dim(1); }
  std::int64_t c_out() const { return weights.dim(0); }

  static PlanarKernel make(Orientation o, std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                           Rng& rng, std::int64_t fan_in_scale = 1) {
    if (k < 1) throw ConfigError("planar kernel size must be >= 1");
    PlanarKernel p;
    p.orientation = o;
    p.k = k;
    const auto e = planar_extent(o, k);
    p.weights = Tensor<T>::he_normal({c_out, c_in, e[0], e[1], e[2]}, fan_in_scale * c_in * k * k, rng);
    p.bias = Tensor<T>::zeros({c_out});
    return p;
  }

  void validate() const {
    if (!weights.defined() || weights.ndim() != 5) throw ShapeError("planar kernel weights must be 5-D");
    if (Triple{weights.dim(2), weights.dim(3), weights.dim(4)} != planar_extent(orientation, k))
      throw ShapeError(std::string("planar kernel extent does not match ") + orientation_name(orientation) +
                       " orientation with k=" + std::to_string(k));
  }

  ConvKernel<T> as_conv() const { return {weights, bias, {1, 1, 1}, Padding::same}; }

  template <class U>
  PlanarKernel<U> cast() const {
    return {orientation, k, weights.template cast<U>(), bias.template cast<U>()};
  }
};

// Same-padded, stride-1 convolution with a planar kernel.
template <class T>
Tensor<T> planar_conv(const Tensor<T>& x, const PlanarKernel<T>& pk) {
  pk.validate();
  return conv3d(x, pk.as_conv());
}

}  // namespace gpcseg
