#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gpcseg/core/ops.hpp"

namespace gpcseg {

enum class Mode { train, eval };

template <class T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  std::int64_t channels() const { return gamma.numel(); }

  static BatchNormState make(std::int64_t channels) {
    if (channels < 1) throw ConfigError("batch norm needs >= 1 channel");
    return {Tensor<T>::constant({channels}, T(1)), Tensor<T>::zeros({channels}),
            Tensor<T>::zeros({channels}), Tensor<T>::constant({channels}, T(1))};
  }

  template <class U>
  BatchNormState<U> cast() const {
    return {gamma.template cast<U>(), beta.template cast<U>(), running_mean.template cast<U>(),
            running_var.template cast<U>(), epsilon, momentum};
  }
};

// Train mode normalizes with biased batch statistics over (N,D,H,W) and
// folds the unbiased variance into the running estimate. Eval mode reads the
// running statistics only.
template <class T>
Tensor<T> batchnorm3d(const Tensor<T>& x, BatchNormState<T>& s, Mode mode) {
  const auto l = volume_layout(x.shape(), "batchnorm3d");
  if (l.c != s.channels())
    throw ShapeError("batchnorm3d: input has " + std::to_string(l.c) + " channels, state has " +
                     std::to_string(s.channels()));
  const auto sp = l.spatial();
  const auto count = l.n * sp;
  const auto xs = x.data();
  Tensor<T> y(x.shape());
  auto ys = y.data();
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(l.c));
  auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(l.c));

  parallel_for(l.c, [&](std::int64_t c) {
    double m, var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < l.n; ++n) {
        const T* p = xs.data() + (n * l.c + c) * sp;
        for (std::int64_t i = 0; i < sp; ++i) acc += static_cast<double>(p[i]);
      }
      m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t n = 0; n < l.n; ++n) {
        const T* p = xs.data() + (n * l.c + c) * sp;
        for (std::int64_t i = 0; i < sp; ++i) {
          const double d = static_cast<double>(p[i]) - m;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      auto& rm = s.running_mean[static_cast<std::size_t>(c)];
      auto& rv = s.running_var[static_cast<std::size_t>(c)];
      rm = static_cast<T>((1.0 - s.momentum) * static_cast<double>(rm) + s.momentum * m);
      rv = static_cast<T>((1.0 - s.momentum) * static_cast<double>(rv) + s.momentum * unbiased);
    } else {
      m = static_cast<double>(s.running_mean[static_cast<std::size_t>(c)]);
      var = static_cast<double>(s.running_var[static_cast<std::size_t>(c)]);
    }
    const double is = 1.0 / std::sqrt(var + s.epsilon);
    (*mean)[static_cast<std::size_t>(c)] = m;
    (*invstd)[static_cast<std::size_t>(c)] = is;
    const double gm = static_cast<double>(s.gamma[static_cast<std::size_t>(c)]);
    const double bt = static_cast<double>(s.beta[static_cast<std::size_t>(c)]);
    for (std::int64_t n = 0; n < l.n; ++n) {
      const T* p = xs.data() + (n * l.c + c) * sp;
      T* q = ys.data() + (n * l.c + c) * sp;
      for (std::int64_t i = 0; i < sp; ++i)
        q[i] = static_cast<T>(gm * (static_cast<double>(p[i]) - m) * is + bt);
    }
  });

  if (detail::needs_record({x.requires_grad(), s.gamma.requires_grad(), s.beta.requires_grad()})) {
    detail::record(y, [l, sp, count, mode, mean, invstd, xi = x.impl_ptr(), gi = s.gamma.impl_ptr(),
                       bi = s.beta.impl_ptr()](std::span<const T> gy) {
      parallel_for(l.c, [&](std::int64_t c) {
        const double m = (*mean)[static_cast<std::size_t>(c)];
        const double is = (*invstd)[static_cast<std::size_t>(c)];
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t n = 0; n < l.n; ++n) {
          const auto off = (n * l.c + c) * sp;
          for (std::int64_t i = 0; i < sp; ++i) {
            const double g = static_cast<double>(gy[static_cast<std::size_t>(off + i)]);
            sum_g += g;
            sum_gx += g * (static_cast<double>(xi->data[static_cast<std::size_t>(off + i)]) - m) * is;
          }
        }
        if (gi->requires_grad) gi->grad_buffer()[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
        if (bi->requires_grad) bi->grad_buffer()[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
      });
      if (!xi->requires_grad) return;
      auto gx = detail::grad_of(xi);
      parallel_for(l.c, [&](std::int64_t c) {
        const double m = (*mean)[static_cast<std::size_t>(c)];
        const double is = (*invstd)[static_cast<std::size_t>(c)];
        const double gm = static_cast<double>(gi->data[static_cast<std::size_t>(c)]);
        if (mode == Mode::eval) {
          for (std::int64_t n = 0; n < l.n; ++n) {
            const auto off = (n * l.c + c) * sp;
            for (std::int64_t i = 0; i < sp; ++i)
              gx[static_cast<std::size_t>(off + i)] +=
                  static_cast<T>(gm * is * static_cast<double>(gy[static_cast<std::size_t>(off + i)]));
          }
          return;
        }
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t n = 0; n < l.n; ++n) {
          const auto off = (n * l.c + c) * sp;
          for (std::int64_t i = 0; i < sp; ++i) {
            const double g = static_cast<double>(gy[static_cast<std::size_t>(off + i)]);
            sum_g += g;
            sum_gx += g * (static_cast<double>(xi->data[static_cast<std::size_t>(off + i)]) - m) * is;
          }
        }
        const double inv_count = 1.0 / static_cast<double>(count);
        for (std::int64_t n = 0; n < l.n; ++n) {
          const auto off = (n * l.c + c) * sp;
          for (std::int64_t i = 0; i < sp; ++i) {
            const auto k = static_cast<std::size_t>(off + i);
            const double xhat = (static_cast<double>(xi->data[k]) - m) * is;
            const double g = static_cast<double>(gy[k]);
            gx[k] += static_cast<T>(gm * is * (g - sum_g * inv_count - xhat * sum_gx * inv_count));
          }
        }
      });
    });
  }
  return y;
}

}  // namespace gpcseg
