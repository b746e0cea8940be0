#pragma once

#include <cmath>
#include <string>

#include "gpcseg/core/parallel.hpp"
#include "gpcseg/core/tensor.hpp"

namespace gpcseg {

enum class Elementwise { add, sub, mul };
enum class Reduction { sum, mean };

namespace detail {

template <class T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericalError(std::string(op) + ": non-finite value in result");
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

}  // namespace detail

template <class T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise");
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  const auto n = static_cast<std::size_t>(out.numel());
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
      break;
  }
  detail::require_finite(out, "elementwise");
  if (detail::needs_record({a.requires_grad(), b.requires_grad()})) {
    detail::record(out, [kind, ai = a.impl_ptr(), bi = b.impl_ptr()](std::span<const T> g) {
      const auto n = g.size();
      if (ai->requires_grad) {
        auto ga = detail::grad_of(ai);
        if (kind == Elementwise::mul)
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bi->data[i];
        else
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bi->requires_grad) {
        auto gb = detail::grad_of(bi);
        if (kind == Elementwise::mul)
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * ai->data[i];
        else if (kind == Elementwise::sub)
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        else
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(Elementwise::add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(Elementwise::sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(Elementwise::mul, a, b);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
  detail::require_finite(out, "scale");
  if (detail::needs_record({a.requires_grad()})) {
    detail::record(out, [factor, ai = a.impl_ptr()](std::span<const T> g) {
      auto ga = detail::grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

namespace detail {

// Sequential double accumulation in deterministic mode; chunked partial sums
// otherwise (result then depends on the thread count).
template <class T>
double accumulate(std::span<const T> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  if (deterministic() || num_threads() == 1 || n < (1 << 16)) {
    double s = 0.0;
    for (auto x : v) s += static_cast<double>(x);
    return s;
  }
  const std::int64_t chunks = num_threads();
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(chunks, [&](std::int64_t c) {
    const auto lo = n * c / chunks;
    const auto hi = n * (c + 1) / chunks;
    double s = 0.0;
    for (auto i = lo; i < hi; ++i) s += static_cast<double>(v[static_cast<std::size_t>(i)]);
    partial[static_cast<std::size_t>(c)] = s;
  });
  double s = 0.0;
  for (auto p : partial) s += p;
  return s;
}

}  // namespace detail

template <class T>
Tensor<T> reduce(Reduction kind, const Tensor<T>& x) {
  const double total = detail::accumulate<T>(x.data());
  const double n = static_cast<double>(x.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(kind == Reduction::sum ? total : total / n));
  detail::require_finite(out, "reduce");
  if (detail::needs_record({x.requires_grad()})) {
    const T factor = kind == Reduction::sum ? T(1) : static_cast<T>(1.0 / n);
    detail::record(out, [factor, xi = x.impl_ptr()](std::span<const T> g) {
      auto gx = detail::grad_of(xi);
      const T v = g[0] * factor;
      for (auto& e : gx) e += v;
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  return reduce(Reduction::sum, x);
}
template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return reduce(Reduction::mean, x);
}

// Volumetric tensors are (C,D,H,W) or (N,C,D,H,W); a 4-D tensor is a batch
// of one.
struct VolumeLayout {
  std::int64_t n = 1, c = 1, d = 1, h = 1, w = 1;
  std::int64_t spatial() const { return d * h * w; }
  Shape shape_like(std::size_t ndim, std::int64_t channels) const {
    if (ndim == 4) return {channels, d, h, w};
    return {n, channels, d, h, w};
  }
};

inline VolumeLayout volume_layout(const Shape& s, const char* op) {
  if (s.size() == 4) return {1, s[0], s[1], s[2], s[3]};
  if (s.size() == 5) return {s[0], s[1], s[2], s[3], s[4]};
  throw ShapeError(std::string(op) + ": expected (C,D,H,W) or (N,C,D,H,W), got " + to_string(s));
}

// Channel concatenation of two volumes with equal batch and spatial dims.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  auto la = volume_layout(a.shape(), "concat_channels");
  auto lb = volume_layout(b.shape(), "concat_channels");
  if (a.ndim() != b.ndim() || la.n != lb.n || la.d != lb.d || la.h != lb.h || la.w != lb.w)
    throw ShapeError("concat_channels: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  const auto sp = la.spatial();
  Tensor<T> out(la.shape_like(a.ndim(), la.c + lb.c));
  auto z = out.data();
  for (std::int64_t n = 0; n < la.n; ++n) {
    std::copy_n(a.data().begin() + n * la.c * sp, la.c * sp, z.begin() + n * (la.c + lb.c) * sp);
    std::copy_n(b.data().begin() + n * lb.c * sp, lb.c * sp,
                z.begin() + (n * (la.c + lb.c) + la.c) * sp);
  }
  if (detail::needs_record({a.requires_grad(), b.requires_grad()})) {
    detail::record(out, [la, lb, sp, ai = a.impl_ptr(), bi = b.impl_ptr()](std::span<const T> g) {
      const auto ct = la.c + lb.c;
      for (std::int64_t n = 0; n < la.n; ++n) {
        if (ai->requires_grad) {
          auto ga = detail::grad_of(ai);
          for (std::int64_t i = 0; i < la.c * sp; ++i) ga[n * la.c * sp + i] += g[n * ct * sp + i];
        }
        if (bi->requires_grad) {
          auto gb = detail::grad_of(bi);
          for (std::int64_t i = 0; i < lb.c * sp; ++i)
            gb[n * lb.c * sp + i] += g[(n * ct + la.c) * sp + i];
        }
      }
    });
  }
  return out;
}

}  // namespace gpcseg
