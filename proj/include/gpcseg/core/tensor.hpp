#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "gpcseg/core/error.hpp"

namespace gpcseg {

using Shape = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline void check_shape(const Shape& s) {
  if (s.empty()) throw ShapeError("shape must have at least one dimension");
  for (auto d : s)
    if (d < 1) throw ShapeError("non-positive dimension in shape " + to_string(s));
}

template <class T>
class Tensor;

namespace detail {

// Ordered record of executed differentiable operations. Backward replays the
// records in exact reverse execution order, starting at the node that
// produced the loss, and then consumes the tape.
class Tape {
 public:
  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  std::int64_t record(std::function<void()> fn) {
    nodes_.push_back(std::move(fn));
    return static_cast<std::int64_t>(nodes_.size()) - 1;
  }

  std::uint64_t generation() const { return generation_; }
  std::size_t size() const { return nodes_.size(); }

  void replay_from(std::int64_t index) {
    for (std::int64_t i = index; i >= 0; --i) nodes_[static_cast<std::size_t>(i)]();
  }

  void clear() {
    nodes_.clear();
    ++generation_;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::uint64_t generation_ = 0;
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when no gradient has been accumulated
  bool requires_grad = false;
  std::int64_t node = -1;
  std::uint64_t generation = 0;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables tape recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Drops every pending record without running backward.
inline void clear_tape() { detail::Tape::current().clear(); }

namespace init {
struct Zeros {};
struct Constant {
  double value = 0.0;
};
// Normal with variance 2 / fan_in.
struct HeNormal {
  std::int64_t fan_in = 1;
  std::uint64_t seed = 0;
};
}  // namespace init

using Init = std::variant<init::Zeros, init::Constant, init::HeNormal>;

// Dense row-major tensor with shared storage. Copies are shallow handles;
// use clone() for a deep copy.
template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    check_shape(shape);
    impl_->data.assign(static_cast<std::size_t>(gpcseg::numel(shape)), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    check_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != gpcseg::numel(shape))
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, T c) { return Tensor(std::move(shape), c); }
  static Tensor he_normal(Shape shape, std::int64_t fan_in, std::uint64_t seed) {
    Rng rng(seed);
    return he_normal(std::move(shape), fan_in, rng);
  }
  static Tensor he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
    if (fan_in < 1) throw ShapeError("he_normal requires fan_in >= 1");
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
    return t;
  }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<T> data() & { return impl_->data; }
  std::span<const T> data() const& { return impl_->data; }
  // Copy for temporaries, so `for (auto v : f().data())` stays valid.
  std::vector<T> data() && { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  bool all_finite() const {
    return std::all_of(impl_->data.begin(), impl_->data.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor clone() const {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  // Deep copy into another scalar type; gradient state is not carried over.
  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(impl_->shape, std::move(v));
  }

  // Deep copy with a new shape of identical element count. Not taped.
  Tensor reshaped(Shape s) const {
    if (gpcseg::numel(s) != numel())
      throw ShapeError("cannot reshape " + to_string(shape()) + " to " + to_string(s));
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->shape = std::move(s);
    t.impl_->data = impl_->data;
    return t;
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  detail::TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

template <class T>
Tensor<T> create(const Shape& shape, const Init& how) {
  check_shape(shape);
  return std::visit(
      [&](const auto& spec) -> Tensor<T> {
        using S = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<S, init::Zeros>)
          return Tensor<T>::zeros(shape);
        else if constexpr (std::is_same_v<S, init::Constant>)
          return Tensor<T>::constant(shape, static_cast<T>(spec.value));
        else
          return Tensor<T>::he_normal(shape, spec.fan_in, spec.seed);
      },
      how);
}

namespace detail {

inline bool needs_record(std::initializer_list<bool> flags) {
  if (!grad_enabled()) return false;
  for (bool f : flags)
    if (f) return true;
  return false;
}

// Registers `out` as produced by a differentiable op. `fn` receives the
// output gradient and must accumulate (+=) into the inputs' grad buffers.
template <class T, class Fn>
void record(Tensor<T>& out, Fn&& fn) {
  auto& tape = Tape::current();
  auto out_impl = out.impl_ptr();
  out_impl->requires_grad = true;
  out_impl->node = tape.record([out_impl, f = std::forward<Fn>(fn)]() {
    if (out_impl->grad.empty()) return;
    f(std::span<const T>(out_impl->grad));
  });
  out_impl->generation = tape.generation();
}

template <class T>
std::span<T> grad_of(const std::shared_ptr<TensorImpl<T>>& impl) {
  return impl->grad_buffer();
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate (+=);
// the tape is consumed.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss");
  auto& tape = detail::Tape::current();
  auto* impl = loss.impl();
  if (impl->node < 0 || impl->generation != tape.generation() ||
      static_cast<std::size_t>(impl->node) >= tape.size())
    throw Error("backward: loss was not produced by taped operations");
  impl->grad_buffer()[0] += T(1);
  tape.replay_from(impl->node);
  tape.clear();
}

}  // namespace gpcseg
