#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gpcseg/model/arch_config.hpp"
#include "gpcseg/model/layers.hpp"

namespace gpcseg {

// Position of a node around a skip-connection GPC module.
enum class Stage { none, pre_gpc_residual, gpc, post_gpc_residual };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::none: return "none";
    case Stage::pre_gpc_residual: return "pre_gpc_residual";
    case Stage::gpc: return "gpc";
    case Stage::post_gpc_residual: return "post_gpc_residual";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "pre_gpc_residual" || s == "pre") return Stage::pre_gpc_residual;
  if (s == "gpc") return Stage::gpc;
  if (s == "post_gpc_residual" || s == "post") return Stage::post_gpc_residual;
  throw ConfigError("unknown stage '" + s + "' (expected pre_gpc_residual, gpc or post_gpc_residual)");
}

template <class T>
struct Node {
  std::string name;
  std::unique_ptr<Layer<T>> layer;
  std::vector<int> inputs;
  int level = -1;
  Stage stage = Stage::none;
};

// Acyclic layer graph stored in execution order. Node 0 is the input.
// Parameters are registered under "<node>.<sub>.<tensor>" paths.
template <class T = float>
class Model {
 public:
  using Capture = std::function<void(const Node<T>&, const Tensor<T>&)>;

  explicit Model(ArchConfig cfg) : config_(std::move(cfg)) {
    add_node("input", std::make_unique<InputLayer<T>>(), {});
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ArchConfig& config() const { return config_; }
  const std::vector<Node<T>>& nodes() const { return nodes_; }

  int add_node(std::string name, std::unique_ptr<Layer<T>> layer, std::vector<int> inputs, int level = -1,
               Stage stage = Stage::none) {
    for (int i : inputs)
      if (i < 0 || i >= static_cast<int>(nodes_.size()))
        throw ConfigError("node '" + name + "' references a node that does not precede it");
    if (index_.count(name)) throw ConfigError("duplicate node name '" + name + "'");
    std::vector<NamedTensor<T>> owned;
    layer->collect(name, owned);
    for (auto& t : owned) {
      if (t.role == ParamRole::buffer)
        buffers_.push_back(t);
      else {
        t.tensor.set_requires_grad(true);
        params_.push_back(t);
      }
    }
    nodes_.push_back({std::move(name), std::move(layer), std::move(inputs), level, stage});
    index_[nodes_.back().name] = static_cast<int>(nodes_.size()) - 1;
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Node<T>& node(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no node named '" + name + "'");
    return nodes_[static_cast<std::size_t>(it->second)];
  }
  bool has_node(const std::string& name) const { return index_.count(name) > 0; }

  // Trainable tensors (weights, biases, batch-norm affine).
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  // Non-trainable state (batch-norm running statistics).
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

  std::int64_t count_parameters() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  std::int64_t count_parameters(const Node<T>& node) const {
    std::int64_t n = 0;
    const auto prefix = node.name + ".";
    for (const auto& p : params_)
      if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void check_input(const Shape& s) const {
    const auto l = volume_layout(s, "model forward");
    if (l.c != config_.in_channels)
      throw ShapeError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                       std::to_string(l.c));
    const auto div = config_.divisor();
    if (l.d % div || l.h % div || l.w % div)
      throw ShapeError("spatial dims " + to_string({l.d, l.h, l.w}) + " must be divisible by " +
                       std::to_string(div));
  }

  // Logits (num_classes, D, H, W), or batched (N, num_classes, D, H, W).
  Tensor<T> forward(const Tensor<T>& x, Mode mode, const Capture& capture = {}) {
    check_input(x.shape());
    std::vector<int> last_use(nodes_.size(), -1);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (int j : nodes_[i].inputs) last_use[static_cast<std::size_t>(j)] = static_cast<int>(i);
    std::vector<Tensor<T>> values(nodes_.size());
    values[0] = x;
    if (capture) capture(nodes_[0], x);
    std::vector<Tensor<T>> args;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      args.clear();
      for (int j : nodes_[i].inputs) args.push_back(values[static_cast<std::size_t>(j)]);
      values[i] = nodes_[i].layer->forward(args, mode);
      if (capture) capture(nodes_[i], values[i]);
      for (int j : nodes_[i].inputs)
        if (last_use[static_cast<std::size_t>(j)] == static_cast<int>(i)) values[static_cast<std::size_t>(j)] = {};
    }
    return values.back();
  }

  // Output shape of every node for a given input shape, in node order.
  std::vector<Shape> output_shapes(const Shape& input) const {
    check_input(input);
    std::vector<Shape> shapes(nodes_.size());
    shapes[0] = input;
    std::vector<Shape> args;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      args.clear();
      for (int j : nodes_[i].inputs) args.push_back(shapes[static_cast<std::size_t>(j)]);
      shapes[i] = nodes_[i].layer->output_shape(args);
    }
    return shapes;
  }

  std::vector<const Node<T>*> nodes_of_kind(std::string_view kind) const {
    std::vector<const Node<T>*> out;
    for (const auto& n : nodes_)
      if (kind == n.layer->kind()) out.push_back(&n);
    return out;
  }

 private:
  ArchConfig config_;
  std::vector<Node<T>> nodes_;
  std::map<std::string, int> index_;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;
};

}  // namespace gpcseg
