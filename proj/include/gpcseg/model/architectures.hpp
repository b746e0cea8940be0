#pragma once

#include <string>

#include "gpcseg/model/model.hpp"

namespace gpcseg {

namespace detail {

inline std::string lvl(const char* path, int level) { return std::string(path) + std::to_string(level); }

template <class T>
int add_head(Model<T>& m, int from, std::int64_t channels, Rng& rng) {
  return m.add_node("head", std::make_unique<ConvLayer<T>>(ConvKernel<T>::make(channels, m.config().num_classes, {1, 1, 1}, rng)),
                    {from});
}

template <class T>
int add_up(Model<T>& m, int level, int from, std::int64_t c_in, std::int64_t c_out, Rng& rng) {
  return m.add_node(lvl("dec", level) + ".up",
                    std::make_unique<TransposedConvLayer<T>>(
                        ConvKernel<T>::make_transposed(c_in, c_out, {2, 2, 2}, {2, 2, 2}, rng)),
                    {from}, level);
}

template <class T>
int add_res(Model<T>& m, const std::string& name, int from, std::int64_t c_in, std::int64_t c_out, bool final_act,
            Rng& rng, int level, Stage stage = Stage::none) {
  return m.add_node(name, std::make_unique<ResidualLayer<T>>(ResidualBlock<T>::make(c_in, c_out, final_act, rng)),
                    {from}, level, stage);
}

template <class T>
void require_kind(const ArchConfig& cfg, ArchKind kind) {
  cfg.validate();
  if (cfg.kind != kind)
    throw ConfigError(std::string("config kind is ") + arch_kind_name(cfg.kind) + ", builder expects " +
                      arch_kind_name(kind));
}

}  // namespace detail

// Contracting path of two conv-BN-ReLU stages per level with 2^3 max
// pooling between levels; expanding path of transposed conv, skip
// concatenation and two conv-BN-ReLU stages; 1x1x1 classifier.
template <class T = float>
Model<T> build_unet3d(const ArchConfig& cfg, std::uint64_t seed = 0) {
  detail::require_kind<T>(cfg, ArchKind::unet);
  Rng rng(seed);
  Model<T> m(cfg);
  const auto w = cfg.widths();
  std::vector<int> skip(static_cast<std::size_t>(cfg.levels));
  int cur = 0;
  std::int64_t c = cfg.in_channels;
  auto stage = [&](const std::string& name, int from, std::int64_t ci, std::int64_t co, int level) {
    return m.add_node(name,
                      std::make_unique<ConvBnActLayer<T>>(ConvKernel<T>::make(ci, co, {3, 3, 3}, rng), Activation::relu),
                      {from}, level);
  };
  for (int l = 0; l < cfg.levels; ++l) {
    if (l > 0) cur = m.add_node(detail::lvl("enc", l) + ".pool", std::make_unique<MaxPoolLayer<T>>(), {cur}, l);
    cur = stage(detail::lvl("enc", l) + ".block0", cur, c, w[l], l);
    cur = stage(detail::lvl("enc", l) + ".block1", cur, w[l], w[l], l);
    c = w[l];
    skip[static_cast<std::size_t>(l)] = cur;
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int up = detail::add_up(m, l, cur, c, w[l], rng);
    cur = m.add_node(detail::lvl("dec", l) + ".concat", std::make_unique<ConcatLayer<T>>(),
                     {skip[static_cast<std::size_t>(l)], up}, l);
    cur = stage(detail::lvl("dec", l) + ".block0", cur, 2 * w[l], w[l], l);
    cur = stage(detail::lvl("dec", l) + ".block1", cur, w[l], w[l], l);
    c = w[l];
  }
  detail::add_head(m, cur, c, rng);
  return m;
}

// UNet topology with each double-conv stage replaced by two residual blocks.
template <class T = float>
Model<T> build_resunet(const ArchConfig& cfg, std::uint64_t seed = 0) {
  detail::require_kind<T>(cfg, ArchKind::resunet);
  Rng rng(seed);
  Model<T> m(cfg);
  const auto w = cfg.widths();
  std::vector<int> skip(static_cast<std::size_t>(cfg.levels));
  int cur = 0;
  std::int64_t c = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    if (l > 0) cur = m.add_node(detail::lvl("enc", l) + ".pool", std::make_unique<MaxPoolLayer<T>>(), {cur}, l);
    cur = detail::add_res(m, detail::lvl("enc", l) + ".res0", cur, c, w[l], true, rng, l);
    cur = detail::add_res(m, detail::lvl("enc", l) + ".res1", cur, w[l], w[l], true, rng, l);
    c = w[l];
    skip[static_cast<std::size_t>(l)] = cur;
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int up = detail::add_up(m, l, cur, c, w[l], rng);
    cur = m.add_node(detail::lvl("dec", l) + ".concat", std::make_unique<ConcatLayer<T>>(),
                     {skip[static_cast<std::size_t>(l)], up}, l);
    cur = detail::add_res(m, detail::lvl("dec", l) + ".res0", cur, 2 * w[l], w[l], true, rng, l);
    cur = detail::add_res(m, detail::lvl("dec", l) + ".res1", cur, w[l], w[l], true, rng, l);
    c = w[l];
  }
  detail::add_head(m, cur, c, rng);
  return m;
}

// ResUNet encoder; every level's skip connection runs through a GPC module
// and a residual block without final activation. The decoder upsamples to
// the GPC width, sums with the skip path, applies ELU, then two residual
// blocks.
template <class T = float>
Model<T> build_contextnet(const ArchConfig& cfg, std::uint64_t seed = 0) {
  detail::require_kind<T>(cfg, ArchKind::contextnet);
  Rng rng(seed);
  Model<T> m(cfg);
  const auto w = cfg.widths();
  const std::int64_t g = cfg.gpc_width();
  std::vector<int> skip(static_cast<std::size_t>(cfg.levels));
  int cur = 0;
  std::int64_t c = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    if (l > 0) cur = m.add_node(detail::lvl("enc", l) + ".pool", std::make_unique<MaxPoolLayer<T>>(), {cur}, l);
    cur = detail::add_res(m, detail::lvl("enc", l) + ".res0", cur, c, w[l], true, rng, l);
    cur = detail::add_res(m, detail::lvl("enc", l) + ".res1", cur, w[l], w[l], true, rng, l,
                          Stage::pre_gpc_residual);
    c = w[l];
    const int gpc = m.add_node(detail::lvl("skip", l) + ".gpc",
                               std::make_unique<GpcLayer<T>>(GpcModule<T>::make(w[l], g, cfg.gpc_kernel, rng)), {cur},
                               l, Stage::gpc);
    skip[static_cast<std::size_t>(l)] =
        detail::add_res(m, detail::lvl("skip", l) + ".res", gpc, g, g, false, rng, l, Stage::post_gpc_residual);
  }
  cur = skip.back();
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int up = detail::add_up(m, l, cur, g, g, rng);
    cur = m.add_node(detail::lvl("dec", l) + ".sum", std::make_unique<AddLayer<T>>(),
                     {skip[static_cast<std::size_t>(l)], up}, l);
    cur = m.add_node(detail::lvl("dec", l) + ".elu", std::make_unique<ActivationLayer<T>>(Activation::elu), {cur}, l);
    cur = detail::add_res(m, detail::lvl("dec", l) + ".res0", cur, g, g, true, rng, l);
    cur = detail::add_res(m, detail::lvl("dec", l) + ".res1", cur, g, g, true, rng, l);
  }
  detail::add_head(m, cur, g, rng);
  return m;
}

template <class T = float>
Model<T> build_model(const ArchConfig& cfg, std::uint64_t seed = 0) {
  switch (cfg.kind) {
    case ArchKind::unet: return build_unet3d<T>(cfg, seed);
    case ArchKind::resunet: return build_resunet<T>(cfg, seed);
    case ArchKind::contextnet: return build_contextnet<T>(cfg, seed);
  }
  throw ConfigError("unknown architecture kind");
}

template <class T>
std::int64_t count_parameters(const Model<T>& m) {
  return m.count_parameters();
}

}  // namespace gpcseg
