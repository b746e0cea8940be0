#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpcseg/core/error.hpp"
#include "gpcseg/data/blob.hpp"
#include "gpcseg/model/architectures.hpp"
#include "gpcseg/train/adam.hpp"

// Checkpoint directory: manifest.json + tensors.f32 (all tensors packed
// back to back as little-endian float32, offsets in elements).

namespace gpcseg {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ArchConfig arch;
  std::int64_t step = 0;
  std::string rng_state;  // textual mt19937_64 state
  std::int64_t adam_t = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::map<std::string, Tensor<float>> params, buffers, adam_m, adam_v;
  nlohmann::json extra = nlohmann::json::object();
};

inline std::string rng_to_string(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng r;
  std::istringstream is(s);
  is >> r;
  if (!is) throw FormatError("corrupt RNG state in checkpoint");
  return r;
}

inline Checkpoint make_checkpoint(const Model<float>& model, const AdamState<float>* adam, std::int64_t step,
                                  const Rng& rng, nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint c;
  c.arch = model.config();
  c.step = step;
  c.rng_state = rng_to_string(rng);
  c.extra = std::move(extra);
  for (const auto& p : model.parameters()) c.params[p.name] = p.tensor.clone();
  for (const auto& b : model.buffers()) c.buffers[b.name] = b.tensor.clone();
  if (adam) {
    c.adam_t = adam->t;
    c.beta1 = adam->beta1;
    c.beta2 = adam->beta2;
    c.epsilon = adam->epsilon;
    const auto& ps = model.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      c.adam_m[ps[i].name] = adam->m[i].clone();
      c.adam_v[ps[i].name] = adam->v[i].clone();
    }
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["arch"] = c.arch;
  m["step"] = c.step;
  m["rng_state"] = c.rng_state;
  m["adam"] = {{"t", c.adam_t}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
  m["extra"] = c.extra;
  m["tensors"] = nlohmann::json::array();
  std::vector<float> packed;
  auto add = [&](const char* group, const std::map<std::string, Tensor<float>>& ts) {
    for (const auto& [name, t] : ts) {
      m["tensors"].push_back({{"group", group}, {"name", name}, {"shape", t.shape()}, {"offset", packed.size()}});
      packed.insert(packed.end(), t.data().begin(), t.data().end());
    }
  };
  add("param", c.params);
  add("buffer", c.buffers);
  add("adam_m", c.adam_m);
  add("adam_v", c.adam_v);
  m["total_elements"] = packed.size();
  blob::write_f32(dir / "tensors.f32", packed);
  blob::write_json(dir / "manifest.json", m);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  const auto m = blob::read_json(path);
  Checkpoint c;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw FormatError("checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointFormatVersion) + ")");
    c.arch = m.at("arch").get<ArchConfig>();
    c.step = m.at("step").get<std::int64_t>();
    c.rng_state = m.at("rng_state").get<std::string>();
    const auto& a = m.at("adam");
    c.adam_t = a.at("t").get<std::int64_t>();
    c.beta1 = a.at("beta1").get<double>();
    c.beta2 = a.at("beta2").get<double>();
    c.epsilon = a.at("epsilon").get<double>();
    if (m.contains("extra")) c.extra = m.at("extra");
    const auto total = m.at("total_elements").get<std::size_t>();
    const auto data = blob::read_f32(dir / "tensors.f32", total, "checkpoint tensors");
    for (const auto& e : m.at("tensors")) {
      const auto group = e.at("group").get<std::string>();
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      check_shape(shape);
      const auto n = static_cast<std::size_t>(numel(shape));
      if (offset + n > total) throw FormatError("tensor '" + name + "' lies outside the checkpoint blob");
      Tensor<float> t(shape, std::vector<float>(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                                data.begin() + static_cast<std::ptrdiff_t>(offset + n)));
      if (group == "param") c.params[name] = t;
      else if (group == "buffer") c.buffers[name] = t;
      else if (group == "adam_m") c.adam_m[name] = t;
      else if (group == "adam_v") c.adam_v[name] = t;
      else throw FormatError("unknown tensor group '" + group + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint manifest '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint architecture: ") + e.what());
  }
  return c;
}

namespace detail {
inline void match_names(const std::vector<NamedTensor<float>>& want, const std::map<std::string, Tensor<float>>& have,
                        const char* what) {
  std::set<std::string> w;
  for (const auto& p : want) w.insert(p.name);
  std::vector<std::string> missing, extra;
  for (const auto& n : w)
    if (!have.count(n)) missing.push_back(n);
  for (const auto& [n, _] : have)
    if (!w.count(n)) extra.push_back(n);
  if (missing.empty() && extra.empty()) {
    for (const auto& p : want)
      if (have.at(p.name).shape() != p.tensor.shape())
        throw ShapeError(std::string(what) + " '" + p.name + "' has shape " + to_string(have.at(p.name).shape()) +
                         " in checkpoint, model expects " + to_string(p.tensor.shape()));
    return;
  }
  std::string msg = std::string("checkpoint ") + what + "s do not match the model;";
  auto list = [&](const char* label, const std::vector<std::string>& names) {
    if (names.empty()) return;
    msg += std::string(" ") + label + ":";
    for (std::size_t i = 0; i < names.size(); ++i) msg += (i ? ", " : " ") + names[i];
    msg += ";";
  };
  list("missing", missing);
  list("extra", extra);
  throw ShapeError(msg);
}
}  // namespace detail

// Copies parameters and buffers into `model`. Throws ShapeError listing
// missing/extra names when the checkpoint was written for another graph.
inline void apply_checkpoint(const Checkpoint& c, Model<float>& model, AdamState<float>* adam = nullptr) {
  detail::match_names(model.parameters(), c.params, "parameter");
  detail::match_names(model.buffers(), c.buffers, "buffer");
  for (const auto& p : model.parameters()) {
    Tensor<float> t = p.tensor;
    const auto src = c.params.at(p.name).data();
    std::copy(src.begin(), src.end(), t.data().begin());
  }
  for (const auto& b : model.buffers()) {
    Tensor<float> t = b.tensor;
    const auto src = c.buffers.at(b.name).data();
    std::copy(src.begin(), src.end(), t.data().begin());
  }
  if (adam) {
    *adam = AdamState<float>::make(model.parameters());
    adam->t = c.adam_t;
    adam->beta1 = c.beta1;
    adam->beta2 = c.beta2;
    adam->epsilon = c.epsilon;
    if (c.adam_t > 0) {
      detail::match_names(model.parameters(), c.adam_m, "optimizer moment");
      detail::match_names(model.parameters(), c.adam_v, "optimizer moment");
      const auto& ps = model.parameters();
      for (std::size_t i = 0; i < ps.size(); ++i) {
        adam->m[i] = c.adam_m.at(ps[i].name).clone();
        adam->v[i] = c.adam_v.at(ps[i].name).clone();
      }
    }
  }
}

// Model rebuilt from the checkpoint's architecture, weights loaded.
inline Model<float> load_model(const std::filesystem::path& dir) {
  const auto c = load_checkpoint(dir);
  auto model = build_model<float>(c.arch, 0);
  apply_checkpoint(c, model);
  return model;
}

}  // namespace gpcseg
