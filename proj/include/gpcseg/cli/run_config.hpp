#pragma once

#include <algorithm>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpcseg/data/case.hpp"
#include "gpcseg/data/normalize.hpp"
#include "gpcseg/data/sampler.hpp"
#include "gpcseg/infer/predict.hpp"
#include "gpcseg/model/arch_config.hpp"
#include "gpcseg/train/loss.hpp"
#include "gpcseg/train/schedule.hpp"
#include "gpcseg/train/trainer.hpp"

namespace gpcseg {

struct DataConfig {
  std::filesystem::path cases;  // directory of case directories
  std::vector<std::string> modalities{"t1", "t1gd", "t2", "flair"};
  Normalization normalization = Normalization::zscore;
  double val_fraction = 0.3;
  bool allow_any_modalities = false;
};

// Everything a training run needs. arch.in_channels always equals the
// number of selected modalities.
struct RunConfig {
  ArchConfig arch = reference_config(ArchKind::contextnet, 2);
  SamplerConfig sampler;
  TrainConfig train;
  LossConfig loss;
  LrSchedule schedule;
  PredictOptions predict;
  DataConfig data;
  std::filesystem::path output = "run";
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
};

// T1-Gd and FLAIR must stay in every ablation unless explicitly waived.
inline void validate_modality_selection(const std::vector<std::string>& mods, bool allow_any) {
  validate_modality_names(mods);
  if (mods.size() < 2) throw ConfigError("at least two modalities are required");
  if (allow_any) return;
  for (const char* need : {"t1gd", "flair"})
    if (std::find(mods.begin(), mods.end(), need) == mods.end())
      throw ConfigError(std::string("modality set must include ") + need +
                        " (pass --allow-any-modalities to override)");
}

inline void RunConfig::validate() const {
  validate_modality_selection(data.modalities, data.allow_any_modalities);
  if (arch.in_channels != static_cast<int>(data.modalities.size()))
    throw ConfigError("arch.in_channels (" + std::to_string(arch.in_channels) + ") must equal the number of modalities (" +
                      std::to_string(data.modalities.size()) + ")");
  arch.validate();
  sampler.validate();
  train.validate();
  loss.validate();
  schedule.validate();
  if (!(data.val_fraction > 0 && data.val_fraction < 1)) throw ConfigError("data.val_fraction must be in (0, 1)");
  if (sampler.patch_size % arch.divisor())
    throw ConfigError("sampler.patch_size must be divisible by " + std::to_string(arch.divisor()));
  if (predict.window < 1 || predict.overlap < 0 || predict.overlap >= predict.window)
    throw ConfigError("predict.window must be positive and predict.overlap in [0, window)");
}

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class V>
void read_if(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline PredictMode parse_predict_mode(const std::string& s) {
  if (s == "full") return PredictMode::full;
  if (s == "sliding") return PredictMode::sliding;
  throw ConfigError("unknown predict mode '" + s + "' (expected full or sliding)");
}

inline const char* predict_mode_name(PredictMode m) { return m == PredictMode::full ? "full" : "sliding"; }

// Missing keys keep their defaults; unknown keys are rejected at every level.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read_if;
  using detail::require_keys;
  RunConfig c;
  require_keys(j, "run config",
               {"arch", "sampler", "train", "loss", "schedule", "predict", "data", "output", "seed", "deterministic"});
  try {
    if (j.contains("arch")) from_json(j.at("arch"), c.arch);
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      require_keys(s, "sampler", {"class_probs", "patch_size"});
      if (s.contains("class_probs")) {
        const auto v = s.at("class_probs").get<std::vector<double>>();
        if (v.size() != 4) throw ConfigError("sampler.class_probs must have 4 entries");
        std::copy(v.begin(), v.end(), c.sampler.class_probs.begin());
      }
      read_if(s, "patch_size", c.sampler.patch_size);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      require_keys(t, "train", {"total_steps", "batch_size", "eval_every"});
      read_if(t, "total_steps", c.train.total_steps);
      read_if(t, "batch_size", c.train.batch_size);
      read_if(t, "eval_every", c.train.eval_every);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      require_keys(l, "loss", {"l1_coeff", "l2_coeff"});
      read_if(l, "l1_coeff", c.loss.l1_coeff);
      read_if(l, "l2_coeff", c.loss.l2_coeff);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      require_keys(s, "schedule", {"initial", "decay_rate", "decay_every", "staircase"});
      read_if(s, "initial", c.schedule.initial);
      read_if(s, "decay_rate", c.schedule.decay_rate);
      read_if(s, "decay_every", c.schedule.decay_every);
      read_if(s, "staircase", c.schedule.staircase);
    }
    if (j.contains("predict")) {
      const auto& p = j.at("predict");
      require_keys(p, "predict", {"mode", "window", "overlap"});
      if (p.contains("mode")) c.predict.mode = parse_predict_mode(p.at("mode").get<std::string>());
      read_if(p, "window", c.predict.window);
      read_if(p, "overlap", c.predict.overlap);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      require_keys(d, "data", {"cases", "modalities", "normalization", "val_fraction", "allow_any_modalities"});
      if (d.contains("cases")) c.data.cases = d.at("cases").get<std::string>();
      read_if(d, "modalities", c.data.modalities);
      if (d.contains("normalization")) c.data.normalization = parse_normalization(d.at("normalization").get<std::string>());
      read_if(d, "val_fraction", c.data.val_fraction);
      read_if(d, "allow_any_modalities", c.data.allow_any_modalities);
    }
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    read_if(j, "seed", c.seed);
    read_if(j, "deterministic", c.deterministic);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (!(j.contains("arch") && j.at("arch").contains("in_channels")))
    c.arch.in_channels = static_cast<int>(c.data.modalities.size());
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json arch;
  to_json(arch, c.arch);
  return {{"arch", arch},
          {"sampler", {{"class_probs", c.sampler.class_probs}, {"patch_size", c.sampler.patch_size}}},
          {"train", {{"total_steps", c.train.total_steps}, {"batch_size", c.train.batch_size}, {"eval_every", c.train.eval_every}}},
          {"loss", {{"l1_coeff", c.loss.l1_coeff}, {"l2_coeff", c.loss.l2_coeff}}},
          {"schedule",
           {{"initial", c.schedule.initial},
            {"decay_rate", c.schedule.decay_rate},
            {"decay_every", c.schedule.decay_every},
            {"staircase", c.schedule.staircase}}},
          {"predict", {{"mode", predict_mode_name(c.predict.mode)}, {"window", c.predict.window}, {"overlap", c.predict.overlap}}},
          {"data",
           {{"cases", c.data.cases.string()},
            {"modalities", c.data.modalities},
            {"normalization", normalization_name(c.data.normalization)},
            {"val_fraction", c.data.val_fraction},
            {"allow_any_modalities", c.data.allow_any_modalities}}},
          {"output", c.output.string()},
          {"seed", c.seed},
          {"deterministic", c.deterministic}};
}

// A single case directory, or a directory whose subdirectories are cases
// (sorted by name).
inline std::vector<std::filesystem::path> case_dirs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "manifest.json")) return {dir};
  if (!fs::is_directory(dir)) throw FormatError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw FormatError("no case directories under '" + dir.string() + "'");
  return out;
}

// Loads, selects and normalizes cases for a model.
inline std::vector<Case> load_cases(const std::filesystem::path& dir, const std::vector<std::string>& modalities,
                                    Normalization norm) {
  std::vector<Case> out;
  for (const auto& d : case_dirs(dir)) out.push_back(normalize(load_case(d).select(modalities), norm));
  return out;
}

}  // namespace gpcseg
