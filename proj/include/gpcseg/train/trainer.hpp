#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpcseg/data/sampler.hpp"
#include "gpcseg/eval/metrics.hpp"
#include "gpcseg/infer/predict.hpp"
#include "gpcseg/train/adam.hpp"
#include "gpcseg/train/checkpoint.hpp"
#include "gpcseg/train/loss.hpp"
#include "gpcseg/train/schedule.hpp"

namespace gpcseg {

struct TrainConfig {
  std::int64_t total_steps = 35000;
  std::int64_t batch_size = 6;
  std::int64_t eval_every = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (total_steps < 1 || batch_size < 1 || eval_every < 1)
      throw ConfigError("total_steps, batch_size and eval_every must be positive");
  }
};

// Seeded case-level split; returns (train indices, validation indices).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_cases(std::size_t n, double val_fraction,
                                                                                std::uint64_t seed) {
  if (n < 2) throw ConfigError("need at least 2 cases to split");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("validation fraction must be in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  auto nv = static_cast<std::size_t>(std::lround(static_cast<double>(n) * val_fraction));
  nv = std::clamp<std::size_t>(nv, 1, n - 1);
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

struct EvalResult {
  double loss = 0;
  std::array<double, 3> dice{};  // indexed like kRegions, mean over cases
};

// Whole-volume eval-mode pass: mean cross-entropy and per-region DICE.
inline EvalResult evaluate_model(Model<float>& model, const std::vector<Case>& cases, const PredictOptions& opt = {}) {
  EvalResult r;
  if (cases.empty()) return r;
  double loss = 0;
  for (const auto& c : cases) {
    const auto pv = predict(model, c, opt);
    const auto& lab = c.label_volume();
    const auto vol = lab.size();
    const auto d = pv.data();
    double s = 0;
    for (std::int64_t v = 0; v < vol; ++v)
      s -= std::log(std::max(static_cast<double>(d[static_cast<std::size_t>(lab.data[static_cast<std::size_t>(v)] * vol + v)]),
                             1e-12));
    loss += s / static_cast<double>(vol);
    const auto pr = regions_from_labels(argmax_seg(pv));
    const auto tr = regions_from_labels(lab);
    for (std::size_t k = 0; k < kRegions.size(); ++k) r.dice[k] += dice(pr.get(kRegions[k]), tr.get(kRegions[k]));
  }
  r.loss = loss / static_cast<double>(cases.size());
  for (auto& d : r.dice) d /= static_cast<double>(cases.size());
  return r;
}

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path log_path;        // empty: no log file
  std::optional<std::filesystem::path> resume_from;
  PredictOptions eval_predict;
  nlohmann::json checkpoint_extra = nlohmann::json::object();
  std::function<void(const nlohmann::json&)> on_record;  // every log record
};

struct TrainResult {
  std::vector<nlohmann::json> log;
  std::int64_t steps = 0;
  double first_loss = 0, last_loss = 0;
  std::optional<EvalResult> last_eval;
};

inline std::string step_dir_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07lld", static_cast<long long>(step));
  return buf;
}

inline TrainResult train_loop(Model<float>& model, const std::vector<Case>& train, const std::vector<Case>& val,
                              const TrainConfig& cfg, const LossConfig& loss_cfg, const LrSchedule& sched,
                              const SamplerConfig& sampler, const TrainOptions& opt = {}) {
  cfg.validate();
  loss_cfg.validate();
  sched.validate();
  sampler.validate();
  if (train.empty()) throw ConfigError("no training cases");
  if (sampler.patch_size % model.config().divisor())
    throw ShapeError("patch size " + std::to_string(sampler.patch_size) + " must be divisible by " +
                     std::to_string(model.config().divisor()));
  for (const auto& c : train)
    if (static_cast<int>(c.modalities.size()) != model.config().in_channels)
      throw ShapeError("case '" + c.id + "' has " + std::to_string(c.modalities.size()) +
                       " modalities, model expects " + std::to_string(model.config().in_channels));
  std::vector<ClassIndex> index;
  for (const auto& c : train) index.emplace_back(c.label_volume());

  auto adam = AdamState<float>::make(model.parameters());
  Rng rng(cfg.seed);
  std::int64_t step = 0;
  if (opt.resume_from) {
    const auto ck = load_checkpoint(*opt.resume_from);
    apply_checkpoint(ck, model, &adam);
    step = ck.step;
    rng = rng_from_string(ck.rng_state);
  }

  std::ofstream log;
  if (!opt.log_path.empty()) {
    log.open(opt.log_path, opt.resume_from ? std::ios::app : std::ios::trunc);
    if (!log) throw FormatError("cannot open log '" + opt.log_path.string() + "'");
  }
  TrainResult res;
  auto emit = [&](const nlohmann::json& rec) {
    if (log.is_open()) log << rec.dump() << '\n' << std::flush;
    if (opt.on_record) opt.on_record(rec);
    res.log.push_back(rec);
  };
  auto checkpoint = [&](const std::filesystem::path& dir) {
    save_checkpoint(make_checkpoint(model, &adam, step, rng, opt.checkpoint_extra), dir);
  };

  bool first = true;
  while (step < cfg.total_steps) {
    const double lr = lr_at(step, sched);
    const auto batch = sample_batch(train, index, sampler, cfg.batch_size, rng);
    model.zero_grad();
    double ce_v = 0, pen_v = 0, total_v = 0;
    try {
      auto logits = model.forward(batch.image, Mode::train);
      auto ce = cross_entropy(logits, batch.labels.data);
      auto pen = penalty(model.parameters(), loss_cfg);
      auto total = add(ce, pen);
      ce_v = ce.item();
      pen_v = pen.item();
      total_v = total.item();
      if (!std::isfinite(total_v)) throw NumericalError("non-finite loss at step " + std::to_string(step));
      backward(total);
      adam_step(adam, model.parameters(), lr);
    } catch (const NumericalError&) {
      clear_tape();
      if (!opt.checkpoint_dir.empty()) checkpoint(opt.checkpoint_dir / "diagnostic");
      throw;
    }
    ++step;
    if (first) res.first_loss = total_v;
    first = false;
    res.last_loss = total_v;
    emit({{"step", step}, {"lr", lr}, {"loss", total_v}, {"cross_entropy", ce_v}, {"penalty", pen_v}});
    if (step % cfg.eval_every == 0) {
      nlohmann::json rec{{"step", step}, {"lr", lr_at(step, sched)}};
      if (!val.empty()) {
        const auto ev = evaluate_model(model, val, opt.eval_predict);
        res.last_eval = ev;
        rec["eval"] = {{"loss", ev.loss}};
        for (std::size_t k = 0; k < kRegions.size(); ++k) rec["eval"]["dice"][region_name(kRegions[k])] = ev.dice[k];
      } else {
        rec["eval"] = nullptr;
      }
      emit(rec);
      if (!opt.checkpoint_dir.empty()) checkpoint(opt.checkpoint_dir / step_dir_name(step));
    }
  }
  if (!opt.checkpoint_dir.empty()) checkpoint(opt.checkpoint_dir / "final");
  res.steps = step;
  return res;
}

}  // namespace gpcseg
