#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gpcseg/cli/run_config.hpp"
#include "gpcseg/core/parallel.hpp"
#include "gpcseg/data/nifti.hpp"
#include "gpcseg/data/phantom.hpp"
#include "gpcseg/eval/metrics.hpp"
#include "gpcseg/infer/featmaps.hpp"
#include "gpcseg/infer/predict.hpp"
#include "gpcseg/train/checkpoint.hpp"
#include "gpcseg/train/gradcheck_suite.hpp"
#include "gpcseg/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace gpcseg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  int threads = 0;
  bool deterministic = true;

  void apply() const {
    if (threads > 0) set_num_threads(threads);
    set_deterministic(deterministic);
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--threads", c.threads, "Worker thread cap (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
  app->add_flag("--deterministic,!--nondeterministic", c.deterministic,
                "Pin reduction order for bit-reproducible results (default on)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

Dims parse_dims(const std::string& s) {
  const auto parts = split_list(s);
  try {
    if (parts.size() == 1) {
      const auto n = std::stoll(parts[0]);
      return {n, n, n};
    }
    if (parts.size() == 3) return {std::stoll(parts[0]), std::stoll(parts[1]), std::stoll(parts[2])};
  } catch (const std::exception&) {
  }
  throw ConfigError("dims must be N or D,H,W, got '" + s + "'");
}

// Modalities and normalization a checkpoint was trained with.
struct ModelInputs {
  std::vector<std::string> modalities;
  Normalization normalization = Normalization::zscore;
};

ModelInputs model_inputs(const Checkpoint& ck) {
  ModelInputs in;
  if (ck.extra.contains("modalities")) {
    in.modalities = ck.extra.at("modalities").get<std::vector<std::string>>();
  } else {
    const auto& canon = canonical_modalities();
    if (ck.arch.in_channels != 4)
      throw FormatError("checkpoint does not record its modalities and has " + std::to_string(ck.arch.in_channels) +
                        " input channels");
    in.modalities.assign(canon.begin(), canon.end());
  }
  if (ck.extra.contains("normalization"))
    in.normalization = parse_normalization(ck.extra.at("normalization").get<std::string>());
  return in;
}

struct LoadedModel {
  Model<float> model;
  ModelInputs inputs;
};

LoadedModel load_for_inference(const fs::path& dir) {
  auto ck = load_checkpoint(dir);
  auto inputs = model_inputs(ck);
  auto model = build_model<float>(ck.arch, 0);
  apply_checkpoint(ck, model);
  return {std::move(model), std::move(inputs)};
}

Case prepare_case(const Case& raw, const ModelInputs& in) {
  return normalize(raw.select(in.modalities), in.normalization);
}

struct PredictFlags {
  std::string mode = "full";
  std::int64_t window = 80;
  std::int64_t overlap = 16;

  PredictOptions options() const { return {parse_predict_mode(mode), window, overlap}; }
};

void add_predict_flags(CLI::App* app, PredictFlags& p) {
  app->add_option("--mode", p.mode, "Whole-volume inference: full or sliding")->check(CLI::IsMember({"full", "sliding"}));
  app->add_option("--window", p.window, "Sliding-window edge length in voxels");
  app->add_option("--overlap", p.overlap, "Voxels shared by neighbouring windows");
}

// Mean of the members' softmax volumes for one raw case.
ProbabilityVolume predict_members(std::vector<LoadedModel>& members, const Case& raw, const PredictOptions& opt) {
  std::vector<ProbabilityVolume> probs;
  for (auto& m : members) probs.push_back(predict(m.model, prepare_case(raw, m.inputs), opt));
  return ensemble(probs);
}

void write_prediction(const Case& raw, const ProbabilityVolume& probs, const fs::path& out, bool with_probs,
                      const std::string& nifti_path) {
  Case pred;
  pred.id = raw.id;
  pred.spacing_mm = raw.spacing_mm;
  pred.labels = argmax_seg(probs);
  save_case(pred, out);
  if (with_probs) blob::write_f32(out / "probabilities.f32", probs.data());
  if (!nifti_path.empty()) {
    Volume<float> v(pred.labels->dims);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = pred.labels->data[i];
    nifti::write(nifti_path, v, raw.spacing_mm, nifti::kUint8);
  }
}

// ---- subcommands ----

struct PhantomArgs {
  fs::path out;
  std::int64_t n = 10;
  std::uint64_t seed = 0;
  std::string dims = "48";
  double noise = 0.05;
  std::string prefix = "phantom";
};

int run_phantom(const PhantomArgs& a) {
  PhantomSetConfig s;
  s.count = a.n;
  s.dims = parse_dims(a.dims);
  s.noise_sigma = a.noise;
  s.seed = a.seed;
  s.id_prefix = a.prefix;
  const auto cases = generate_phantom_set(s);
  fs::create_directories(a.out);
  nlohmann::json index{{"count", a.n}, {"seed", a.seed}, {"dims", s.dims}, {"noise_sigma", a.noise}, {"ids", nlohmann::json::array()}};
  for (const auto& c : cases) {
    save_case(c, a.out / c.id);
    index["ids"].push_back(c.id);
  }
  blob::write_json(a.out / "dataset.json", index);
  std::cout << "wrote " << cases.size() << " phantoms to " << a.out.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string cases, out, modalities, resume, normalization;
  std::int64_t steps = 0, batch = 0, eval_every = 0, patch = 0;
  double lr = 0;
  std::optional<std::uint64_t> seed;
  bool allow_any = false;
  Common common;
};

int run_train(TrainArgs& a, CLI::App* app) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = run_config_from_json(blob::read_json(a.config));
  if (!a.cases.empty()) cfg.data.cases = a.cases;
  if (!a.out.empty()) cfg.output = a.out;
  if (!a.modalities.empty()) {
    cfg.data.modalities = split_list(a.modalities);
    cfg.arch.in_channels = static_cast<int>(cfg.data.modalities.size());
  }
  if (!a.normalization.empty()) cfg.data.normalization = parse_normalization(a.normalization);
  if (a.allow_any) cfg.data.allow_any_modalities = true;
  if (a.steps) cfg.train.total_steps = a.steps;
  if (a.batch) cfg.train.batch_size = a.batch;
  if (a.eval_every) cfg.train.eval_every = a.eval_every;
  if (a.patch) cfg.sampler.patch_size = a.patch;
  if (a.lr > 0) cfg.schedule.initial = a.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (app->count("--deterministic") || app->count("--nondeterministic")) cfg.deterministic = a.common.deterministic;
  cfg.train.seed = cfg.seed;
  if (cfg.data.cases.empty()) throw ConfigError("no case directory given (--cases or data.cases)");
  cfg.validate();
  a.common.deterministic = cfg.deterministic;
  a.common.apply();

  const auto cases = load_cases(cfg.data.cases, cfg.data.modalities, cfg.data.normalization);
  const auto [tr_idx, va_idx] = split_cases(cases.size(), cfg.data.val_fraction, cfg.seed);
  std::vector<Case> train, val;
  nlohmann::json split{{"train", nlohmann::json::array()}, {"val", nlohmann::json::array()}};
  for (auto i : tr_idx) {
    train.push_back(cases[i]);
    split["train"].push_back(cases[i].id);
  }
  for (auto i : va_idx) {
    val.push_back(cases[i]);
    split["val"].push_back(cases[i].id);
  }
  fs::create_directories(cfg.output);
  blob::write_json(cfg.output / "run_config.json", to_json(cfg));
  blob::write_json(cfg.output / "split.json", split);

  auto model = build_model<float>(cfg.arch, cfg.seed);
  TrainOptions opt;
  opt.checkpoint_dir = cfg.output / "checkpoints";
  opt.log_path = cfg.output / "train_log.jsonl";
  if (!a.resume.empty()) opt.resume_from = fs::path(a.resume);
  opt.eval_predict = cfg.predict;
  opt.checkpoint_extra = {{"modalities", cfg.data.modalities},
                          {"normalization", normalization_name(cfg.data.normalization)},
                          {"seed", cfg.seed}};
  opt.on_record = [](const nlohmann::json& r) {
    if (r.contains("eval")) std::cout << r.dump() << std::endl;
  };
  const auto res = train_loop(model, train, val, cfg.train, cfg.loss, cfg.schedule, cfg.sampler, opt);
  std::printf("trained %lld steps: loss %.6f -> %.6f\n", static_cast<long long>(res.steps), res.first_loss, res.last_loss);
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string predictions, cases, out;
  PredictFlags predict;
  Common common;
};

int run_evaluate(EvalArgs& a) {
  a.common.apply();
  if (a.checkpoints.empty() == a.predictions.empty())
    throw ConfigError("give either --checkpoint (one or more) or --predictions");
  const auto dirs = case_dirs(a.cases);
  std::vector<CaseMetrics> results;
  std::vector<LoadedModel> members;
  for (const auto& c : a.checkpoints) members.push_back(load_for_inference(c));
  std::map<std::string, fs::path> pred_dirs;
  if (!a.predictions.empty())
    for (const auto& d : case_dirs(a.predictions)) pred_dirs[load_case(d).id] = d;
  for (const auto& d : dirs) {
    const auto raw = load_case(d);
    LabelVolume pred;
    if (members.empty()) {
      const auto it = pred_dirs.find(raw.id);
      if (it == pred_dirs.end()) throw FormatError("no prediction for case '" + raw.id + "'");
      pred = load_case(it->second).label_volume();
    } else {
      pred = argmax_seg(predict_members(members, raw, a.predict.options()));
    }
    results.push_back(evaluate_case(raw.id, pred, raw.label_volume(), raw.spacing_mm));
  }
  const auto rec = aggregate_metrics(std::move(results));
  if (!a.out.empty()) blob::write_json(a.out, to_json(rec));
  std::cout << metrics_table(rec);
  return kOk;
}

struct PredictArgs {
  std::vector<std::string> checkpoints;
  std::string case_dir, out, nifti;
  bool probabilities = false;
  PredictFlags predict;
  Common common;
};

int run_predict(PredictArgs& a, bool is_ensemble) {
  a.common.apply();
  if (is_ensemble && a.checkpoints.size() < 2) throw ConfigError("ensemble needs at least two --checkpoint values");
  if (!is_ensemble && a.checkpoints.size() != 1) throw ConfigError("predict takes exactly one --checkpoint");
  std::vector<LoadedModel> members;
  for (const auto& c : a.checkpoints) members.push_back(load_for_inference(c));
  const auto raw = load_case(a.case_dir);
  const auto probs = predict_members(members, raw, a.predict.options());
  write_prediction(raw, probs, a.out, a.probabilities, a.nifti);
  std::cout << "wrote segmentation of '" << raw.id << "' to " << a.out << "\n";
  return kOk;
}

struct FeatArgs {
  std::string checkpoint, case_dir, out, stage;
  int level = -1;
  bool all = false;
  std::int64_t k = 4;
  int axis = 0;
  std::int64_t slice = -1;
  Common common;
};

int run_featmaps(FeatArgs& a) {
  a.common.apply();
  auto lm = load_for_inference(a.checkpoint);
  const auto c = prepare_case(load_case(a.case_dir), lm.inputs);
  auto x = case_tensor(c);
  const auto div = lm.model.config().divisor();
  const Dims dims{x.dim(1), x.dim(2), x.dim(3)};
  Dims padded{}, lo{};
  for (int i = 0; i < 3; ++i) {
    padded[i] = detail::round_up(dims[i], div);
    lo[i] = (padded[i] - dims[i]) / 2;
  }
  if (padded != dims) x = detail::pad_volume(x, lo, padded);

  std::vector<FeatureSelector> sels;
  if (a.all) {
    sels = feature_selectors(lm.model);
    if (sels.empty()) throw ConfigError("model has no GPC feature stages");
  } else {
    if (a.level < 0 || a.stage.empty()) throw ConfigError("give --level and --stage, or --all");
    sels.push_back({a.level, parse_stage(a.stage)});
    feature_node(lm.model, sels.back());
  }
  fs::create_directories(a.out);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& sel : sels) {
    const auto fm = extract_feature_maps(lm.model, x, sel);
    const auto top = top_k_by_mean_abs(fm.maps, a.k);
    const auto extent = fm.maps.dim(1 + a.axis);
    const auto slice = a.slice >= 0 ? a.slice : extent / 2;
    nlohmann::json entry{{"layer", fm.layer}, {"level", sel.level}, {"stage", stage_name(sel.stage)}, {"panels", nlohmann::json::array()}};
    for (std::size_t r = 0; r < top.size(); ++r) {
      char name[96];
      std::snprintf(name, sizeof name, "L%d_%s_rank%zu_ch%03lld.pgm", sel.level, stage_name(sel.stage), r,
                    static_cast<long long>(top[r]));
      export_slice(channel_volume(fm.maps, top[r]), a.axis, slice, fs::path(a.out) / name);
      entry["panels"].push_back({{"file", name}, {"channel", top[r]}, {"rank", r}});
    }
    index.push_back(entry);
  }
  blob::write_json(fs::path(a.out) / "index.json", index);
  std::cout << "wrote " << sels.size() << " feature-map stacks to " << a.out << "\n";
  return kOk;
}

struct ParamsArgs {
  std::string config, arch = "contextnet";
  int levels = 0;
  double scale = 1.0;
  bool json = false;
};

int run_params(const ParamsArgs& a) {
  ArchConfig cfg;
  if (!a.config.empty()) {
    const auto j = blob::read_json(a.config);
    if (j.contains("arch") || j.contains("data")) cfg = run_config_from_json(j).arch;
    else from_json(j, cfg);
  } else {
    const auto kind = parse_arch_kind(a.arch);
    cfg = reference_config(kind, a.levels ? a.levels : (kind == ArchKind::contextnet ? 2 : 4));
    cfg.base_filter_scale = a.scale;
  }
  const auto m = build_model<float>(cfg, 0);
  nlohmann::json j{{"arch", cfg}, {"total", m.count_parameters()}, {"layers", nlohmann::json::array()}};
  for (const auto& n : m.nodes()) {
    const auto c = m.count_parameters(n);
    if (c > 0) j["layers"].push_back({{"name", n.name}, {"kind", n.layer->kind()}, {"parameters", c}});
  }
  if (a.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& l : j["layers"])
      std::printf("%-24s %-18s %12lld\n", l["name"].get<std::string>().c_str(), l["kind"].get<std::string>().c_str(),
                  static_cast<long long>(l["parameters"].get<std::int64_t>()));
    std::printf("%-24s %-18s %12lld\n", "total", "", static_cast<long long>(m.count_parameters()));
  }
  return kOk;
}

struct GradArgs {
  int seeds = 3;
  double tolerance = 1e-4;
  bool json = false;
  Common common;
};

int run_gradcheck(GradArgs& a) {
  a.common.apply();
  std::vector<std::uint64_t> seeds;
  for (int s = 1; s <= a.seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  const auto results = run_gradcheck_suite(seeds);
  std::map<std::pair<std::string, std::string>, double> worst;
  for (const auto& r : results) {
    auto& w = worst[{r.layer, r.wrt}];
    w = std::max(w, r.max_rel_error);
  }
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [key, err] : worst) {
    const bool pass = err < a.tolerance;
    ok &= pass;
    j.push_back({{"layer", key.first}, {"wrt", key.second}, {"max_rel_error", err}, {"pass", pass}});
    if (!a.json)
      std::printf("%-36s %-16s %.3e %s\n", key.first.c_str(), key.second.c_str(), err, pass ? "ok" : "FAIL");
  }
  if (a.json) std::cout << j.dump(2) << "\n";
  if (!ok) throw NumericalError("gradient check exceeded tolerance " + std::to_string(a.tolerance));
  return kOk;
}

int report(const char* kind, const std::string& msg, int code) {
  std::cerr << "gpcseg: error[" << kind << "]: " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain-tumor segmentation with global planar convolutions"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic multimodal phantom dataset");
  phantom->add_option("--out", pa.out, "Output directory (one subdirectory per case)")->required();
  phantom->add_option("--n", pa.n, "Number of cases")->check(CLI::PositiveNumber);
  phantom->add_option("--seed", pa.seed, "Dataset seed");
  phantom->add_option("--dims", pa.dims, "Volume size: N or D,H,W");
  phantom->add_option("--noise", pa.noise, "Gaussian noise sigma");
  phantom->add_option("--prefix", pa.prefix, "Case id prefix");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", ta.config, "Run config JSON (flags override it)");
  train->add_option("--cases", ta.cases, "Directory of training cases");
  train->add_option("--out", ta.out, "Run output directory");
  train->add_option("--modalities", ta.modalities, "Comma-separated modality subset, e.g. t1gd,flair");
  train->add_flag("--allow-any-modalities", ta.allow_any, "Permit subsets without t1gd or flair");
  train->add_option("--normalization", ta.normalization, "zscore or none");
  train->add_option("--steps", ta.steps, "Total optimizer steps");
  train->add_option("--batch-size", ta.batch, "Patches per step");
  train->add_option("--eval-every", ta.eval_every, "Steps between validation passes and checkpoints");
  train->add_option("--patch-size", ta.patch, "Cubic patch edge length");
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_option("--seed", ta.seed, "Seed for initialization, split and sampling");
  train->add_option("--resume", ta.resume, "Checkpoint directory to resume from");
  add_common(train, ta.common);

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions or checkpoints against labeled cases");
  evaluate->add_option("--checkpoint", ea.checkpoints, "Checkpoint directory; repeat to ensemble");
  evaluate->add_option("--predictions", ea.predictions, "Directory of predicted label cases");
  evaluate->add_option("--cases", ea.cases, "Directory of labeled cases")->required();
  evaluate->add_option("--out", ea.out, "Write metrics JSON here");
  add_predict_flags(evaluate, ea.predict);
  add_common(evaluate, ea.common);

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Segment one case with a checkpoint");
  PredictArgs en;
  auto* ensemble_cmd = app.add_subcommand("ensemble", "Segment one case with averaged softmax of several checkpoints");
  for (auto [cmd, args] : {std::pair{predict_cmd, &pr}, std::pair{ensemble_cmd, &en}}) {
    cmd->add_option("--checkpoint", args->checkpoints, "Checkpoint directory")->required();
    cmd->add_option("--case", args->case_dir, "Case directory")->required();
    cmd->add_option("--out", args->out, "Output case directory (labels only)")->required();
    cmd->add_option("--nifti", args->nifti, "Also write labels as a NIfTI-1 file");
    cmd->add_flag("--probabilities", args->probabilities, "Also write probabilities.f32 (4, D, H, W)");
    add_predict_flags(cmd, args->predict);
    add_common(cmd, args->common);
  }

  FeatArgs fa;
  auto* featmaps = app.add_subcommand("featmaps", "Export the top feature maps around each GPC module as PGM panels");
  featmaps->add_option("--checkpoint", fa.checkpoint, "Checkpoint directory")->required();
  featmaps->add_option("--case", fa.case_dir, "Case directory")->required();
  featmaps->add_option("--out", fa.out, "Output directory")->required();
  featmaps->add_option("--level", fa.level, "Representation level");
  featmaps->add_option("--stage", fa.stage, "pre_gpc_residual, gpc or post_gpc_residual");
  featmaps->add_flag("--all", fa.all, "Every (level, stage) pair");
  featmaps->add_option("--k", fa.k, "Panels per stack")->check(CLI::PositiveNumber);
  featmaps->add_option("--axis", fa.axis, "Slice axis: 0 = D, 1 = H, 2 = W")->check(CLI::Range(0, 2));
  featmaps->add_option("--slice", fa.slice, "Slice index (default: middle)");
  add_common(featmaps, fa.common);

  ParamsArgs pp;
  auto* params = app.add_subcommand("params", "Per-layer parameter counts");
  params->add_option("--config", pp.config, "Run config or architecture config JSON");
  params->add_option("--arch", pp.arch, "unet, resunet or contextnet (reference widths)");
  params->add_option("--levels", pp.levels, "Representation levels");
  params->add_option("--scale", pp.scale, "base_filter_scale");
  params->add_flag("--json", pp.json, "Emit JSON");

  GradArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks for every layer type");
  gradcheck->add_option("--seeds", ga.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", ga.tolerance, "Maximum relative error");
  gradcheck->add_flag("--json", ga.json, "Emit JSON");
  add_common(gradcheck, ga.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report("usage", e.what(), kUsage);
  }

  try {
    if (*phantom) return run_phantom(pa);
    if (*train) return run_train(ta, train);
    if (*evaluate) return run_evaluate(ea);
    if (*predict_cmd) return run_predict(pr, false);
    if (*ensemble_cmd) return run_predict(en, true);
    if (*featmaps) return run_featmaps(fa);
    if (*params) return run_params(pp);
    if (*gradcheck) return run_gradcheck(ga);
  } catch (const ConfigError& e) {
    return report(e.kind(), e.what(), kUsage);
  } catch (const NumericalError& e) {
    return report(e.kind(), e.what(), kNumerical);
  } catch (const Error& e) {
    return report(e.kind(), e.what(), kData);
  } catch (const nlohmann::json::exception& e) {
    return report("format", e.what(), kData);
  } catch (const std::filesystem::filesystem_error& e) {
    return report("io", e.what(), kData);
  } catch (const std::exception& e) {
    return report("internal", e.what(), kData);
  }
  return kUsage;
}
