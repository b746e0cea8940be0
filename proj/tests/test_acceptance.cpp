// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gpcseg/cli/run_config.hpp"
#include "gpcseg/data/phantom.hpp"
#include "gpcseg/data/normalize.hpp"
#include "gpcseg/eval/metrics.hpp"
#include "gpcseg/infer/featmaps.hpp"
#include "gpcseg/infer/predict.hpp"
#include "gpcseg/nn/gpc.hpp"
#include "gpcseg/train/adam.hpp"
#include "gpcseg/train/checkpoint.hpp"
#include "gpcseg/train/gradcheck_suite.hpp"
#include "gpcseg/train/schedule.hpp"
#include "gpcseg/train/trainer.hpp"
#include "oracles.hpp"

#ifndef GPCSEG_CLI
#define GPCSEG_CLI "gpcseg"
#endif

using namespace gpcseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const char* title, const std::function<Outcome()>& fn) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("CRITERION %d %s: %s (%s; %.1fs)\n", id, title, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char b[128];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

fs::path work_dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / "gpcseg_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

int shell(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Byte-compares two directory trees; returns "" when identical.
std::string diff_trees(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return "file lists differ";
  if (fa.empty()) return "no files";
  for (const auto& f : fa)
    if (file_bytes(a / f) != file_bytes(b / f)) return "content differs: " + f.string();
  return "";
}

template <class T>
oracle::Vol to_vol(const Tensor<T>& t) {
  oracle::Vol v{t.dim(0), t.dim(1), t.dim(2), t.dim(3), {}};
  v.v.assign(t.data().begin(), t.data().end());
  return v;
}

std::vector<double> as_vec(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor<float>& a, const oracle::Vol& b) {
  if (a.numel() != static_cast<std::int64_t>(b.v.size())) return 1e300;
  double m = 0;
  for (std::size_t i = 0; i < b.v.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b.v[i]));
  return m;
}

Mask random_mask(Dims d, Rng& rng) {
  Mask m(d);
  if (rng() % 3 == 0) {
    for (auto& v : m.data) v = (rng() % 4) == 0;
  } else {
    const int boxes = 1 + static_cast<int>(rng() % 3);
    for (int b = 0; b < boxes; ++b) {
      Dims lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(d[a]));
        hi[a] = lo[a] + 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(d[a] - lo[a]));
      }
      for (auto z = lo[0]; z < hi[0]; ++z)
        for (auto y = lo[1]; y < hi[1]; ++y)
          for (auto x = lo[2]; x < hi[2]; ++x) m.at(z, y, x) = 1;
    }
  }
  if (std::count(m.data.begin(), m.data.end(), 1) == 0) m.data[rng() % m.data.size()] = 1;
  return m;
}

// ---- desk-scale run shared by criteria 8-11 ----

struct DeskRun {
  std::vector<Case> train, held_out;
  std::vector<Model<float>> members;
  std::vector<EvalResult> member_eval;
  std::vector<double> seconds;
};

ArchConfig desk_arch() {
  auto a = reference_config(ArchKind::contextnet, 2);
  a.base_filter_scale = 0.25;
  return a;
}

constexpr std::int64_t kDeskSteps = 600;

DeskRun& desk() {
  static DeskRun r = [] {
    DeskRun d;
    PhantomSetConfig ps;
    ps.count = 25;
    ps.dims = {48, 48, 48};
    ps.seed = 100;
    auto all = generate_phantom_set(ps);
    for (std::size_t i = 0; i < all.size(); ++i) (i < 20 ? d.train : d.held_out).push_back(zscore_normalize(all[i]));
    SamplerConfig sc;
    sc.patch_size = 24;
    for (std::uint64_t seed : {1u, 2u}) {
      auto model = build_model<float>(desk_arch(), seed);
      TrainConfig tc{kDeskSteps, 4, kDeskSteps, seed};
      const auto t0 = Clock::now();
      train_loop(model, d.train, {}, tc, LossConfig{}, LrSchedule{}, sc);
      d.seconds.push_back(seconds_since(t0));
      d.member_eval.push_back(evaluate_model(model, d.held_out));
      d.members.push_back(std::move(model));
    }
    return d;
  }();
  return r;
}

// ---- criteria ----

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck_suite({1, 2, 3});
  double worst = 0;
  std::string where;
  std::set<std::string> layers;
  for (const auto& r : results) {
    layers.insert(r.layer);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.layer + "/" + r.wrt;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-4 && secs < 300;
  return {pass, std::to_string(results.size()) + " checks over " + std::to_string(layers.size()) +
                    " layer variants, 3 seeds, max rel err " + fmt("%.2e", worst) + " at " + where + ", " +
                    fmt("%.1fs", secs)};
}

Outcome conv_oracles() {
  Rng rng(2024);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  double worst = 0;
  int shape_fail = 0, n = 0;
  for (int i = 0; i < 50; ++i) {
    const std::int64_t ci = pick(1, 3), co = pick(1, 4);
    const Triple k{pick(1, 4), pick(1, 4), pick(1, 4)};
    const Triple s{pick(1, 2), pick(1, 2), pick(1, 2)};
    const auto pad = rng() % 2 ? Padding::same : Padding::valid;
    const Triple in{pick(4, 8), pick(4, 8), pick(4, 8)};
    auto kern = ConvKernel<float>::make(ci, co, k, rng, s, pad);
    kern.bias = Tensor<float>::he_normal({co}, 1, rng());
    const auto x = Tensor<float>::he_normal({ci, in[0], in[1], in[2]}, 1, rng());
    std::array<std::int64_t, 3> out{}, lo{};
    for (int a = 0; a < 3; ++a) {
      if (pad == Padding::same) oracle::same_geometry(in[a], k[a], s[a], out[a], lo[a]);
      else out[a] = (in[a] - k[a]) / s[a] + 1, lo[a] = 0;
    }
    const auto y = conv3d(x, kern);
    if (y.shape() != Shape{co, out[0], out[1], out[2]}) ++shape_fail;
    worst = std::max(worst, max_abs_diff(y, oracle::brute_conv(to_vol(x), as_vec(kern.weights), as_vec(kern.bias), co, k, s, lo, out)));
    ++n;
  }
  for (int i = 0; i < 50; ++i) {
    const Orientation o = static_cast<Orientation>(rng() % 3);
    const std::int64_t ci = pick(1, 3), co = pick(1, 4), k = pick(1, 6);
    const Triple in{pick(3, 8), pick(3, 8), pick(3, 8)};
    auto pk = PlanarKernel<float>::make(o, ci, co, k, rng);
    pk.bias = Tensor<float>::he_normal({co}, 1, rng());
    const auto x = Tensor<float>::he_normal({ci, in[0], in[1], in[2]}, 1, rng());
    const auto e = planar_extent(o, k);
    std::array<std::int64_t, 3> out{}, lo{};
    for (int a = 0; a < 3; ++a) oracle::same_geometry(in[a], e[a], 1, out[a], lo[a]);
    const auto y = planar_conv(x, pk);
    if (y.shape() != Shape{co, in[0], in[1], in[2]}) ++shape_fail;
    worst = std::max(worst, max_abs_diff(y, oracle::brute_conv(to_vol(x), as_vec(pk.weights), as_vec(pk.bias), co, e, {1, 1, 1}, lo, out)));
    ++n;
  }
  return {worst < 1e-5 && shape_fail == 0,
          std::to_string(n) + " instances (50 conv3d, 50 planar), max abs err " + fmt("%.2e", worst) + ", shape failures " +
              std::to_string(shape_fail)};
}

Outcome gpc_semantics() {
  Rng rng(7);
  auto m = GpcModule<float>::make(3, 4, 5, rng);
  for (auto& b : m.branches) b.bias = Tensor<float>::he_normal({4}, 1, rng());
  const auto x = Tensor<float>::he_normal({3, 6, 7, 5}, 1, 8);
  const auto y = gpc_forward(x, m);
  const auto ref = add(add(planar_conv(x, m.branches[0]), planar_conv(x, m.branches[1])), planar_conv(x, m.branches[2]));
  bool exact = y.shape() == ref.shape();
  for (std::int64_t i = 0; exact && i < y.numel(); ++i) exact = y[i] == ref[i];
  const auto big = GpcModule<float>::make(64, 15, 15, rng);
  const auto count = big.parameter_count();
  bool ratio = true;
  for (std::int64_t k : {3, 5, 15}) {
    const auto pk = PlanarKernel<float>::make(Orientation::axial, 64, 15, k, rng);
    const std::int64_t full = 64 * 15 * k * k * k;
    ratio &= pk.weights.numel() * k == full;
  }
  return {exact && count == 648045 && ratio, std::string("sum of branches ") + (exact ? "exact" : "differs") +
                                                 ", count(64,15,15) = " + std::to_string(count) + ", planar/full = 1/k " +
                                                 (ratio ? "exact" : "violated")};
}

Outcome param_counts() {
  const auto c2 = build_model<float>(reference_config(ArchKind::contextnet, 2)).count_parameters();
  const auto c3 = build_model<float>(reference_config(ArchKind::contextnet, 3)).count_parameters();
  const auto c4 = build_model<float>(reference_config(ArchKind::contextnet, 4)).count_parameters();
  const auto r = build_model<float>(reference_config(ArchKind::resunet)).count_parameters();
  auto within = [](std::int64_t n, double ref) { return std::abs(double(n) - ref) <= 0.25 * ref; };
  const bool order = c2 < c3 && c3 < c4 && c4 < r;
  const bool bands = within(c2, 1.3e6) && within(c3, 1.6e6) && within(c4, 1.7e6) && within(r, 2.0e6);
  std::ostringstream d;
  d << "ContextNet-2RL " << c2 << " < 3RL " << c3 << " < 4RL " << c4 << " < ResUNet " << r << ", ordering "
    << (order ? "strict" : "violated") << ", bands " << (bands ? "ok" : "violated");
  return {order && bands, d.str()};
}

Outcome metric_oracles() {
  Rng rng(11);
  int dice_bad = 0, hd_bad = 0;
  for (int i = 0; i < 100; ++i) {
    const Dims d{static_cast<std::int64_t>(2 + rng() % 11), static_cast<std::int64_t>(2 + rng() % 11),
                 static_cast<std::int64_t>(2 + rng() % 11)};
    const auto p = random_mask(d, rng), t = random_mask(d, rng);
    const oracle::Mask op{d[0], d[1], d[2], p.data}, ot{d[0], d[1], d[2], t.data};
    if (dice(p, t) != oracle::brute_dice(op, ot)) ++dice_bad;
    const Spacing sp = i % 2 ? Spacing{1, 1, 1} : Spacing{1.5, 0.7, 1.2};
    const double ref = oracle::brute_hd95(op, ot, sp);
    if (hausdorff95(p, t, sp, DistanceMethod::brute_force) != ref) ++hd_bad;
    if (hausdorff95(p, t, sp, DistanceMethod::distance_transform) != ref) ++hd_bad;
  }
  Mask a({6, 6, 12}), b({6, 6, 12}), c({6, 6, 12});
  for (std::int64_t z = 1; z < 5; ++z)
    for (std::int64_t y = 1; y < 5; ++y)
      for (std::int64_t x = 1; x < 5; ++x) {
        a.at(z, y, x) = 1;
        b.at(z, y, x + 3) = 1;
      }
  for (std::int64_t z = 1; z < 5; ++z)
    for (std::int64_t y = 1; y < 5; ++y)
      for (std::int64_t x = 3; x < 7; ++x) c.at(z, y, x) = 1;
  Mask h1({1, 1, 8}), h2({1, 1, 8});
  for (int x = 0; x < 4; ++x) h1.at(0, 0, x) = 1;
  for (int x = 2; x < 6; ++x) h2.at(0, 0, x) = 1;
  const bool hand = dice(a, a) == 1.0 && hausdorff95(a, a) == 0.0 && hausdorff95(a, b) == 3.0 && dice(a, c) == 0.5 &&
                    dice(h1, h2) == 0.5;
  return {dice_bad == 0 && hd_bad == 0 && hand,
          "100 random pairs: dice mismatches " + std::to_string(dice_bad) + ", hd95 mismatches " + std::to_string(hd_bad) +
              " (both distance paths); hand cases " + (hand ? "exact" : "wrong")};
}

Outcome sampler() {
  PhantomConfig pc;
  pc.dims = {48, 48, 48};
  pc.seed = 5;
  const auto c = generate_phantom(pc);
  const ClassIndex idx(*c.labels);
  SamplerConfig cfg;
  Rng rng(5);
  std::array<int, 4> counts{};
  bool labels_ok = true;
  for (int i = 0; i < 10000; ++i) {
    const auto s = sample_center(idx, cfg, rng);
    labels_ok &= c.labels->at(s.coord[0], s.coord[1], s.coord[2]) == s.cls;
    ++counts[s.cls];
  }
  const std::array<double, 4> want{0.50, 0.20, 0.15, 0.15};
  double dev = 0;
  for (int k = 0; k < 4; ++k) dev = std::max(dev, std::abs(counts[k] / 10000.0 - want[k]));
  auto lv = *c.labels;
  for (auto& v : lv.data)
    if (v == 2) v = 3;
  const auto p = ClassIndex(lv).effective_probs(cfg);
  const bool renorm = std::abs(p[0] - 0.5 / 0.85) < 1e-12 && std::abs(p[1] - 0.2 / 0.85) < 1e-12 && p[2] == 0.0 &&
                      std::abs(p[3] - 0.15 / 0.85) < 1e-12;
  std::ostringstream d;
  d << "frequencies " << counts[0] / 1e4 << "/" << counts[1] / 1e4 << "/" << counts[2] / 1e4 << "/" << counts[3] / 1e4
    << ", max deviation " << fmt("%.4f", dev) << ", renormalization " << (renorm ? "exact" : "wrong");
  return {dev <= 0.02 && renorm && labels_ok, d.str()};
}

Outcome schedule_adam() {
  LrSchedule s;
  const double l0 = lr_at(0, s), l1 = lr_at(999, s), l2 = lr_at(1000, s), l3 = lr_at(2500, s);
  const bool lr_ok = std::abs(l0 - 1e-3) < 1e-15 && std::abs(l1 - 1e-3) < 1e-15 && std::abs(l2 - 9e-4) < 1e-15 &&
                     std::abs(l3 - 8.1e-4) < 1e-15;
  std::vector<NamedTensor<double>> ps{{"w", Tensor<double>({1}, {0.5}), ParamRole::weight}};
  ps[0].tensor.set_requires_grad(true);
  auto st = AdamState<double>::make(ps);
  oracle::ScalarAdam ref;
  double p = 0.5, worst = 0;
  const double grads[10] = {0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1e-3, -3.0, 0.4, 0.9};
  for (double g : grads) {
    ps[0].tensor.zero_grad();
    ps[0].tensor.mutable_grad()[0] = g;
    adam_step(st, ps, 1e-2);
    p = ref.step(p, g, 1e-2);
    worst = std::max(worst, std::abs(ps[0].tensor[0] - p));
  }
  std::ostringstream d;
  d << "lr " << l0 << ", " << l1 << ", " << l2 << ", " << l3 << "; ADAM max deviation over 10 steps " << fmt("%.2e", worst);
  return {lr_ok && worst <= 1e-7, d.str()};
}

Outcome desk_scale() {
  auto& d = desk();
  const auto& ev = d.member_eval[0];
  const double wt = ev.dice[1], et = ev.dice[0];
  const double minutes = d.seconds[0] / 60.0;
  std::ostringstream s;
  s << kDeskSteps << " steps, held-out WT " << fmt("%.3f", wt) << " ET " << fmt("%.3f", et) << " TC "
    << fmt("%.3f", ev.dice[2]) << ", training " << fmt("%.1f", minutes) << " min on "
    << std::thread::hardware_concurrency() << " core(s)";
  return {wt >= 0.85 && et >= 0.70 && minutes <= 30.0, s.str()};
}

Outcome ensemble_behavior() {
  auto& d = desk();
  std::array<double, 3> ens{};
  for (const auto& c : d.held_out) {
    std::vector<ProbabilityVolume> probs;
    for (auto& m : d.members) probs.push_back(predict(m, c));
    const auto pr = regions_from_labels(argmax_seg(ensemble(probs)));
    const auto tr = regions_from_labels(c.label_volume());
    for (std::size_t k = 0; k < 3; ++k) ens[k] += dice(pr.get(kRegions[k]), tr.get(kRegions[k]));
  }
  bool ok = true;
  std::ostringstream s;
  for (std::size_t k = 0; k < 3; ++k) {
    ens[k] /= static_cast<double>(d.held_out.size());
    const double lo = std::min(d.member_eval[0].dice[k], d.member_eval[1].dice[k]);
    ok &= ens[k] >= lo;
    s << (k ? ", " : "") << region_name(kRegions[k]) << " ensemble " << fmt("%.4f", ens[k]) << " vs min member "
      << fmt("%.4f", lo);
  }
  return {ok, s.str()};
}

Outcome introspection() {
  Rng rng(3);
  int topk_bad = 0;
  for (int t = 0; t < 20; ++t) {
    const std::int64_t c = 2 + static_cast<std::int64_t>(rng() % 14);
    const auto maps = Tensor<float>::he_normal({c, 3, 4, 5}, 1, rng());
    std::vector<std::pair<double, std::int64_t>> scored;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::int64_t i = 0; i < 60; ++i) s += std::abs(static_cast<double>(maps[static_cast<std::size_t>(ch * 60 + i)]));
      scored.push_back({-s / 60.0, ch});
    }
    std::sort(scored.begin(), scored.end());
    const auto got = top_k_by_mean_abs(maps, 4);
    for (std::size_t i = 0; i < got.size(); ++i) topk_bad += got[i] != scored[i].second;
  }

  auto& d = desk();
  auto& model = d.members[0];
  const auto x = case_tensor(d.held_out[0]);
  Tensor<float> plain;
  {
    NoGradGuard ng;
    plain = model.forward(x, Mode::eval);
  }
  bool identical = true;
  for (const auto& sel : feature_selectors(model)) {
    Tensor<float> logits;
    extract_feature_maps(model, x, sel, &logits);
    for (std::int64_t i = 0; identical && i < plain.numel(); ++i) identical = logits[i] == plain[i];
  }

  const auto dir = work_dir() / "featmaps";
  Rng r0(0);
  save_checkpoint(make_checkpoint(model, nullptr, kDeskSteps, r0, {{"modalities", {"t1", "t1gd", "t2", "flair"}}, {"normalization", "none"}}),
                  dir / "ckpt");
  save_case(d.held_out[0], dir / "case");
  const int rc = shell(std::string(GPCSEG_CLI) + " featmaps --checkpoint " + quoted(dir / "ckpt") + " --case " +
                       quoted(dir / "case") + " --out " + quoted(dir / "out") + " --all");
  std::map<std::pair<int, std::string>, int> panels;
  if (rc == 0)
    for (const auto& e : fs::directory_iterator(dir / "out")) {
      const auto name = e.path().filename().string();
      if (e.path().extension() != ".pgm") continue;
      const int level = std::stoi(name.substr(1, name.find('_') - 1));
      const auto rest = name.substr(name.find('_') + 1);
      panels[{level, rest.substr(0, rest.find("_rank"))}]++;
    }
  std::map<int, int> stages_per_level;
  bool four_each = !panels.empty();
  for (const auto& [key, n] : panels) {
    four_each &= n == 4;
    stages_per_level[key.first]++;
  }
  bool three_stages = stages_per_level.size() == 2;
  for (const auto& [l, n] : stages_per_level) three_stages &= n == 3;
  std::ostringstream s;
  s << "top-k oracle mismatches " << topk_bad << ", logits " << (identical ? "bit-identical" : "changed")
    << " under capture, featmaps exit " << rc << " with " << panels.size() << " stacks ("
    << (four_each ? "4 panels each" : "panel count wrong") << ", " << (three_stages ? "3 stages per level" : "stage count wrong")
    << ")";
  return {topk_bad == 0 && identical && rc == 0 && four_each && three_stages, s.str()};
}

Outcome reproducibility() {
  const auto dir = work_dir() / "repro";
  const std::string cli = GPCSEG_CLI;
  std::vector<std::string> problems;
  for (const char* run : {"a", "b"})
    if (shell(cli + " phantom --n 4 --seed 7 --dims 24 --out " + quoted(dir / run / "phantoms")) != 0)
      problems.push_back("phantom failed");
  if (auto diff = diff_trees(dir / "a" / "phantoms", dir / "b" / "phantoms"); !diff.empty())
    problems.push_back("phantom: " + diff);

  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"arch": {"kind": "contextnet", "levels": 2, "filters_per_level": [32, 64], "base_filter_scale": 0.25},
               "sampler": {"patch_size": 16}, "train": {"total_steps": 6, "batch_size": 2, "eval_every": 3},
               "data": {"val_fraction": 0.25}, "seed": 3, "deterministic": true})";
  }
  // Both runs train into the same --out, then move aside.
  for (const char* run : {"a", "b"}) {
    if (shell(cli + " train --config " + quoted(dir / "config.json") + " --deterministic --cases " +
              quoted(dir / "a" / "phantoms") + " --out " + quoted(dir / "train")) != 0)
      problems.push_back("train failed");
    else
      fs::rename(dir / "train", dir / run / "train");
  }
  if (auto diff = diff_trees(dir / "a" / "train", dir / "b" / "train"); !diff.empty()) problems.push_back("train: " + diff);

  for (const char* run : {"a", "b"})
    if (shell(cli + " evaluate --checkpoint " + quoted(dir / "a" / "train" / "checkpoints" / "final") + " --cases " +
              quoted(dir / "a" / "phantoms") + " --out " + quoted(dir / run / "metrics.json")) != 0)
      problems.push_back("evaluate failed");
  if (file_bytes(dir / "a" / "metrics.json") != file_bytes(dir / "b" / "metrics.json") ||
      file_bytes(dir / "a" / "metrics.json").empty())
    problems.push_back("evaluate outputs differ");

  auto& model = desk().members[1];
  Rng r0(0);
  save_checkpoint(make_checkpoint(model, nullptr, kDeskSteps, r0), dir / "roundtrip");
  auto loaded = load_model(dir / "roundtrip");
  const auto x = case_tensor(desk().held_out[1]);
  NoGradGuard ng;
  const auto y0 = model.forward(x, Mode::eval), y1 = loaded.forward(x, Mode::eval);
  bool same = y0.shape() == y1.shape();
  for (std::int64_t i = 0; same && i < y0.numel(); ++i) same = y0[i] == y1[i];
  if (!same) problems.push_back("checkpoint roundtrip logits differ");

  std::string detail = "phantom, train (deterministic), evaluate byte-identical across runs; checkpoint roundtrip logits bit-identical";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  std::printf("acceptance suite, %u hardware thread(s)\n", std::thread::hardware_concurrency());
  run(1, "gradient correctness", gradients);
  run(2, "convolution oracle equivalence", conv_oracles);
  run(3, "GPC semantics", gpc_semantics);
  run(4, "parameter-count ordering", param_counts);
  run(5, "metrics oracles", metric_oracles);
  run(6, "sampler frequencies", sampler);
  run(7, "schedule and optimizer exactness", schedule_adam);
  run(8, "desk-scale end-to-end", desk_scale);
  run(9, "ensemble behavior", ensemble_behavior);
  run(10, "introspection", introspection);
  run(11, "reproducibility", reproducibility);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures ? 1 : 0;
}
