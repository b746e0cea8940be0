#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gpcseg/core/gradcheck.hpp"
#include "gpcseg/data/phantom.hpp"
#include "gpcseg/data/normalize.hpp"
#include "gpcseg/train/trainer.hpp"
#include "oracles.hpp"

using namespace gpcseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gpcseg_test_train_" + name);
  fs::remove_all(p);
  return p;
}

ArchConfig tiny(ArchKind kind = ArchKind::contextnet) {
  ArchConfig c;
  c.kind = kind;
  c.levels = 2;
  c.filters_per_level = {3, 4};
  c.gpc_out_channels = 3;
  c.gpc_kernel = 3;
  return c;
}

std::vector<Case> tiny_cases(int n, std::uint64_t seed) {
  PhantomSetConfig s;
  s.count = n;
  s.dims = {16, 16, 16};
  s.seed = seed;
  std::vector<Case> out;
  for (auto& c : generate_phantom_set(s)) out.push_back(zscore_normalize(c));
  return out;
}

}  // namespace

TEST(CrossEntropy, SaturatedAndUniform) {
  Tensor<double> logits({4, 2, 2, 2});
  std::vector<std::uint8_t> labels(8);
  for (int v = 0; v < 8; ++v) {
    labels[v] = static_cast<std::uint8_t>(v % 4);
    logits[labels[v] * 8 + v] = 20.0;
  }
  EXPECT_LT(cross_entropy(logits, labels).item(), 1e-6);
  EXPECT_NEAR(cross_entropy(Tensor<double>({4, 2, 2, 2}), labels).item(), std::log(4.0), 1e-5);
}

TEST(CrossEntropy, MatchesPerVoxelOracle) {
  auto logits = Tensor<float>::he_normal({2, 4, 3, 2, 2}, 1, 5);
  std::vector<std::uint8_t> labels(24);
  Rng rng(6);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 4);
  double want = 0;
  for (int n = 0; n < 2; ++n)
    for (int v = 0; v < 12; ++v) {
      double z = 0;
      for (int c = 0; c < 4; ++c) z += std::exp(static_cast<double>(logits[(n * 4 + c) * 12 + v]));
      want -= std::log(std::exp(static_cast<double>(logits[(n * 4 + labels[n * 12 + v]) * 12 + v])) / z);
    }
  want /= 24;
  EXPECT_NEAR(cross_entropy(logits, labels).item(), want, 1e-5);
}

TEST(CrossEntropy, Errors) {
  Tensor<float> logits({4, 2, 2, 2});
  std::vector<std::uint8_t> labels(8, 4);
  EXPECT_THROW(cross_entropy(logits, labels), ConfigError);
  std::vector<std::uint8_t> few(7, 0);
  EXPECT_THROW(cross_entropy(logits, few), ShapeError);
}

TEST(CrossEntropy, GradCheck) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto x = Tensor<double>::he_normal({2, 4, 2, 2, 3}, 2, seed);
    std::vector<std::uint8_t> labels(24);
    Rng rng(seed);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 4);
    EXPECT_LT(grad_check([&](const Tensor<double>& t) { return cross_entropy(t, labels); }, x, 1e-5), 1e-4);
  }
}

TEST(Penalty, Examples) {
  LossConfig cfg;
  std::vector<NamedTensor<double>> ps{{"w", Tensor<double>({1}, {2.0}), ParamRole::weight},
                                      {"b", Tensor<double>({1}, {5.0}), ParamRole::bias},
                                      {"g", Tensor<double>({1}, {7.0}), ParamRole::bn_affine}};
  EXPECT_NEAR(penalty(ps, cfg).item(), 4.02e-4, 1e-15);
  std::vector<NamedTensor<double>> zeros{{"w", Tensor<double>({5}), ParamRole::weight}};
  EXPECT_EQ(penalty(zeros, cfg).item(), 0.0);
  auto doubled = ps;
  doubled.push_back({"w2", Tensor<double>({1}, {2.0}), ParamRole::weight});
  EXPECT_NEAR(penalty(doubled, cfg).item(), 2 * 4.02e-4, 1e-15);
  EXPECT_EQ(penalty(ps, LossConfig{0, 0}).item(), 0.0);
  EXPECT_THROW(penalty(ps, LossConfig{-1, 0}), ConfigError);
}

TEST(Penalty, GradCheck) {
  LossConfig cfg{0.3, 0.7};
  auto w = Tensor<double>::he_normal({3, 4}, 1, 8);
  EXPECT_LT(grad_check(
                [&](const Tensor<double>& t) {
                  return penalty(std::vector<NamedTensor<double>>{{"w", t, ParamRole::weight}}, cfg);
                },
                w, 1e-6),
            1e-6);
}

TEST(Schedule, Staircase) {
  LrSchedule s;
  EXPECT_DOUBLE_EQ(lr_at(0, s), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(999, s), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(1000, s), 9e-4);
  EXPECT_NEAR(lr_at(2500, s), 8.1e-4, 1e-18);
  EXPECT_THROW(lr_at(-1, s), ConfigError);
}

TEST(Adam, FirstStepMagnitude) {
  std::vector<NamedTensor<double>> ps{{"w", Tensor<double>({1}, {0.0}), ParamRole::weight}};
  ps[0].tensor.set_requires_grad(true);
  ps[0].tensor.mutable_grad()[0] = 1.0;
  auto st = AdamState<double>::make(ps);
  adam_step(st, ps, 0.1);
  EXPECT_NEAR(ps[0].tensor[0], -0.1 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, ZeroGradientsLeaveParams) {
  std::vector<NamedTensor<double>> ps{{"w", Tensor<double>({3}, {1, 2, 3}), ParamRole::weight}};
  auto st = AdamState<double>::make(ps);
  adam_step(st, ps, 0.1);
  EXPECT_EQ(ps[0].tensor[0], 1.0);
  EXPECT_EQ(ps[0].tensor[2], 3.0);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, MatchesScalarOracle) {
  std::vector<NamedTensor<double>> ps{{"w", Tensor<double>({1}, {0.5}), ParamRole::weight}};
  ps[0].tensor.set_requires_grad(true);
  auto st = AdamState<double>::make(ps);
  oracle::ScalarAdam ref;
  double p = 0.5;
  const double grads[10] = {0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1e-3, -3.0, 0.4, 0.9};
  for (double g : grads) {
    ps[0].tensor.zero_grad();
    ps[0].tensor.mutable_grad()[0] = g;
    adam_step(st, ps, 1e-2);
    p = ref.step(p, g, 1e-2);
    EXPECT_NEAR(ps[0].tensor[0], p, 1e-7);
  }
}

TEST(Adam, NanGradientNamesParameter) {
  std::vector<NamedTensor<float>> ps{{"enc0.res0.conv1.weight", Tensor<float>({2}), ParamRole::weight}};
  ps[0].tensor.set_requires_grad(true);
  ps[0].tensor.mutable_grad()[1] = std::nanf("");
  auto st = AdamState<float>::make(ps);
  try {
    adam_step(st, ps, 1e-3);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("enc0.res0.conv1.weight"), std::string::npos);
  }
}

TEST(Split, SeventyThirty) {
  const auto [tr, va] = split_cases(20, 0.3, 4);
  EXPECT_EQ(tr.size(), 14u);
  EXPECT_EQ(va.size(), 6u);
  std::vector<int> seen(20, 0);
  for (auto i : tr) ++seen[i];
  for (auto i : va) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(split_cases(20, 0.3, 4), split_cases(20, 0.3, 4));
}

TEST(Checkpoint, RoundtripBitIdenticalLogits) {
  auto model = build_model<float>(tiny(), 3);
  const auto x = Tensor<float>::he_normal({4, 8, 8, 8}, 1, 9);
  // perturb running stats so buffers matter
  model.forward(Tensor<float>::he_normal({2, 4, 8, 8, 8}, 1, 10), Mode::train);
  clear_tape();
  const auto before = model.forward(x, Mode::eval);
  clear_tape();
  const auto dir = scratch("roundtrip");
  Rng rng(77);
  rng();
  auto adam = AdamState<float>::make(model.parameters());
  save_checkpoint(make_checkpoint(model, &adam, 42, rng), dir);
  auto loaded = load_model(dir);
  const auto after = loaded.forward(x, Mode::eval);
  clear_tape();
  ASSERT_EQ(before.numel(), after.numel());
  for (std::int64_t i = 0; i < before.numel(); ++i) ASSERT_EQ(before[i], after[i]);
  const auto ck = load_checkpoint(dir);
  EXPECT_EQ(ck.step, 42);
  auto r2 = rng_from_string(ck.rng_state);
  EXPECT_EQ(r2(), rng());
}

TEST(Checkpoint, TamperedBlobIsFormatError) {
  auto model = build_model<float>(tiny(), 3);
  const auto dir = scratch("tampered");
  save_checkpoint(make_checkpoint(model, nullptr, 0, Rng(1)), dir);
  fs::resize_file(dir / "tensors.f32", fs::file_size(dir / "tensors.f32") - 8);
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

TEST(Checkpoint, VersionMismatch) {
  auto model = build_model<float>(tiny(), 3);
  const auto dir = scratch("version");
  save_checkpoint(make_checkpoint(model, nullptr, 0, Rng(1)), dir);
  auto m = blob::read_json(dir / "manifest.json");
  m["format_version"] = 99;
  blob::write_json(dir / "manifest.json", m);
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

TEST(Checkpoint, MismatchedArchListsNames) {
  auto model = build_model<float>(tiny(), 3);
  const auto dir = scratch("mismatch");
  save_checkpoint(make_checkpoint(model, nullptr, 0, Rng(1)), dir);
  const auto ck = load_checkpoint(dir);
  auto other = build_model<float>(tiny(ArchKind::unet), 3);
  try {
    apply_checkpoint(ck, other);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing"), std::string::npos);
    EXPECT_NE(msg.find("extra"), std::string::npos);
    EXPECT_NE(msg.find("skip0.gpc.axial.weight"), std::string::npos);
  }
}

TEST(Training, OneStepDecreasesLossOnFixedBatch) {
  const auto cases = tiny_cases(2, 1);
  std::vector<ClassIndex> idx;
  for (const auto& c : cases) idx.emplace_back(*c.labels);
  SamplerConfig sc;
  sc.patch_size = 8;
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto model = build_model<float>(tiny(), seed);
    Rng rng(seed);
    const auto b = sample_batch(cases, idx, sc, 2, rng);
    auto loss_of = [&] {
      auto l = add(cross_entropy(model.forward(b.image, Mode::train), b.labels.data),
                   penalty(model.parameters(), LossConfig{}));
      return l;
    };
    auto adam = AdamState<float>::make(model.parameters());
    // running stats do not influence train-mode outputs
    auto l0 = loss_of();
    const double before = l0.item();
    backward(l0);
    adam_step(adam, model.parameters(), 1e-4);
    model.zero_grad();
    double after;
    {
      NoGradGuard ng;
      after = loss_of().item();
    }
    improved += after < before;
  }
  EXPECT_GE(improved, 9);
}

TEST(Training, TotalLossIsCrossEntropyPlusPenalty) {
  const auto cases = tiny_cases(2, 2);
  TrainConfig tc{3, 1, 100, 5};
  SamplerConfig sc;
  sc.patch_size = 8;
  auto model = build_model<float>(tiny(), 1);
  const auto res = train_loop(model, cases, {}, tc, LossConfig{}, LrSchedule{}, sc);
  ASSERT_EQ(res.log.size(), 3u);
  for (const auto& r : res.log) {
    EXPECT_EQ(r["loss"].get<double>(),
              static_cast<double>(static_cast<float>(r["cross_entropy"].get<double>()) +
                                  static_cast<float>(r["penalty"].get<double>())));
  }
  auto m2 = build_model<float>(tiny(), 1);
  const auto r0 = train_loop(m2, cases, {}, tc, LossConfig{0, 0}, LrSchedule{}, sc);
  for (const auto& r : r0.log) EXPECT_EQ(r["penalty"].get<double>(), 0.0);
}

TEST(Training, EvalCadence) {
  const auto cases = tiny_cases(3, 3);
  ArchConfig a = tiny(ArchKind::unet);
  a.filters_per_level = {1, 1};
  SamplerConfig sc;
  sc.patch_size = 2;
  TrainConfig tc{3000, 1, 1000, 1};
  auto model = build_model<float>(a, 1);
  const std::vector<Case> val{cases[2]};
  const auto res = train_loop(model, {cases[0], cases[1]}, val, tc, LossConfig{}, LrSchedule{}, sc);
  int evals = 0;
  for (const auto& r : res.log) evals += r.contains("eval");
  EXPECT_EQ(evals, 3);
  EXPECT_EQ(res.steps, 3000);
}

TEST(Training, DeterministicAndResumable) {
  const auto cases = tiny_cases(3, 4);
  SamplerConfig sc;
  sc.patch_size = 8;
  TrainConfig tc{6, 2, 3, 11};
  LrSchedule sched;
  sched.decay_every = 2;
  const auto dir = scratch("resume");
  auto run = [&](const fs::path& ckdir, const fs::path& log, std::optional<fs::path> resume, TrainConfig cfg) {
    auto model = build_model<float>(tiny(), 2);
    TrainOptions opt;
    opt.checkpoint_dir = ckdir;
    opt.log_path = log;
    opt.resume_from = resume;
    return train_loop(model, {cases[0], cases[1]}, {cases[2]}, cfg, LossConfig{}, sched, sc, opt);
  };
  fs::create_directories(dir);
  run(dir / "a", dir / "a.jsonl", std::nullopt, tc);
  run(dir / "b", dir / "b.jsonl", std::nullopt, tc);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "final" / "tensors.f32"), slurp(dir / "b" / "final" / "tensors.f32"));
  // resume from the mid-run checkpoint and finish: identical tail and lr
  TrainConfig half = tc;
  half.total_steps = 3;
  run(dir / "c", dir / "c.jsonl", std::nullopt, half);
  const auto tail = run(dir / "d", dir / "d.jsonl", dir / "c" / step_dir_name(3), tc);
  ASSERT_FALSE(tail.log.empty());
  EXPECT_EQ(tail.log.front()["step"].get<int>(), 4);
  EXPECT_EQ(tail.log.front()["lr"].get<double>(), lr_at(3, sched));
  EXPECT_EQ(slurp(dir / "c.jsonl") + slurp(dir / "d.jsonl"), slurp(dir / "a.jsonl"));
}

TEST(Training, NonFiniteLossWritesDiagnostic) {
  auto cases = tiny_cases(2, 5);
  cases[0].modalities[0].volume.data[100] = std::numeric_limits<float>::infinity();
  cases[1].modalities[0].volume.data[100] = std::numeric_limits<float>::infinity();
  SamplerConfig sc;
  sc.patch_size = 16;
  auto model = build_model<float>(tiny(), 2);
  TrainOptions opt;
  const auto dir = scratch("nan");
  opt.checkpoint_dir = dir;
  EXPECT_THROW(train_loop(model, cases, {}, TrainConfig{2, 1, 10, 1}, LossConfig{}, LrSchedule{}, sc, opt),
               NumericalError);
  EXPECT_TRUE(fs::exists(dir / "diagnostic" / "manifest.json"));
}
