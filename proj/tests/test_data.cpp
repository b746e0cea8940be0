#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <random>

#include "gpcseg/data/case.hpp"
#include "gpcseg/data/nifti.hpp"
#include "gpcseg/data/normalize.hpp"
#include "gpcseg/data/phantom.hpp"
#include "gpcseg/data/sampler.hpp"

using namespace gpcseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gpcseg_test_data_" + name);
  fs::remove_all(p);
  return p;
}

Case random_case(std::uint64_t seed, Dims d = {5, 6, 7}) {
  Rng rng(seed);
  std::normal_distribution<float> n(0.0f, 3.0f);
  Case c;
  c.id = "rand";
  c.spacing_mm = {1.0, 0.5, 2.0};
  for (const auto& name : canonical_modalities()) {
    Volume<float> v(d);
    for (auto& x : v.data) x = n(rng);
    c.modalities.push_back({name, v});
  }
  LabelVolume l(d);
  for (auto& x : l.data) x = static_cast<std::uint8_t>(rng() % 4);
  c.labels = l;
  return c;
}

PhantomConfig small_phantom() {
  PhantomConfig p;
  p.dims = {32, 32, 32};
  p.center = {15.5, 15.5, 15.5};
  p.brain_radius = {14, 14, 14};
  p.edema_radius = {10, 9, 8};
  p.enhancing_radius = {6, 6, 5};
  p.necrosis_radius = {3, 3, 2.5};
  p.seed = 42;
  return p;
}

}  // namespace

TEST(CaseFormat, RoundtripIsBitIdentical) {
  const auto dir = scratch("roundtrip");
  const auto c = random_case(1);
  save_case(c, dir);
  const auto back = load_case(dir);
  EXPECT_TRUE(back == c);
  for (std::size_t m = 0; m < c.modalities.size(); ++m)
    EXPECT_EQ(std::memcmp(back.modalities[m].volume.data.data(), c.modalities[m].volume.data.data(),
                          c.modalities[m].volume.data.size() * 4),
              0);
}

TEST(CaseFormat, UnlabeledRoundtrip) {
  const auto dir = scratch("unlabeled");
  auto c = random_case(2).select({"t1gd", "flair"});
  c.labels.reset();
  save_case(c, dir);
  EXPECT_TRUE(load_case(dir) == c);
}

TEST(CaseFormat, TruncatedBlobNamesTheVolume) {
  const auto dir = scratch("truncated");
  save_case(random_case(3), dir);
  fs::resize_file(dir / "t1gd.f32", fs::file_size(dir / "t1gd.f32") - 3);
  try {
    load_case(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("t1gd"), std::string::npos) << e.what();
  }
}

TEST(CaseFormat, UnknownLabelValueIsRejected) {
  const auto dir = scratch("label7");
  save_case(random_case(4), dir);
  {
    std::fstream f(dir / "labels.u8", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(5);
    f.put(7);
  }
  EXPECT_THROW(load_case(dir), ConfigError);
}

TEST(CaseFormat, CorruptManifest) {
  const auto dir = scratch("corrupt");
  save_case(random_case(5), dir);
  { std::ofstream(dir / "manifest.json") << "{ not json"; }
  EXPECT_THROW(load_case(dir), FormatError);
  auto j = random_case(5);
  save_case(j, dir);
  auto m = blob::read_json(dir / "manifest.json");
  m["dims"] = {5, 6, 8};
  blob::write_json(dir / "manifest.json", m);
  EXPECT_THROW(load_case(dir), FormatError);
  m["dims"] = {5, 6, 7};
  m["format_version"] = 2;
  blob::write_json(dir / "manifest.json", m);
  EXPECT_THROW(load_case(dir), FormatError);
}

TEST(CaseFormat, ModalityNames) {
  EXPECT_NO_THROW(validate_modality_names({"t1", "t2"}));
  EXPECT_THROW(validate_modality_names({"t2", "t1"}), ConfigError);
  EXPECT_THROW(validate_modality_names({"dwi"}), ConfigError);
  EXPECT_THROW(validate_modality_names({}), ConfigError);
}

namespace {
void nonzero_moments(const Volume<float>& v, double& mean, double& sd) {
  double s = 0, n = 0;
  for (float x : v.data)
    if (x != 0) s += x, n += 1;
  mean = s / n;
  double q = 0;
  for (float x : v.data)
    if (x != 0) q += (x - mean) * (x - mean);
  sd = std::sqrt(q / n);
}
}  // namespace

TEST(Normalize, ZscoreMoments) {
  const auto c = zscore_normalize(generate_phantom(small_phantom()));
  const auto raw = generate_phantom(small_phantom());
  for (std::size_t m = 0; m < c.modalities.size(); ++m) {
    double mu, sd;
    nonzero_moments(c.modalities[m].volume, mu, sd);
    EXPECT_GT(mu, -1e-4);
    EXPECT_LT(mu, 1e-4);
    EXPECT_GT(sd, 1 - 1e-3);
    EXPECT_LT(sd, 1 + 1e-3);
    for (std::size_t i = 0; i < raw.modalities[m].volume.data.size(); ++i)
      if (raw.modalities[m].volume.data[i] == 0.0f) {
        EXPECT_EQ(c.modalities[m].volume.data[i], 0.0f);
      }
  }
}

TEST(Normalize, Idempotent) {
  const auto once = zscore_normalize(generate_phantom(small_phantom()));
  const auto twice = zscore_normalize(once);
  for (std::size_t m = 0; m < once.modalities.size(); ++m)
    for (std::size_t i = 0; i < once.modalities[m].volume.data.size(); ++i)
      ASSERT_NEAR(once.modalities[m].volume.data[i], twice.modalities[m].volume.data[i], 1e-4);
}

TEST(Normalize, AllBackgroundIsAnError) {
  auto c = random_case(6);
  std::fill(c.modalities[1].volume.data.begin(), c.modalities[1].volume.data.end(), 0.0f);
  EXPECT_THROW(zscore_normalize(c), NumericalError);
  auto k = random_case(6);
  std::fill(k.modalities[0].volume.data.begin(), k.modalities[0].volume.data.end(), 2.0f);
  EXPECT_THROW(zscore_normalize(k), NumericalError);
  EXPECT_TRUE(normalize(c, Normalization::none) == c);
}

TEST(Phantom, DeterministicPerSeed) {
  EXPECT_TRUE(generate_phantom(small_phantom()) == generate_phantom(small_phantom()));
  auto other = small_phantom();
  other.seed = 43;
  EXPECT_FALSE(generate_phantom(other) == generate_phantom(small_phantom()));
}

TEST(Phantom, AllClassesPresent) {
  const auto c = generate_phantom(small_phantom());
  std::array<int, 4> counts{};
  for (auto v : c.labels->data) ++counts[v];
  for (int k = 0; k < 4; ++k) EXPECT_GT(counts[k], 0) << k;
}

TEST(Phantom, RegionNesting) {
  const auto cfg = small_phantom();
  const auto c = generate_phantom(cfg);
  auto inside = [&](std::int64_t z, std::int64_t y, std::int64_t x, const Radii& r) {
    const double a = (z - cfg.center[0]) / r[0], b = (y - cfg.center[1]) / r[1], e = (x - cfg.center[2]) / r[2];
    return a * a + b * b + e * e <= 1.0;
  };
  for (std::int64_t z = 0; z < 32; ++z)
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x = 0; x < 32; ++x) {
        const auto l = c.labels->at(z, y, x);
        ASSERT_TRUE(l < 2 || inside(z, y, x, cfg.enhancing_radius));
        ASSERT_TRUE(l < 1 || inside(z, y, x, cfg.edema_radius));
        ASSERT_EQ(l == 3, inside(z, y, x, cfg.necrosis_radius));
      }
}

TEST(Phantom, BackgroundOutsideBrainIsZero) {
  const auto c = generate_phantom(small_phantom());
  EXPECT_EQ(c.modality("t1").at(0, 0, 0), 0.0f);
  EXPECT_GT(c.modality("t1").at(16, 16, 2), 0.0f);
}

TEST(Phantom, ClassVolumesMonotoneInRadius) {
  auto cfg = small_phantom();
  int prev = -1;
  for (double r : {7.0, 8.0, 9.0, 10.0, 11.0}) {
    cfg.edema_radius = {r, r, r};
    const auto c = generate_phantom(cfg);
    const int n = static_cast<int>(std::count(c.labels->data.begin(), c.labels->data.end(), 1));
    EXPECT_GE(n, prev);
    prev = n;
  }
}

TEST(Phantom, InvalidConfigs) {
  auto cfg = small_phantom();
  cfg.necrosis_radius = {7, 3, 3};
  EXPECT_THROW(generate_phantom(cfg), ConfigError);
  cfg = small_phantom();
  cfg.dims = {20, 32, 32};
  EXPECT_THROW(generate_phantom(cfg), ConfigError);
}

TEST(Phantom, SetVariantsAreValidAndDistinct) {
  PhantomSetConfig s;
  s.count = 6;
  s.dims = {40, 40, 40};
  s.seed = 7;
  const auto cases = generate_phantom_set(s);
  ASSERT_EQ(cases.size(), 6u);
  EXPECT_FALSE(cases[0] == cases[1]);
  for (const auto& c : cases) {
    std::array<int, 4> counts{};
    for (auto v : c.labels->data) ++counts[v];
    for (int k = 0; k < 4; ++k) EXPECT_GT(counts[k], 0);
  }
  EXPECT_TRUE(generate_phantom_set(s)[3] == cases[3]);
}

TEST(Sampler, ClassFrequencies) {
  const auto c = generate_phantom(small_phantom());
  const ClassIndex idx(*c.labels);
  SamplerConfig cfg;
  Rng rng(5);
  std::array<int, 4> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_center(idx, cfg, rng);
    ASSERT_EQ(c.labels->at(s.coord[0], s.coord[1], s.coord[2]), s.cls);
    ++counts[s.cls];
  }
  const std::array<double, 4> want{0.50, 0.20, 0.15, 0.15};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(counts[k] / double(n), want[k], 0.02) << k;
}

TEST(Sampler, RenormalizesOverPresentClasses) {
  auto c = generate_phantom(small_phantom());
  for (auto& v : c.labels->data)
    if (v == 2) v = 3;
  const ClassIndex idx(*c.labels);
  SamplerConfig cfg;
  const auto p = idx.effective_probs(cfg);
  EXPECT_NEAR(p[0], 0.50 / 0.85, 1e-12);
  EXPECT_NEAR(p[1], 0.20 / 0.85, 1e-12);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_NEAR(p[3], 0.15 / 0.85, 1e-12);
  Rng rng(9);
  std::array<int, 4> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_center(idx, cfg, rng);
    ASSERT_EQ(c.labels->at(s.coord[0], s.coord[1], s.coord[2]), s.cls);
    ++counts[s.cls];
  }
  EXPECT_EQ(counts[2], 0);
  for (int k : {0, 1, 3}) EXPECT_NEAR(counts[k] / double(n), p[k], 0.02);
}

TEST(Sampler, BackgroundOnlyCase) {
  LabelVolume l({4, 4, 4});
  const ClassIndex idx(l);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_center(idx, SamplerConfig{}, rng).cls, 0);
  LabelVolume t({2, 2, 2}, 1);
  EXPECT_THROW(sample_center(ClassIndex(t), SamplerConfig{}, rng), ConfigError);
}

TEST(Sampler, ConfigValidation) {
  SamplerConfig cfg;
  cfg.class_probs = {0.5, 0.5, 0.5, 0.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Patch, InteriorCopiesVerbatim) {
  const auto c = random_case(7, {12, 13, 14});
  const Dims center{6, 7, 8};
  const auto p = extract_patch(c, center, 4);
  ASSERT_EQ(p.image.shape(), (Shape{4, 4, 4, 4}));
  for (std::int64_t m = 0; m < 4; ++m)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t k = 0; k < 4; ++k) {
          const float want = c.modalities[m].volume.at(center[0] - 2 + i, center[1] - 2 + j, center[2] - 2 + k);
          ASSERT_EQ(p.image[((m * 4 + i) * 4 + j) * 4 + k], want);
        }
  EXPECT_EQ(p.labels.at(0, 0, 0), c.labels->at(4, 5, 6));
}

TEST(Patch, CornerIsClampedFlush) {
  const auto c = random_case(8, {10, 10, 10});
  const auto lo = extract_patch(c, {0, 0, 0}, 6);
  EXPECT_EQ(lo.origin, (Dims{0, 0, 0}));
  EXPECT_EQ(lo.image[0], c.modalities[0].volume.at(0, 0, 0));
  const auto hi = extract_patch(c, {9, 9, 9}, 6);
  EXPECT_EQ(hi.origin, (Dims{4, 4, 4}));
  EXPECT_EQ(hi.image.shape(), (Shape{4, 6, 6, 6}));
  EXPECT_EQ(hi.image[6 * 6 * 6 - 1], c.modalities[0].volume.at(9, 9, 9));
  // no zero fill: every voxel comes from the source
  for (float v : hi.image.data()) EXPECT_NE(v, 0.0f);
}

TEST(Patch, OversizeIsAnError) {
  const auto c = random_case(9, {64, 64, 64});
  EXPECT_THROW(extract_patch(c, {32, 32, 32}, 80), ShapeError);
}

TEST(Patch, BatchShapesAndLabels) {
  std::vector<Case> cases{generate_phantom(small_phantom())};
  std::vector<ClassIndex> idx{ClassIndex(*cases[0].labels)};
  SamplerConfig cfg;
  cfg.patch_size = 8;
  Rng rng(3);
  const auto b = sample_batch(cases, idx, cfg, 3, rng);
  EXPECT_EQ(b.image.shape(), (Shape{3, 4, 8, 8, 8}));
  EXPECT_EQ(b.labels.shape, (Shape{3, 8, 8, 8}));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto p = extract_patch(cases[0], b.centers[i].coord, 8);
    for (std::int64_t v = 0; v < 512; ++v) ASSERT_EQ(b.labels.data[i * 512 + v], p.labels.data[v]);
  }
}

TEST(Nifti, RoundtripDatatypes) {
  const auto dir = scratch("nifti");
  fs::create_directories(dir);
  Volume<float> v({3, 4, 5});
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i % 7) - 2.0f;
  nifti::write(dir / "f.nii", v, {2.0, 1.5, 1.0});
  const auto f = nifti::read(dir / "f.nii");
  EXPECT_EQ(f.volume, v);
  EXPECT_EQ(f.spacing_mm, (std::array<double, 3>{2.0, 1.5, 1.0}));
  nifti::write(dir / "s.nii", v, {1, 1, 1}, nifti::kInt16);
  EXPECT_EQ(nifti::read(dir / "s.nii").volume, v);
  for (auto& x : v.data) x = std::abs(x);
  nifti::write(dir / "u.nii", v, {1, 1, 1}, nifti::kUint8);
  EXPECT_EQ(nifti::read(dir / "u.nii").volume, v);
  // axis mapping: header dim[1] (x) is W, dim[3] (z) is D
  const auto bytes = blob::read_bytes(dir / "f.nii");
  std::int16_t nx, nz;
  std::memcpy(&nx, bytes.data() + 42, 2);
  std::memcpy(&nz, bytes.data() + 46, 2);
  EXPECT_EQ(nx, 5);
  EXPECT_EQ(nz, 3);
}

TEST(Nifti, TruncatedAndBadMagic) {
  const auto dir = scratch("nifti_bad");
  fs::create_directories(dir);
  Volume<float> v({3, 4, 5}, 1.0f);
  nifti::write(dir / "f.nii", v, {1, 1, 1});
  fs::resize_file(dir / "f.nii", fs::file_size(dir / "f.nii") - 4);
  EXPECT_THROW(nifti::read(dir / "f.nii"), FormatError);
  { std::ofstream(dir / "g.nii") << std::string(400, 'x'); }
  EXPECT_THROW(nifti::read(dir / "g.nii"), FormatError);
}

TEST(Nifti, ChallengeLabelCodes) {
  EXPECT_EQ(nifti::challenge_to_internal(0), 0);
  EXPECT_EQ(nifti::challenge_to_internal(1), 3);
  EXPECT_EQ(nifti::challenge_to_internal(2), 1);
  EXPECT_EQ(nifti::challenge_to_internal(4), 2);
  EXPECT_THROW(nifti::challenge_to_internal(3), FormatError);
}
