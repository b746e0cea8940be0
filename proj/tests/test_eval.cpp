#include <gtest/gtest.h>

#include <random>

#include "gpcseg/eval/metrics.hpp"
#include "oracles.hpp"

using namespace gpcseg;

namespace {

oracle::Mask to_oracle(const Mask& m) { return {m.dims[0], m.dims[1], m.dims[2], m.data}; }

// Random blobby mask: union of a few boxes, or scattered voxels.
Mask random_mask(Dims d, std::mt19937_64& rng) {
  Mask m(d);
  const int kind = static_cast<int>(rng() % 3);
  if (kind == 0) {
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

}  // namespace

TEST(Regions, CountsOnConstructedCube) {
  LabelVolume l({4, 4, 4});
  l.at(0, 0, 0) = 1;
  l.at(1, 1, 1) = 2;
  l.at(2, 2, 2) = 3;
  const auto r = regions_from_labels(l);
  auto count = [](const Mask& m) { return std::count(m.data.begin(), m.data.end(), 1); };
  EXPECT_EQ(count(r.whole_tumor), 3);
  EXPECT_EQ(count(r.tumor_core), 2);
  EXPECT_EQ(count(r.enhancing_tumor), 1);
  const auto e = regions_from_labels(LabelVolume({3, 3, 3}));
  EXPECT_EQ(count(e.whole_tumor) + count(e.tumor_core) + count(e.enhancing_tumor), 0);
  l.at(3, 3, 3) = 5;
  EXPECT_THROW(regions_from_labels(l), ConfigError);
}

TEST(Regions, NestingOnRandomLabels) {
  std::mt19937_64 rng(3);
  LabelVolume l({6, 7, 8});
  for (auto& v : l.data) v = static_cast<std::uint8_t>(rng() % 4);
  const auto r = regions_from_labels(l);
  for (std::size_t i = 0; i < l.data.size(); ++i) {
    EXPECT_LE(r.enhancing_tumor.data[i], r.tumor_core.data[i]);
    EXPECT_LE(r.tumor_core.data[i], r.whole_tumor.data[i]);
  }
}

TEST(Dice, HandCases) {
  Mask a({4, 4, 4}), b({4, 4, 4});
  for (int i = 0; i < 8; ++i) a.data[i] = 1;
  EXPECT_EQ(dice(a, a), 1.0);
  for (int i = 8; i < 16; ++i) b.data[i] = 1;
  EXPECT_EQ(dice(a, b), 0.0);
  Mask c({4, 4, 4});
  for (int i = 4; i < 12; ++i) c.data[i] = 1;
  EXPECT_EQ(dice(a, c), 0.5);
  const auto both = dice_detailed(Mask({2, 2, 2}), Mask({2, 2, 2}));
  EXPECT_EQ(both.value, 1.0);
  EXPECT_EQ(both.flag, DiceFlag::both_empty);
  const auto one = dice_detailed(a, Mask({4, 4, 4}));
  EXPECT_EQ(one.value, 0.0);
  EXPECT_EQ(one.flag, DiceFlag::one_empty);
  EXPECT_THROW(dice(a, Mask({4, 4, 5})), ShapeError);
}

TEST(Dice, ConfusionInvariants) {
  std::mt19937_64 rng(4);
  const auto p = random_mask({5, 5, 5}, rng), t = random_mask({5, 5, 5}, rng);
  const auto c = confusion(p, t);
  EXPECT_EQ(c.tp + c.fn, std::count(t.data.begin(), t.data.end(), 1));
  EXPECT_EQ(c.tp + c.fp, std::count(p.data.begin(), p.data.end(), 1));
  EXPECT_EQ(dice(p, t), dice(t, p));
}

TEST(Hausdorff, HandCases) {
  Mask a({1, 1, 8}), b({1, 1, 8});
  a.at(0, 0, 1) = 1;
  b.at(0, 0, 4) = 1;
  EXPECT_EQ(hausdorff95(a, b), 3.0);
  EXPECT_EQ(hausdorff95(a, a), 0.0);
  EXPECT_EQ(hausdorff95(a, b, {1, 1, 2}), 6.0);
  EXPECT_THROW(hausdorff95(a, Mask({1, 1, 8})), EmptyStructureError);
  EXPECT_THROW(hausdorff95(Mask({1, 1, 8}), a), EmptyStructureError);
}

TEST(Hausdorff, BoundaryTreatsBorderAsOutside) {
  Mask full({3, 3, 3}, 1);
  EXPECT_EQ(boundary_voxels(full).size(), 26u);
  Mask big({5, 5, 5});
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) big.at(z, y, x) = 1;
  EXPECT_EQ(boundary_voxels(big).size(), 26u);
}

TEST(Hausdorff, MatchesBruteForceOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Dims d{2 + std::int64_t(rng() % 11), 2 + std::int64_t(rng() % 11), 2 + std::int64_t(rng() % 11)};
    const auto p = random_mask(d, rng), t = random_mask(d, rng);
    const Spacing sp = trial % 2 ? Spacing{1, 1, 1} : Spacing{1.5, 0.7, 1.2};
    const double want = oracle::brute_hd95(to_oracle(p), to_oracle(t), sp);
    EXPECT_EQ(hausdorff95(p, t, sp, DistanceMethod::brute_force), want) << trial;
    EXPECT_EQ(hausdorff95(p, t, sp, DistanceMethod::distance_transform), want) << trial;
    EXPECT_EQ(dice(p, t), oracle::brute_dice(to_oracle(p), to_oracle(t))) << trial;
  }
}

TEST(Hausdorff, Properties) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_mask({8, 8, 8}, rng), t = random_mask({8, 8, 8}, rng);
    EXPECT_LE(hausdorff95(p, t), hausdorff_percentile(p, t, {1, 1, 1}, 100.0));
    EXPECT_EQ(hausdorff95(p, t), hausdorff95(t, p));
    EXPECT_EQ(hausdorff95(p, p), 0.0);
  }
}

TEST(Hausdorff, TranslationInvariant) {
  Mask a({16, 16, 16}), b({16, 16, 16}), a2({16, 16, 16}), b2({16, 16, 16});
  for (int z = 3; z < 7; ++z)
    for (int y = 3; y < 8; ++y)
      for (int x = 2; x < 6; ++x) {
        a.at(z, y, x) = 1;
        a2.at(z + 4, y + 2, x + 5) = 1;
      }
  for (int z = 4; z < 8; ++z)
    for (int y = 2; y < 6; ++y)
      for (int x = 3; x < 8; ++x) {
        b.at(z, y, x) = 1;
        b2.at(z + 4, y + 2, x + 5) = 1;
      }
  EXPECT_EQ(hausdorff95(a, b), hausdorff95(a2, b2));
}

TEST(Hausdorff, DistanceTransformOnLargeMasks) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_mask({30, 28, 26}, rng), t = random_mask({30, 28, 26}, rng);
    const Spacing sp{1.2, 0.9, 1.0};
    EXPECT_EQ(hausdorff95(p, t, sp, DistanceMethod::brute_force),
              hausdorff95(p, t, sp, DistanceMethod::distance_transform));
  }
}

TEST(EvaluateSet, Aggregation) {
  const auto s = summarize({0.8, 0.6});
  EXPECT_DOUBLE_EQ(s.mean, 0.7);
  EXPECT_NEAR(s.std, 0.1, 1e-15);
  EXPECT_EQ(summarize({0.42}).std, 0.0);
}

TEST(EvaluateSet, EmptyPredictedEtIsExcluded) {
  LabelVolume truth({6, 6, 6});
  for (int z = 1; z < 5; ++z)
    for (int y = 1; y < 5; ++y)
      for (int x = 1; x < 5; ++x) truth.at(z, y, x) = 1;
  truth.at(2, 2, 2) = 2;
  truth.at(3, 3, 3) = 3;
  LabelVolume pred = truth;
  pred.at(2, 2, 2) = 3;  // no enhancing voxel predicted
  const auto rec = evaluate_set({truth, pred}, {truth, truth}, {1, 1, 1}, {"a", "b"});
  const std::size_t et = 0;
  ASSERT_EQ(kRegions[et], Region::et);
  EXPECT_EQ(rec.cases[1].regions[et].dice_flag, DiceFlag::one_empty);
  EXPECT_FALSE(rec.cases[1].regions[et].hd95_mm.has_value());
  EXPECT_EQ(rec.aggregate[et].hd95_excluded, 1);
  EXPECT_EQ(rec.aggregate[et].hd95.count, 1);
  EXPECT_EQ(rec.aggregate[et].dice.mean, 0.5);
  for (std::size_t r = 1; r < 3; ++r) EXPECT_EQ(rec.cases[0].regions[r].dice, 1.0);
  const auto j = to_json(rec);
  EXPECT_TRUE(j["cases"][1]["ET"]["hd95_mm"].is_null());
  const auto table = metrics_table(rec);
  EXPECT_NE(table.find("ET"), std::string::npos);
  EXPECT_NE(table.find("hd95 excluded: 1"), std::string::npos);
  EXPECT_THROW(evaluate_set({truth}, {}), ConfigError);
}
