#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpcseg/core/error.hpp"
#include "gpcseg/core/parallel.hpp"
#include "gpcseg/eval/regions.hpp"

namespace gpcseg {

using Spacing = std::array<double, 3>;  // (D, H, W) in mm

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
};

inline void require_same_dims(const Mask& a, const Mask& b, const char* op) {
  if (a.dims != b.dims || a.data.size() != b.data.size())
    throw ShapeError(std::string(op) + ": mask shapes differ");
}

inline ConfusionCounts confusion(const Mask& pred, const Mask& truth) {
  require_same_dims(pred, truth, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

enum class DiceFlag { none, both_empty, one_empty };

inline const char* dice_flag_name(DiceFlag f) {
  switch (f) {
    case DiceFlag::none: return "none";
    case DiceFlag::both_empty: return "both_empty";
    case DiceFlag::one_empty: return "one_empty";
  }
  return "?";
}

struct DiceResult {
  double value = 0;
  DiceFlag flag = DiceFlag::none;
};

// 2TP / (2TP + FP + FN). Both empty: 1.0; one empty: 0.0; both flagged.
inline DiceResult dice_detailed(const Mask& pred, const Mask& truth) {
  const auto c = confusion(pred, truth);
  const auto np = c.tp + c.fp, nt = c.tp + c.fn;
  if (np == 0 && nt == 0) return {1.0, DiceFlag::both_empty};
  if (np == 0 || nt == 0) return {0.0, DiceFlag::one_empty};
  return {2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn), DiceFlag::none};
}

inline double dice(const Mask& pred, const Mask& truth) { return dice_detailed(pred, truth).value; }

// Mask voxels with at least one of the 6 face neighbours outside the mask;
// the volume border counts as outside.
inline std::vector<std::int64_t> boundary_voxels(const Mask& m) {
  const auto [d, h, w] = m.dims;
  auto on = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= d || y >= h || x >= w) return false;
    return m.data[m.index(z, y, x)] != 0;
  };
  std::vector<std::int64_t> out;
  for (std::int64_t z = 0; z < d; ++z)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        if (!on(z, y, x)) continue;
        if (!on(z - 1, y, x) || !on(z + 1, y, x) || !on(z, y - 1, x) || !on(z, y + 1, x) || !on(z, y, x - 1) ||
            !on(z, y, x + 1))
          out.push_back(static_cast<std::int64_t>(m.index(z, y, x)));
      }
  return out;
}

// q-th percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw EmptyStructureError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

namespace detail {

// Squared mm distance, summed as (dx^2 + dy^2) + dz^2.
inline double sq_dist(const Dims& a, const Dims& b, const Spacing& sp) {
  const double dz = static_cast<double>(a[0] - b[0]) * sp[0];
  const double dy = static_cast<double>(a[1] - b[1]) * sp[1];
  const double dx = static_cast<double>(a[2] - b[2]) * sp[2];
  return (dx * dx + dy * dy) + dz * dz;
}

inline std::vector<double> directed_brute(const Dims& dims, const std::vector<std::int64_t>& from,
                                          const std::vector<std::int64_t>& to, const Spacing& sp) {
  const Mask shape(dims);
  std::vector<Dims> tc;
  tc.reserve(to.size());
  for (auto i : to) tc.push_back(shape.coord(i));
  std::vector<double> out(from.size());
  parallel_for(static_cast<std::int64_t>(from.size()), [&](std::int64_t i) {
    const Dims a = shape.coord(from[static_cast<std::size_t>(i)]);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : tc) best = std::min(best, sq_dist(a, b, sp));
    out[static_cast<std::size_t>(i)] = std::sqrt(best);
  });
  return out;
}

// One pass of the lower-envelope squared distance transform along a line:
// out[q] = min_p f[p] + ((q - p) * s)^2. Infinite f marks "no site".
inline void edt_line(const double* f, double* out, std::int64_t n, double s, std::vector<std::int64_t>& v,
                     std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n + 1), 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  const double s2 = s * s;
  auto cost = [&](std::int64_t q, std::int64_t p) {
    const double d = static_cast<double>(q - p) * s;
    return f[p] + d * d;
  };
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double sct;
    while (true) {
      const auto p = v[static_cast<std::size_t>(k)];
      sct = ((f[q] + s2 * double(q) * double(q)) - (f[p] + s2 * double(p) * double(p))) / (2.0 * s2 * double(q - p));
      // parabolas tied at a breakpoint are kept so the evaluation below sees both
      const double zk = z[static_cast<std::size_t>(k)];
      if (k > 0 && sct < zk - 1e-9 * (1.0 + std::abs(zk))) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = sct;
    z[static_cast<std::size_t>(k + 1)] = inf;
  }
  if (k < 0) {
    for (std::int64_t q = 0; q < n; ++q) out[q] = inf;
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (j < k && z[static_cast<std::size_t>(j + 1)] < static_cast<double>(q)) ++j;
    // neighbours guard against rounding in the breakpoints
    double best = cost(q, v[static_cast<std::size_t>(j)]);
    for (std::int64_t t = std::max<std::int64_t>(0, j - 2); t <= std::min(k, j + 2); ++t)
      best = std::min(best, cost(q, v[static_cast<std::size_t>(t)]));
    out[q] = best;
  }
}

// Squared mm distance from every voxel to the nearest site (W, then H, then D).
inline std::vector<double> squared_edt(const Dims& dims, const std::vector<std::int64_t>& sites, const Spacing& sp) {
  const auto [d, h, w] = dims;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> a(static_cast<std::size_t>(d * h * w), inf);
  for (auto i : sites) a[static_cast<std::size_t>(i)] = 0.0;
  std::vector<double> b(a.size());
  // W axis
  parallel_for(d * h, [&](std::int64_t row) {
    std::vector<std::int64_t> v;
    std::vector<double> z;
    edt_line(&a[static_cast<std::size_t>(row * w)], &b[static_cast<std::size_t>(row * w)], w, sp[2], v, z);
  });
  // H axis
  parallel_for(d * w, [&](std::int64_t line) {
    const auto zz = line / w, x = line % w;
    std::vector<double> in(static_cast<std::size_t>(h)), out(static_cast<std::size_t>(h));
    std::vector<std::int64_t> v;
    std::vector<double> z;
    for (std::int64_t y = 0; y < h; ++y) in[static_cast<std::size_t>(y)] = b[static_cast<std::size_t>((zz * h + y) * w + x)];
    edt_line(in.data(), out.data(), h, sp[1], v, z);
    for (std::int64_t y = 0; y < h; ++y) a[static_cast<std::size_t>((zz * h + y) * w + x)] = out[static_cast<std::size_t>(y)];
  });
  // D axis
  parallel_for(h * w, [&](std::int64_t line) {
    std::vector<double> in(static_cast<std::size_t>(d)), out(static_cast<std::size_t>(d));
    std::vector<std::int64_t> v;
    std::vector<double> z;
    for (std::int64_t zz = 0; zz < d; ++zz) in[static_cast<std::size_t>(zz)] = a[static_cast<std::size_t>(zz * h * w + line)];
    edt_line(in.data(), out.data(), d, sp[0], v, z);
    for (std::int64_t zz = 0; zz < d; ++zz) b[static_cast<std::size_t>(zz * h * w + line)] = out[static_cast<std::size_t>(zz)];
  });
  return b;
}

inline std::vector<double> directed_edt(const Dims& dims, const std::vector<std::int64_t>& from,
                                        const std::vector<std::int64_t>& to, const Spacing& sp) {
  const auto dt = squared_edt(dims, to, sp);
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = std::sqrt(dt[static_cast<std::size_t>(from[i])]);
  return out;
}

}  // namespace detail

enum class DistanceMethod { automatic, brute_force, distance_transform };

// Max over both directions of the q-th percentile of nearest boundary
// distances. Throws EmptyStructureError when either mask is empty.
inline double hausdorff_percentile(const Mask& pred, const Mask& truth, const Spacing& sp, double q,
                                   DistanceMethod method = DistanceMethod::automatic) {
  require_same_dims(pred, truth, "hausdorff");
  const auto bp = boundary_voxels(pred);
  const auto bt = boundary_voxels(truth);
  if (bp.empty()) throw EmptyStructureError("prediction mask is empty");
  if (bt.empty()) throw EmptyStructureError("truth mask is empty");
  if (method == DistanceMethod::automatic)
    method = static_cast<double>(bp.size()) * static_cast<double>(bt.size()) <= 4e6 ? DistanceMethod::brute_force
                                                                                   : DistanceMethod::distance_transform;
  std::vector<double> pt, tp;
  if (method == DistanceMethod::brute_force) {
    pt = detail::directed_brute(pred.dims, bp, bt, sp);
    tp = detail::directed_brute(pred.dims, bt, bp, sp);
  } else {
    pt = detail::directed_edt(pred.dims, bp, bt, sp);
    tp = detail::directed_edt(pred.dims, bt, bp, sp);
  }
  return std::max(percentile(std::move(pt), q), percentile(std::move(tp), q));
}

inline double hausdorff95(const Mask& pred, const Mask& truth, const Spacing& sp = {1, 1, 1},
                          DistanceMethod method = DistanceMethod::automatic) {
  return hausdorff_percentile(pred, truth, sp, 95.0, method);
}

struct RegionMetrics {
  double dice = 0;
  DiceFlag dice_flag = DiceFlag::none;
  std::optional<double> hd95_mm;  // empty when either structure is empty
};

struct CaseMetrics {
  std::string id;
  std::array<RegionMetrics, 3> regions;  // indexed like kRegions
};

struct Summary {
  double mean = 0, std = 0;
  std::int64_t count = 0;
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.count = static_cast<std::int64_t>(v.size());
  if (v.empty()) return s;
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double q = 0;
  for (double x : v) q += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(q / static_cast<double>(v.size()));
  return s;
}

struct RegionAggregate {
  Summary dice, hd95;
  std::int64_t hd95_excluded = 0;
};

struct MetricsRecord {
  std::vector<CaseMetrics> cases;
  std::array<RegionAggregate, 3> aggregate;
};

inline CaseMetrics evaluate_case(const std::string& id, const LabelVolume& pred, const LabelVolume& truth,
                                 const Spacing& sp) {
  if (pred.dims != truth.dims) throw ShapeError("prediction and truth dims differ for case '" + id + "'");
  const auto rp = regions_from_labels(pred);
  const auto rt = regions_from_labels(truth);
  CaseMetrics cm;
  cm.id = id;
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    const auto& p = rp.get(kRegions[r]);
    const auto& t = rt.get(kRegions[r]);
    const auto d = dice_detailed(p, t);
    cm.regions[r].dice = d.value;
    cm.regions[r].dice_flag = d.flag;
    if (d.flag == DiceFlag::none) cm.regions[r].hd95_mm = hausdorff95(p, t, sp);
  }
  return cm;
}

inline MetricsRecord aggregate_metrics(std::vector<CaseMetrics> cases) {
  MetricsRecord rec;
  rec.cases = std::move(cases);
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    std::vector<double> d, h;
    std::int64_t excluded = 0;
    for (const auto& c : rec.cases) {
      d.push_back(c.regions[r].dice);
      if (c.regions[r].hd95_mm) h.push_back(*c.regions[r].hd95_mm);
      else ++excluded;
    }
    rec.aggregate[r] = {summarize(d), summarize(h), excluded};
  }
  return rec;
}

inline MetricsRecord evaluate_set(const std::vector<LabelVolume>& preds, const std::vector<LabelVolume>& truths,
                                  const Spacing& sp = {1, 1, 1}, const std::vector<std::string>& ids = {}) {
  if (preds.size() != truths.size())
    throw ConfigError("evaluate_set: " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(truths.size()) + " truths");
  if (!ids.empty() && ids.size() != preds.size()) throw ConfigError("evaluate_set: id count differs from case count");
  std::vector<CaseMetrics> cases;
  for (std::size_t i = 0; i < preds.size(); ++i)
    cases.push_back(evaluate_case(ids.empty() ? "case_" + std::to_string(i) : ids[i], preds[i], truths[i], sp));
  return aggregate_metrics(std::move(cases));
}

inline nlohmann::json to_json(const MetricsRecord& rec) {
  nlohmann::json j;
  j["cases"] = nlohmann::json::array();
  for (const auto& c : rec.cases) {
    nlohmann::json cj{{"id", c.id}};
    for (std::size_t r = 0; r < kRegions.size(); ++r) {
      const auto& m = c.regions[r];
      cj[region_name(kRegions[r])] = {{"dice", m.dice},
                                      {"dice_flag", dice_flag_name(m.dice_flag)},
                                      {"hd95_mm", m.hd95_mm ? nlohmann::json(*m.hd95_mm) : nlohmann::json(nullptr)}};
    }
    j["cases"].push_back(cj);
  }
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    const auto& a = rec.aggregate[r];
    j["aggregate"][region_name(kRegions[r])] = {
        {"dice_mean", a.dice.mean}, {"dice_std", a.dice.std},   {"hd95_mean", a.hd95.mean},
        {"hd95_std", a.hd95.std},   {"hd95_count", a.hd95.count}, {"hd95_excluded", a.hd95_excluded}};
  }
  return j;
}

// Aligned columns ET / WT / TC, "avg +- std".
inline std::string metrics_table(const MetricsRecord& rec) {
  std::ostringstream os;
  os << std::fixed;
  const int lw = 8;
  os << std::left << std::setw(lw) << "metric";
  for (auto r : kRegions) os << std::right << std::setw(18) << region_name(r);
  os << '\n';
  os << std::left << std::setw(lw) << "DICE";
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(3) << rec.aggregate[r].dice.mean << " +- " << rec.aggregate[r].dice.std;
    os << std::right << std::setw(18) << cell.str();
  }
  os << '\n' << std::left << std::setw(lw) << "HD95";
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    std::ostringstream cell;
    if (rec.aggregate[r].hd95.count == 0) cell << "n/a";
    else cell << std::fixed << std::setprecision(2) << rec.aggregate[r].hd95.mean << " +- " << rec.aggregate[r].hd95.std;
    os << std::right << std::setw(18) << cell.str();
  }
  os << '\n';
  os << "cases: " << rec.cases.size();
  for (std::size_t r = 0; r < kRegions.size(); ++r)
    if (rec.aggregate[r].hd95_excluded)
      os << ", " << region_name(kRegions[r]) << " hd95 excluded: " << rec.aggregate[r].hd95_excluded;
  os << '\n';
  return os.str();
}

}  // namespace gpcseg
