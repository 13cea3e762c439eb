// SPDX-License-Identifier: Apache-2.0
#include "fod/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fod/errors.hpp"
#include "fod/training.hpp"

namespace fod {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::rec: return "rec";
    case Criterion::div: return "div";
    case Criterion::recdiv: return "recdiv";
  }
  return "?";
}

Criterion parse_criterion(std::string_view s) {
  if (s == "rec") return Criterion::rec;
  if (s == "div") return Criterion::div;
  if (s == "recdiv") return Criterion::recdiv;
  throw ConfigError("unknown criterion '" + std::string(s) + "' (expected rec|div|recdiv)");
}

Tensor rec_scores(const ForwardTrace& tr, const FeatureSequence& x) {
  return reconstruction_error(constant(tr.xhat.value()), x.features).value();
}

Tensor div_scores(const ForwardTrace& tr) {
  auto consts = [](std::span<const CorrelationMatrix> ms) {
    std::vector<Var> out;
    for (const auto& m : ms) out.push_back(constant(m.value()));
    return out;
  };
  if (tr.has_inter()) return layer_mean_symmetric_kl(consts(tr.t_e), consts(tr.s_e)).value();
  return layer_mean_symmetric_kl(consts(tr.t_g), consts(tr.s_g)).value();
}

Tensor combine_rec_div(const Tensor& rec, const Tensor& div) {
  require_same_shape(rec, div, "combine_rec_div");
  const std::size_t n = rec.numel();
  // softmax(-div) over the patches
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : div.data()) mx = std::max(mx, -v);
  std::vector<double> e(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (e[i] = std::exp(-div[i] - mx));
  Tensor out(rec.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = rec[i] * (1.0 - e[i] / z);
  return out;
}

Tensor patch_scores(const ForwardTrace& tr, const FeatureSequence& x, Criterion criterion) {
  switch (criterion) {
    case Criterion::rec: return rec_scores(tr, x);
    case Criterion::div: return div_scores(tr);
    case Criterion::recdiv: return combine_rec_div(rec_scores(tr, x), div_scores(tr));
  }
  throw UsageError("unhandled criterion");
}

AnomalyMap to_map(const Tensor& scores, const GridGeometry& geom, std::size_t out_h, std::size_t out_w, int level) {
  if (scores.numel() != geom.size())
    throw DimensionError("to_map: " + std::to_string(scores.numel()) + " scores for a grid of " +
                         std::to_string(geom.size()));
  Tensor out(Shape{out_h, out_w});
  const double sy = static_cast<double>(geom.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(geom.width) / static_cast<double>(out_w);
  auto src = [&](double v, double s, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
    double c = (v + 0.5) * s - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(c));
    i1 = std::min(i0 + 1, n - 1);
    f = c - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    src(static_cast<double>(y), sy, geom.height, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      src(static_cast<double>(x), sx, geom.width, x0, x1, fx);
      const double top = (1 - fx) * scores[geom.index(y0, x0)] + fx * scores[geom.index(y0, x1)];
      const double bot = (1 - fx) * scores[geom.index(y1, x0)] + fx * scores[geom.index(y1, x1)];
      out.at(y, x) = (1 - fy) * top + fy * bot;
    }
  }
  AnomalyMap m{std::move(out), {}};
  if (level) m.levels.push_back(level);
  return m;
}

AnomalyMap smooth(const AnomalyMap& map, double sigma) {
  if (sigma <= 0.0) return map;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= ks;
  const int h = static_cast<int>(map.height()), w = static_cast<int>(map.width());
  auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
  Tensor tmp(map.values.shape()), out(map.values.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * map.values.at(y, clampi(x + i, w));
      tmp.at(y, x) = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(clampi(y + i, h), x);
      out.at(y, x) = s;
    }
  return {std::move(out), map.levels};
}

LevelRange level_range(std::span<const AnomalyMap> maps) {
  if (maps.empty()) throw UsageError("level_range: no maps");
  LevelRange r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& m : maps)
    for (double v : m.values.data()) {
      r.min = std::min(r.min, v);
      r.max = std::max(r.max, v);
    }
  return r;
}

AnomalyMap fuse_levels(std::span<const AnomalyMap> maps, std::span<const LevelRange> ranges) {
  if (maps.empty()) throw UsageError("fuse_levels: no maps");
  if (ranges.size() != maps.size()) throw UsageError("fuse_levels: one range per map required");
  Tensor out(maps[0].values.shape());
  AnomalyMap fused;
  for (std::size_t l = 0; l < maps.size(); ++l) {
    if (!maps[l].values.same_shape(out))
      throw DimensionError("fuse_levels: map extents differ " + shape_str(maps[l].values.shape()) + " vs " +
                           shape_str(out.shape()));
    const double width = ranges[l].max - ranges[l].min;
    for (std::size_t i = 0; i < out.numel(); ++i)
      out[i] += width > 0.0 ? (maps[l].values[i] - ranges[l].min) / width : 0.0;
    fused.levels.insert(fused.levels.end(), maps[l].levels.begin(), maps[l].levels.end());
  }
  for (auto& v : out.data()) v /= static_cast<double>(maps.size());
  std::sort(fused.levels.begin(), fused.levels.end());
  fused.values = std::move(out);
  return fused;
}

AnomalyMap fuse_levels(std::span<const AnomalyMap> maps) {
  std::vector<LevelRange> ranges;
  for (const auto& m : maps) ranges.push_back(level_range(std::span(&m, 1)));
  return fuse_levels(maps, ranges);
}

double image_score(const AnomalyMap& map) {
  return *std::max_element(map.values.data().begin(), map.values.data().end());
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw MetricError("auroc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n = scores.size(), n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auroc: undefined with a single class present");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank sum of positives with tied groups sharing their mean rank; doubled to stay integral.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double twice_mean_rank = static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]]) twice_rank_sum += twice_mean_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double twice_u = twice_rank_sum - np * (np + 1.0);
  return (twice_u / 2.0) / (np * nn);
}

}  // namespace fod
