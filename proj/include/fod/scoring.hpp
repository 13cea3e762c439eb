// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "fod/model.hpp"

namespace fod {

enum class Criterion { rec, div, recdiv };
std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view s);

/// Per-pixel anomaly scores [H_img, W_img] plus the levels that produced them.
struct AnomalyMap {
  Tensor values;
  std::vector<int> levels;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

/// Per-patch reconstruction discrepancy ||x_i - xhat_i|| + (1 - cos).
Tensor rec_scores(const ForwardTrace& tr, const FeatureSequence& x);
/// Per-patch layer-averaged symmetric KL of the inter branch (intra branch when there is no inter branch).
Tensor div_scores(const ForwardTrace& tr);
/// rec * (1 - softmax(-div)), softmax over the N patches.
Tensor combine_rec_div(const Tensor& rec, const Tensor& div);

Tensor patch_scores(const ForwardTrace& tr, const FeatureSequence& x, Criterion criterion);

/// Reshape to the grid and upsample bilinearly (pixel-center alignment) to out_h x out_w.
AnomalyMap to_map(const Tensor& scores, const GridGeometry& geom, std::size_t out_h, std::size_t out_w,
                  int level = 0);

/// Separable Gaussian blur, sigma in pixels; sigma <= 0 returns the map unchanged.
AnomalyMap smooth(const AnomalyMap& map, double sigma);

struct LevelRange {
  double min = 0.0;
  double max = 0.0;
};

/// Min and max over every map of one level.
LevelRange level_range(std::span<const AnomalyMap> maps);

/// Mean of per-level min-max normalized maps; a zero-width range normalizes to 0.
AnomalyMap fuse_levels(std::span<const AnomalyMap> maps, std::span<const LevelRange> ranges);
/// Normalizes each input by its own range.
AnomalyMap fuse_levels(std::span<const AnomalyMap> maps);

/// Maximum pixel of the map.
double image_score(const AnomalyMap& map);

/// Mann-Whitney AUROC, ties counted as one half. Throws MetricError when a class is missing.
double auroc(std::span<const double> scores, std::span<const int> labels);

}  // namespace fod
