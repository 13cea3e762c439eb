// SPDX-License-Identifier: Apache-2.0
//
// Builders for the external reference features consumed by the inter branch.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fod/bank.hpp"
#include "fod/model.hpp"

namespace fod {

/// Features of every training image at one level: [N_imgs, H, W, d].
struct FeatureStack {
  Tensor features;
  GridGeometry geom;

  std::size_t images() const { return features.dim(0); }
  std::size_t dim() const { return features.dim(3); }
  std::span<const double> at(std::size_t img, std::size_t row, std::size_t col) const;
  /// All features flattened to [N_imgs * H * W, d], image-major then row-major.
  Tensor pool() const;
};

FeatureStack make_stack(std::span<const FeatureSequence> images);

/// Per-position mean over images; positions kept.
ReferenceBank mean_bank(const FeatureStack& stack);

/// For each query position, the closest stored feature (l2) inside the clipped
/// p x p window across all images. Ties go to the first in image, row, col scan order.
ReferenceBank nearest_bank(const FeatureStack& stack, const FeatureSequence& query, std::size_t window);

/// Greedy k-center selection over the whole pool starting at perm[0] of a
/// seeded permutation. Positions are dropped.
ReferenceBank coreset_bank(const FeatureStack& stack, std::size_t budget, std::uint64_t seed);

/// Greedy selection over rows of pool from a given start index; returns the
/// chosen row indices in selection order. Ties go to the lowest index.
std::vector<std::size_t> coreset_indices(const Tensor& pool, std::size_t budget, std::size_t start);

/// One memory-writing pass over a single position's prototypes.
/// inputs: [K, d] features, prototypes: [M, d] unit rows (updated in place).
void prototype_update(const Tensor& inputs, Tensor& prototypes);

/// M prototypes per position, seeded random unit initialization, iters updates.
ReferenceBank prototype_bank(const FeatureStack& stack, std::size_t per_position, std::size_t iters,
                             std::uint64_t seed);

struct CodebookOptions {
  std::size_t size = 64;
  std::size_t epochs = 20;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct CodebookResult {
  ReferenceBank bank;
  std::vector<double> quantization_distance;  // mean ||x - e_k|| before each epoch's update, plus final
  Tensor decoder_w, decoder_b;
};

/// Vector-quantized codebook trained with a cosine reconstruction objective
/// through an affine decoder, straight-through quantization and the two
/// commitment terms. Positions are dropped.
CodebookResult train_codebook(const FeatureStack& stack, const CodebookOptions& opts);
ReferenceBank codebook_bank(const FeatureStack& stack, std::size_t codebook_size, std::size_t epochs,
                            std::uint64_t seed);

/// Index of the nearest codebook row for each row of x; ties to the lowest index.
std::vector<std::size_t> nearest_codes(const Tensor& x, const Tensor& codebook);

/// Replaces every feature by its nearest codebook entry. Requires a codebook bank.
FeatureSequence quantize(const FeatureSequence& x, const ReferenceBank& bank);

}  // namespace fod
