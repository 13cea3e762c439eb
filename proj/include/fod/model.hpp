// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "fod/bank.hpp"
#include "fod/correlation.hpp"
#include "fod/optim.hpp"
#include "fod/rng.hpp"

namespace fod {

/// Which recognition views are active in the block.
///   patch : plain self-attention, no correlation supervision, no inter branch
///   intra : supervised intra branch only
///   inter : unsupervised intra attention fused with a supervised inter branch
///   full  : both branches supervised, fused as Z^g - Z^e
enum class Views { patch, intra, inter, full };

std::string_view to_string(Views v);
Views parse_views(std::string_view s);
inline bool has_inter_branch(Views v) { return v == Views::inter || v == Views::full; }
inline bool intra_supervised(Views v) { return v == Views::intra || v == Views::full; }
inline bool inter_supervised(Views v) { return has_inter_branch(v); }

struct FeatureSequence {
  Tensor features;  // [N, d]
  GridGeometry geom;
  int level = 8;  // downsampling ratio

  std::size_t size() const { return features.dim(0); }
  std::size_t dim() const { return features.dim(1); }
};

inline constexpr std::array<int, 2> kLevels{8, 16};

/// Fixed seeded patch encoder standing in for a pretrained backbone.
/// Each grid cell of stride p is described by a window of all channels,
/// projected onto proj_dim orthonormal directions, extended with the mean and
/// standard deviation of the p x p cell itself. With context the window is
/// 2p x 2p centred on the cell and shifted to stay inside the image, so the
/// receptive field overlaps the neighbours as in a convolutional backbone;
/// without it the window is the cell.
class FeatureExtractor {
 public:
  FeatureExtractor(std::size_t channels, std::size_t proj_dim, std::uint64_t seed, bool context = true);

  std::size_t feature_dim() const noexcept { return proj_dim_ + 2; }
  std::size_t channels() const noexcept { return channels_; }

  /// image: [C, H, W] with H and W divisible by 16. Returns the 8x and 16x levels.
  std::array<FeatureSequence, 2> extract(const Tensor& image) const;
  FeatureSequence extract_level(const Tensor& image, int level) const;

  /// Orthonormal projection rows used for a level, [proj_dim, C*w*w] with w the window side.
  const Tensor& projection(int level) const;
  std::size_t window(int level) const noexcept { return context_ ? 2 * level : level; }

 private:
  std::size_t channels_;
  std::size_t proj_dim_;
  bool context_;
  std::array<Tensor, 2> projections_;
};

std::array<FeatureSequence, 2> extract_features(const Tensor& image, std::uint64_t seed, std::size_t proj_dim = 32,
                                                bool context = true);

/// Per-dimension (x - mean) / std fitted on the patches of a training set.
/// Dimensions with zero spread are only centred.
struct FeatureStandardizer {
  Tensor mean;     // [d]
  Tensor inv_std;  // [d]

  static FeatureStandardizer fit(std::span<const FeatureSequence> train);
  void apply(FeatureSequence& x) const;
};

struct ModelConfig {
  std::size_t input_dim = 34;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  std::size_t layers = 3;
  std::size_t ffn_mult = 2;
  Views views = Views::full;

  std::size_t head_dim() const { return d_model / heads; }
  void validate() const;
};

struct BranchParams {
  std::vector<Param> wq, wk, wv;  // one per head
  KernelVariance kernel;
};

struct LayerParams {
  BranchParams intra;
  BranchParams inter;
  Param ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Param ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct LevelModel {
  ModelConfig cfg;
  Param w_in;   // [d, d_m]
  std::vector<LayerParams> layers;
  Param w_out;  // [d_m, d]

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; unit layernorm; theta = 0.
  static LevelModel init(const ModelConfig& cfg, Rng& rng, const std::string& prefix = "model");

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  Param* find(std::string_view name);
};

struct BlockOutput {
  Var z;                    // Z^g - Z^e (or Z^g without an inter branch)
  Var z_intra;              // Z^g
  Var z_inter;              // Z^e, empty without an inter branch
  CorrelationMatrix s_g, t_g;
  CorrelationMatrix s_e, t_e;  // empty without an inter branch
};

/// Reference input to the inter branch: features as a constant Var plus the bank metadata.
struct BankInput {
  Var refs;
  const ReferenceBank* bank = nullptr;

  static BankInput from(const ReferenceBank& bank);
};

BlockOutput i2correlation_block(const Var& x_prev, const GridGeometry& geom, const BankInput& bank,
                                const LayerParams& lp, Views views);

struct ForwardTrace {
  Var xhat;  // [N, d]
  GridGeometry geom;
  std::vector<CorrelationMatrix> s_g, t_g, s_e, t_e;

  bool has_inter() const { return !s_e.empty(); }
  std::size_t layers() const { return s_g.size(); }
  FeatureSequence reconstruction(int level) const { return {xhat.value(), geom, level}; }
};

ForwardTrace forward(const FeatureSequence& x, const ReferenceBank& bank, const LevelModel& m);
ForwardTrace forward(const FeatureSequence& x, const BankInput& bank, const LevelModel& m);

}  // namespace fod
