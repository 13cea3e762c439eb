// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "fod/model.hpp"
#include "fod/reference_bank.hpp"

namespace fod {

/// How the entropy item is reduced over the patch rows of a correlation matrix.
///   mean : per-row average, on the same scale as the row-mean divergence
///   sum  : plain sum over rows
enum class EntropyReduction { mean, sum };
std::string_view to_string(EntropyReduction r);
EntropyReduction parse_entropy_reduction(std::string_view s);

struct LossWeights {
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  EntropyReduction entropy_reduction = EntropyReduction::mean;
};

enum class OptMode { two_phase, direct };
std::string_view to_string(OptMode m);
OptMode parse_opt_mode(std::string_view s);

/// Knobs for building the reference bank of one level.
struct BankOptions {
  BankKind kind = BankKind::mean;
  std::size_t nearest_window = 3;
  std::size_t coreset_budget = 64;
  std::size_t prototypes = 4;
  std::size_t prototype_iters = 20;
  std::size_t codebook_size = 64;
  std::size_t codebook_epochs = 20;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = kDefaultLearningRate;
  std::uint64_t seed = 0;
  ModelConfig model;
  LossWeights weights;
  bool entropy = true;
  OptMode opt = OptMode::two_phase;
  BankOptions bank;
  /// Adam epsilon; exposed so gradient-scale equivalences can be checked exactly.
  double adam_eps = 1e-8;

  void validate() const;
};

/// Per-patch ||xhat_i - x_i|| + (1 - cos(xhat_i, x_i)), cosine denominator floored at 1e-12 -> [N].
Var reconstruction_error(const Var& xhat, const Tensor& x);
/// Mean over patches of reconstruction_error.
Var reconstruction_loss(const Var& xhat, const Tensor& x);

/// Row-mean of the layer-averaged symmetric KL -> scalar.
Var divergence(std::span<const CorrelationMatrix> t, std::span<const CorrelationMatrix> s);
/// Layer-averaged entropy item, reduced over rows as requested.
Var entropy_item(std::span<const CorrelationMatrix> s, EntropyReduction r);

/// lambda1 * Div(T^g, S^g) - lambda2 * Ent(S^g)
Var intra_loss(const ForwardTrace& tr, const LossWeights& w);
/// -lambda1 * Div(T^e, S^e) + lambda2 * Ent(S^e)
Var inter_loss(const ForwardTrace& tr, const LossWeights& w);
/// Reconstruction + intra + inter, with branches dropped according to the views.
Var total_loss(const ForwardTrace& tr, const Tensor& x, const LossWeights& w, Views views = Views::full);

struct PhaseLosses {
  Var phase1;  // L_l + l1 Div(T^g, SG[S^g]) - l1 Div(T^e, SG[S^e])
  Var phase2;  // L_l - l1 Div(SG[T^g], S^g) + l1 Div(SG[T^e], S^e) - l2 Ent(S^g) + l2 Ent(S^e)
};
PhaseLosses phase_losses(const ForwardTrace& tr, const Tensor& x, const LossWeights& w, Views views = Views::full);

/// Per-step loss components, measured on the forward pass before the update.
/// Divergences are row means; entropies are per-row means.
struct LossStats {
  double l_rec = 0, div_g = 0, div_e = 0, ent_g = 0, ent_e = 0;
};
LossStats measure(const ForwardTrace& tr, const Tensor& x);

/// Back-propagates phase 1, then phase 2 into the same gradients, without stepping.
LossStats accumulate_two_phase(LevelModel& m, const FeatureSequence& x, const ReferenceBank& bank,
                               const LossWeights& w);
/// accumulate_two_phase followed by one Adam step per parameter.
LossStats two_phase_step(LevelModel& m, const FeatureSequence& x, const ReferenceBank& bank, const LossWeights& w,
                         const AdamConfig& adam);
/// One Adam step on total_loss.
LossStats direct_step(LevelModel& m, const FeatureSequence& x, const ReferenceBank& bank, const LossWeights& w,
                      const AdamConfig& adam);

/// Supplies the reference bank for each query image (per-query for nearest banks).
class BankProvider {
 public:
  BankProvider() = default;
  BankProvider(FeatureStack stack, const BankOptions& opts, std::uint64_t seed);
  /// Wraps an already built bank.
  explicit BankProvider(ReferenceBank fixed);

  const ReferenceBank& bank_for(const FeatureSequence& query, ReferenceBank& scratch) const;
  BankKind kind() const { return kind_; }
  bool per_query() const { return kind_ == BankKind::nearest; }
  const ReferenceBank& fixed() const { return fixed_; }
  const FeatureStack& stack() const { return stack_; }
  std::size_t window() const { return window_; }

 private:
  BankKind kind_ = BankKind::mean;
  ReferenceBank fixed_;
  FeatureStack stack_;
  std::size_t window_ = 3;
};

ReferenceBank build_bank(const FeatureStack& stack, const BankOptions& opts, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossStats mean;
};

struct LevelTrainResult {
  LevelModel model;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(int level, const EpochRecord&)>;

/// Trains one level's model over the images (batch 1, seeded shuffle per epoch).
LevelTrainResult train_level(const std::vector<FeatureSequence>& images, const BankProvider& banks,
                             const TrainConfig& cfg, int level, const EpochCallback& on_epoch = {});
/// Trains starting from a given model instead of a fresh initialization.
LevelTrainResult train_level(LevelModel model, const std::vector<FeatureSequence>& images,
                             const BankProvider& banks, const TrainConfig& cfg, int level,
                             const EpochCallback& on_epoch = {});

LevelModel init_level_model(const TrainConfig& cfg, int level);

/// History as CSV: epoch,l_rec,div_g,div_e,ent_g,ent_e
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);

}  // namespace fod
