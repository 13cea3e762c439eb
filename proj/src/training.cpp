// SPDX-License-Identifier: Apache-2.0
#include "fod/training.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "fod/errors.hpp"

namespace fod {

std::string_view to_string(OptMode m) { return m == OptMode::two_phase ? "two-phase" : "direct"; }

OptMode parse_opt_mode(std::string_view s) {
  if (s == "two-phase") return OptMode::two_phase;
  if (s == "direct") return OptMode::direct;
  throw ConfigError("unknown optimization mode '" + std::string(s) + "' (expected two-phase|direct)");
}

std::string_view to_string(EntropyReduction r) { return r == EntropyReduction::mean ? "mean" : "sum"; }

EntropyReduction parse_entropy_reduction(std::string_view s) {
  if (s == "mean") return EntropyReduction::mean;
  if (s == "sum") return EntropyReduction::sum;
  throw ConfigError("unknown entropy reduction '" + std::string(s) + "' (expected mean|sum)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(weights.lambda1 >= 0.0) || !(weights.lambda2 >= 0.0) || !std::isfinite(weights.lambda1) ||
      !std::isfinite(weights.lambda2))
    throw ConfigError("lambda1 and lambda2 must be finite and >= 0");
  model.validate();
}

Var reconstruction_error(const Var& xhat, const Tensor& x) {
  require_same_shape(xhat.value(), x, "reconstruction_error");
  const Var xv = constant(x);
  Var l2 = row_norm(sub(xhat, xv));
  Var cos = div(row_dot(xhat, xv), clamp_min(mul(row_norm(xhat), row_norm(xv)), 1e-12));
  // ||.|| + (1 - cos)
  return add_scalar(sub(l2, cos), 1.0);
}

Var reconstruction_loss(const Var& xhat, const Tensor& x) { return mean(reconstruction_error(xhat, x)); }

Var divergence(std::span<const CorrelationMatrix> t, std::span<const CorrelationMatrix> s) {
  return mean(layer_mean_symmetric_kl(t, s));
}

Var entropy_item(std::span<const CorrelationMatrix> s, EntropyReduction r) {
  const Var total = layer_mean_entropy(s);
  if (r == EntropyReduction::sum) return total;
  return scale(total, 1.0 / static_cast<double>(s.front().value().rows()));
}

namespace {

std::vector<Var> frozen(std::span<const CorrelationMatrix> ms) {
  std::vector<Var> out;
  out.reserve(ms.size());
  for (const auto& m : ms) out.push_back(stop_gradient(m));
  return out;
}

Var zero_scalar() { return constant(Tensor::scalar(0.0)); }

}  // namespace

Var intra_loss(const ForwardTrace& tr, const LossWeights& w) {
  return sub(scale(divergence(tr.t_g, tr.s_g), w.lambda1),
             scale(entropy_item(tr.s_g, w.entropy_reduction), w.lambda2));
}

Var inter_loss(const ForwardTrace& tr, const LossWeights& w) {
  if (!tr.has_inter()) return zero_scalar();
  return sub(scale(entropy_item(tr.s_e, w.entropy_reduction), w.lambda2),
             scale(divergence(tr.t_e, tr.s_e), w.lambda1));
}

Var total_loss(const ForwardTrace& tr, const Tensor& x, const LossWeights& w, Views views) {
  Var loss = reconstruction_loss(tr.xhat, x);
  if (intra_supervised(views)) loss = add(loss, intra_loss(tr, w));
  if (inter_supervised(views) && tr.has_inter()) loss = add(loss, inter_loss(tr, w));
  return loss;
}

PhaseLosses phase_losses(const ForwardTrace& tr, const Tensor& x, const LossWeights& w, Views views) {
  const double l1 = w.lambda1;
  const double l2 = w.lambda2;
  const bool intra = intra_supervised(views);
  const bool inter = inter_supervised(views) && tr.has_inter();

  PhaseLosses out;
  // Phase 1: only the targets move.
  Var p1 = reconstruction_loss(tr.xhat, x);
  if (intra) p1 = add(p1, scale(divergence(tr.t_g, frozen(tr.s_g)), l1));
  if (inter) p1 = sub(p1, scale(divergence(tr.t_e, frozen(tr.s_e)), l1));
  out.phase1 = p1;

  // Phase 2: only the correlations move, with the entropy items.
  Var p2 = reconstruction_loss(tr.xhat, x);
  if (intra) {
    p2 = sub(p2, scale(divergence(frozen(tr.t_g), tr.s_g), l1));
    p2 = sub(p2, scale(entropy_item(tr.s_g, w.entropy_reduction), l2));
  }
  if (inter) {
    p2 = add(p2, scale(divergence(frozen(tr.t_e), tr.s_e), l1));
    p2 = add(p2, scale(entropy_item(tr.s_e, w.entropy_reduction), l2));
  }
  out.phase2 = p2;
  return out;
}

LossStats measure(const ForwardTrace& tr, const Tensor& x) {
  // Values only; built on constants so nothing is recorded for backward.
  auto consts = [](std::span<const CorrelationMatrix> ms) {
    std::vector<Var> out;
    for (const auto& m : ms) out.push_back(constant(m.value()));
    return out;
  };
  LossStats s;
  s.l_rec = reconstruction_loss(constant(tr.xhat.value()), x).item();
  s.div_g = divergence(consts(tr.t_g), consts(tr.s_g)).item();
  s.ent_g = entropy_item(consts(tr.s_g), EntropyReduction::mean).item();
  if (tr.has_inter()) {
    s.div_e = divergence(consts(tr.t_e), consts(tr.s_e)).item();
    s.ent_e = entropy_item(consts(tr.s_e), EntropyReduction::mean).item();
  }
  return s;
}

namespace {
void require_finite(const Var& loss, const char* which) {
  if (!std::isfinite(loss.item())) throw NumericError(std::string("non-finite ") + which + " loss");
}
}  // namespace

LossStats accumulate_two_phase(LevelModel& m, const FeatureSequence& x, const ReferenceBank& bank,
                               const LossWeights& w) {
  const ForwardTrace tr = forward(x, bank, m);
  const LossStats stats = measure(tr, x.features);
  const PhaseLosses losses = phase_losses(tr, x.features, w, m.cfg.views);
  require_finite(losses.phase1, "phase-1");
  require_finite(losses.phase2, "phase-2");
  backward(losses.phase1);
  backward(losses.phase2);
  return stats;
}

LossStats two_phase_step(LevelModel& m, const FeatureSequence& x, const ReferenceBank& bank, const LossWeights& w,
                         const AdamConfig& adam) {
  const LossStats stats = accumulate_two_phase(m, x, bank, w);
  for (Param* p : m.params()) adam_step(*p, adam);
  return stats;
}

LossStats direct_step(LevelModel& m, const FeatureSequence& x, const ReferenceBank& bank, const LossWeights& w,
                      const AdamConfig& adam) {
  const ForwardTrace tr = forward(x, bank, m);
  const LossStats stats = measure(tr, x.features);
  Var loss = total_loss(tr, x.features, w, m.cfg.views);
  require_finite(loss, "total");
  backward(loss);
  for (Param* p : m.params()) adam_step(*p, adam);
  return stats;
}

ReferenceBank build_bank(const FeatureStack& stack, const BankOptions& opts, std::uint64_t seed) {
  switch (opts.kind) {
    case BankKind::mean: return mean_bank(stack);
    case BankKind::nearest:
      throw UsageError("nearest banks are built per query; use BankProvider");
    case BankKind::coreset:
      return coreset_bank(stack, std::min(opts.coreset_budget, stack.images() * stack.geom.size()), seed);
    case BankKind::prototype: return prototype_bank(stack, opts.prototypes, opts.prototype_iters, seed);
    case BankKind::codebook: return codebook_bank(stack, opts.codebook_size, opts.codebook_epochs, seed);
  }
  throw UsageError("unhandled bank kind");
}

BankProvider::BankProvider(FeatureStack stack, const BankOptions& opts, std::uint64_t seed)
    : kind_(opts.kind), window_(opts.nearest_window) {
  if (kind_ == BankKind::nearest)
    stack_ = std::move(stack);
  else
    fixed_ = build_bank(stack, opts, seed);
}

BankProvider::BankProvider(ReferenceBank fixed) : kind_(fixed.kind), fixed_(std::move(fixed)) {
  if (kind_ == BankKind::nearest) throw UsageError("a fixed bank cannot be of kind nearest");
}

const ReferenceBank& BankProvider::bank_for(const FeatureSequence& query, ReferenceBank& scratch) const {
  if (kind_ != BankKind::nearest) return fixed_;
  scratch = nearest_bank(stack_, query, window_);
  return scratch;
}

LevelModel init_level_model(const TrainConfig& cfg, int level) {
  Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(level)));
  return LevelModel::init(cfg.model, rng, "level" + std::to_string(level));
}

LevelTrainResult train_level(const std::vector<FeatureSequence>& images, const BankProvider& banks,
                             const TrainConfig& cfg, int level, const EpochCallback& on_epoch) {
  return train_level(init_level_model(cfg, level), images, banks, cfg, level, on_epoch);
}

LevelTrainResult train_level(LevelModel model, const std::vector<FeatureSequence>& images,
                             const BankProvider& banks, const TrainConfig& cfg, int level,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  if (images.empty()) throw ConfigError("training set is empty");
  LevelTrainResult res{std::move(model), {}};
  const LossWeights w{cfg.weights.lambda1, cfg.entropy ? cfg.weights.lambda2 : 0.0, cfg.weights.entropy_reduction};
  const AdamConfig adam{.lr = cfg.lr, .eps = cfg.adam_eps};
  Rng order_rng(derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(level)));
  ReferenceBank scratch;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossStats acc;
    const auto order = order_rng.permutation(images.size());
    for (std::size_t step = 0; step < order.size(); ++step) {
      const FeatureSequence& x = images[order[step]];
      const ReferenceBank& bank = banks.bank_for(x, scratch);
      LossStats s;
      try {
        s = cfg.opt == OptMode::two_phase ? two_phase_step(res.model, x, bank, w, adam)
                                          : direct_step(res.model, x, bank, w, adam);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (level " + std::to_string(level) + ", epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step) + ")");
      }
      acc.l_rec += s.l_rec;
      acc.div_g += s.div_g;
      acc.div_e += s.div_e;
      acc.ent_g += s.ent_g;
      acc.ent_e += s.ent_e;
    }
    const double n = static_cast<double>(images.size());
    EpochRecord rec{epoch, {acc.l_rec / n, acc.div_g / n, acc.div_e / n, acc.ent_g / n, acc.ent_e / n}};
    res.history.push_back(rec);
    if (on_epoch) on_epoch(level, rec);
  }
  return res;
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,l_rec,div_g,div_e,ent_g,ent_e\n";
  os << std::setprecision(17);
  for (const auto& r : history)
    os << r.epoch << ',' << r.mean.l_rec << ',' << r.mean.div_g << ',' << r.mean.div_e << ',' << r.mean.ent_g << ','
       << r.mean.ent_e << '\n';
}

}  // namespace fod
