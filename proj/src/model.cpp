// SPDX-License-Identifier: Apache-2.0
#include "fod/model.hpp"

#include <algorithm>
#include <cmath>

#include "fod/errors.hpp"

namespace fod {

std::string_view to_string(Views v) {
  switch (v) {
    case Views::patch: return "patch";
    case Views::intra: return "intra";
    case Views::inter: return "inter";
    case Views::full: return "full";
  }
  return "?";
}

Views parse_views(std::string_view s) {
  if (s == "patch") return Views::patch;
  if (s == "intra") return Views::intra;
  if (s == "inter") return Views::inter;
  if (s == "full") return Views::full;
  throw ConfigError("unknown views '" + std::string(s) + "' (expected patch|intra|inter|full)");
}

// ---------------------------------------------------------------------------
// Feature extraction

namespace {

// Gram-Schmidt on Gaussian rows; redraws a row in the (measure-zero) degenerate case.
Tensor orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows > cols) throw DimensionError("projection: cannot draw more orthonormal rows than columns");
  Tensor q(Shape{rows, cols});
  for (std::size_t i = 0; i < rows;) {
    std::vector<double> v(cols);
    for (auto& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < i; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += v[j] * q.at(k, j);
        for (std::size_t j = 0; j < cols; ++j) v[j] -= dot * q.at(k, j);
      }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (std::size_t j = 0; j < cols; ++j) q.at(i, j) = v[j] / norm;
    ++i;
  }
  return q;
}

std::size_t level_slot(int level) {
  if (level == 8) return 0;
  if (level == 16) return 1;
  throw DimensionError("feature level must be 8 or 16, got " + std::to_string(level));
}

}  // namespace

FeatureExtractor::FeatureExtractor(std::size_t channels, std::size_t proj_dim, std::uint64_t seed, bool context)
    : channels_(channels), proj_dim_(proj_dim), context_(context) {
  if (channels == 0 || proj_dim == 0) throw ConfigError("feature extractor needs channels and proj_dim >= 1");
  for (int level : kLevels) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(level)));
    const std::size_t w = window(level);
    projections_[level_slot(level)] = orthonormal_rows(proj_dim, channels * w * w, rng);
  }
}

const Tensor& FeatureExtractor::projection(int level) const { return projections_[level_slot(level)]; }

FeatureSequence FeatureExtractor::extract_level(const Tensor& image, int level) const {
  if (image.rank() != 3) throw DimensionError("image must be [C, H, W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != channels_)
    throw DimensionError("image has " + std::to_string(c) + " channels, extractor expects " +
                         std::to_string(channels_));
  if (h % 16 != 0 || w % 16 != 0)
    throw DimensionError("image extents must be divisible by 16, got " + shape_str(image.shape()));
  const std::size_t p = static_cast<std::size_t>(level);
  const std::size_t win = window(level);
  const Tensor& proj = projection(level);
  const GridGeometry geom{h / p, w / p};
  // Top-left corner of the window for a cell, kept inside [0, n - win].
  auto origin = [&](std::size_t cell, std::size_t n) {
    const std::size_t centred = cell * p >= (win - p) / 2 ? cell * p - (win - p) / 2 : 0;
    return std::min(centred, n - win);
  };
  Tensor feats(Shape{geom.size(), feature_dim()});
  std::vector<double> patch(c * win * win);
  for (std::size_t gi = 0; gi < geom.height; ++gi)
    for (std::size_t gj = 0; gj < geom.width; ++gj) {
      const std::size_t y0 = origin(gi, h), x0 = origin(gj, w);
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < win; ++y)
          for (std::size_t x = 0; x < win; ++x) patch[k++] = image[(ch * h + y0 + y) * w + x0 + x];
      auto out = feats.row(geom.index(gi, gj));
      for (std::size_t r = 0; r < proj_dim_; ++r) {
        double s = 0.0;
        auto pr = proj.row(r);
        for (std::size_t j = 0; j < patch.size(); ++j) s += pr[j] * patch[j];
        out[r] = s;
      }
      // Intensity statistics of the cell alone keep local defects sharply placed.
      double mu = 0.0, sq = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = gi * p; y < (gi + 1) * p; ++y)
          for (std::size_t x = gj * p; x < (gj + 1) * p; ++x) mu += image[(ch * h + y) * w + x];
      const double cnt = static_cast<double>(c * p * p);
      mu /= cnt;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = gi * p; y < (gi + 1) * p; ++y)
          for (std::size_t x = gj * p; x < (gj + 1) * p; ++x) {
            const double z = image[(ch * h + y) * w + x] - mu;
            sq += z * z;
          }
      out[proj_dim_] = mu;
      out[proj_dim_ + 1] = std::sqrt(sq / cnt);
    }
  return {std::move(feats), geom, level};
}

std::array<FeatureSequence, 2> FeatureExtractor::extract(const Tensor& image) const {
  return {extract_level(image, 8), extract_level(image, 16)};
}

std::array<FeatureSequence, 2> extract_features(const Tensor& image, std::uint64_t seed, std::size_t proj_dim,
                                                bool context) {
  if (image.rank() != 3) throw DimensionError("image must be [C, H, W], got " + shape_str(image.shape()));
  return FeatureExtractor(image.dim(0), proj_dim, seed, context).extract(image);
}

FeatureStandardizer FeatureStandardizer::fit(std::span<const FeatureSequence> train) {
  if (train.empty()) throw ConfigError("cannot fit a standardizer on no features");
  const std::size_t d = train[0].dim();
  FeatureStandardizer s{Tensor(Shape{d}), Tensor(Shape{d})};
  double n = 0.0;
  for (const auto& x : train) {
    if (x.dim() != d) throw DimensionError("standardizer: feature dims differ");
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) s.mean[c] += x.features.at(i, c);
    n += static_cast<double>(x.size());
  }
  for (std::size_t c = 0; c < d; ++c) s.mean[c] /= n;
  Tensor var(Shape{d});
  for (const auto& x : train)
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) {
        const double z = x.features.at(i, c) - s.mean[c];
        var[c] += z * z;
      }
  for (std::size_t c = 0; c < d; ++c) {
    const double sd = std::sqrt(var[c] / n);
    s.inv_std[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

void FeatureStandardizer::apply(FeatureSequence& x) const {
  if (x.dim() != mean.numel()) throw DimensionError("standardizer: feature dim mismatch");
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x.dim(); ++c) x.features.at(i, c) = (x.features.at(i, c) - mean[c]) * inv_std[c];
}

// ---------------------------------------------------------------------------
// Parameters

void ModelConfig::validate() const {
  if (input_dim < 1 || d_model < 2) throw ConfigError("model dims must be positive (d_model >= 2)");
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be >= 1");
}

namespace {

Param uniform_param(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Param(name, rng.uniform_tensor(std::move(shape), -bound, bound));
}

BranchParams init_branch(const std::string& prefix, std::size_t q_in, std::size_t kv_in, std::size_t heads,
                         std::size_t head_dim, Rng& rng) {
  BranchParams b;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    b.wq.push_back(uniform_param(hp + ".wq", {q_in, head_dim}, q_in, rng));
    b.wk.push_back(uniform_param(hp + ".wk", {kv_in, head_dim}, kv_in, rng));
    b.wv.push_back(uniform_param(hp + ".wv", {kv_in, head_dim}, kv_in, rng));
  }
  b.kernel = KernelVariance::unit(prefix);
  return b;
}

}  // namespace

LevelModel LevelModel::init(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
  cfg.validate();
  LevelModel m;
  m.cfg = cfg;
  const std::size_t d = cfg.input_dim, dm = cfg.d_model, hd = cfg.head_dim(), ff = cfg.ffn_mult * dm;
  m.w_in = uniform_param(prefix + ".w_in", {d, dm}, d, rng);
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    const std::string lp = prefix + ".layer" + std::to_string(k);
    LayerParams L;
    L.intra = init_branch(lp + ".intra", dm, dm, cfg.heads, hd, rng);
    L.inter = init_branch(lp + ".inter", dm, d, cfg.heads, hd, rng);
    L.ffn_w1 = uniform_param(lp + ".ffn_w1", {dm, ff}, dm, rng);
    L.ffn_b1 = uniform_param(lp + ".ffn_b1", {ff}, dm, rng);
    L.ffn_w2 = uniform_param(lp + ".ffn_w2", {ff, dm}, ff, rng);
    L.ffn_b2 = uniform_param(lp + ".ffn_b2", {dm}, ff, rng);
    L.ln1_gamma = Param(lp + ".ln1_gamma", Tensor(Shape{dm}, 1.0));
    L.ln1_beta = Param(lp + ".ln1_beta", Tensor(Shape{dm}, 0.0));
    L.ln2_gamma = Param(lp + ".ln2_gamma", Tensor(Shape{dm}, 1.0));
    L.ln2_beta = Param(lp + ".ln2_beta", Tensor(Shape{dm}, 0.0));
    m.layers.push_back(std::move(L));
  }
  m.w_out = uniform_param(prefix + ".w_out", {dm, d}, dm, rng);
  return m;
}

namespace {
template <typename Model, typename Out>
void collect(Model& m, std::vector<Out>& out) {
  out.push_back(&m.w_in);
  for (auto& L : m.layers) {
    for (auto* b : {&L.intra, &L.inter}) {
      for (auto& p : b->wq) out.push_back(&p);
      for (auto& p : b->wk) out.push_back(&p);
      for (auto& p : b->wv) out.push_back(&p);
      out.push_back(&b->kernel.theta_x);
      out.push_back(&b->kernel.theta_y);
    }
    for (auto* p : {&L.ffn_w1, &L.ffn_b1, &L.ffn_w2, &L.ffn_b2, &L.ln1_gamma, &L.ln1_beta, &L.ln2_gamma,
                    &L.ln2_beta})
      out.push_back(p);
  }
  out.push_back(&m.w_out);
}
}  // namespace

std::vector<Param*> LevelModel::params() {
  std::vector<Param*> out;
  collect(*this, out);
  return out;
}

std::vector<const Param*> LevelModel::params() const {
  std::vector<const Param*> out;
  collect(*this, out);
  return out;
}

Param* LevelModel::find(std::string_view name) {
  for (Param* p : params())
    if (p->name() == name) return p;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Forward

BankInput BankInput::from(const ReferenceBank& bank) {
  if (bank.size() == 0) throw EmptyBankError("reference bank is empty");
  return {constant(bank.features), &bank};
}

BlockOutput i2correlation_block(const Var& x_prev, const GridGeometry& geom, const BankInput& bank,
                                const LayerParams& lp, Views views) {
  const std::size_t heads = lp.intra.wq.size();
  if (x_prev.value().rows() != geom.size())
    throw DimensionError("block input has " + std::to_string(x_prev.value().rows()) + " rows, grid has " +
                         std::to_string(geom.size()));
  BlockOutput out;

  std::vector<Var> s_heads, z_heads;
  s_heads.reserve(heads);
  z_heads.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    CorrelationMatrix s = intra_correlation(x_prev, lp.intra.wq[h].var(), lp.intra.wk[h].var());
    z_heads.push_back(matmul(s, matmul(x_prev, lp.intra.wv[h].var())));
    s_heads.push_back(std::move(s));
  }
  out.s_g = heads == 1 ? s_heads[0] : average(s_heads);
  out.z_intra = heads == 1 ? z_heads[0] : concat_cols(z_heads);
  out.t_g = target_correlation(geom, lp.intra.kernel);

  if (!has_inter_branch(views)) {
    out.z = out.z_intra;
    return out;
  }
  if (!bank.bank || !bank.refs) throw EmptyBankError("inter branch requires a reference bank");

  s_heads.clear();
  z_heads.clear();
  for (std::size_t h = 0; h < heads; ++h) {
    CorrelationMatrix s = inter_correlation(x_prev, bank.refs, lp.inter.wq[h].var(), lp.inter.wk[h].var());
    z_heads.push_back(matmul(s, matmul(bank.refs, lp.inter.wv[h].var())));
    s_heads.push_back(std::move(s));
  }
  out.s_e = heads == 1 ? s_heads[0] : average(s_heads);
  out.z_inter = heads == 1 ? z_heads[0] : concat_cols(z_heads);
  out.t_e = target_correlation(geom, lp.inter.kernel, *bank.bank);
  out.z = sub(out.z_intra, out.z_inter);
  return out;
}

ForwardTrace forward(const FeatureSequence& x, const BankInput& bank, const LevelModel& m) {
  if (x.features.rank() != 2 || x.features.rows() != x.geom.size())
    throw DimensionError("feature sequence does not match its grid");
  if (x.dim() != m.cfg.input_dim)
    throw DimensionError("feature dim " + std::to_string(x.dim()) + " != model input dim " +
                         std::to_string(m.cfg.input_dim));
  if (has_inter_branch(m.cfg.views) && bank.bank && bank.bank->dim() != m.cfg.input_dim)
    throw DimensionError("bank feature dim " + std::to_string(bank.bank->dim()) + " != model input dim " +
                         std::to_string(m.cfg.input_dim));

  ForwardTrace tr;
  tr.geom = x.geom;
  Var h = matmul(constant(x.features), m.w_in.var());
  Var z;
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const LayerParams& L = m.layers[k];
    BlockOutput b = i2correlation_block(h, x.geom, bank, L, m.cfg.views);
    z = layer_norm(add(b.z, h), L.ln1_gamma.var(), L.ln1_beta.var());
    tr.s_g.push_back(b.s_g);
    tr.t_g.push_back(b.t_g);
    if (b.s_e) {
      tr.s_e.push_back(b.s_e);
      tr.t_e.push_back(b.t_e);
    }
    // X_K feeds nothing: the reconstruction reads Z_K.
    if (k + 1 == m.layers.size()) break;
    Var ff = add_row(matmul(gelu(add_row(matmul(z, L.ffn_w1.var()), L.ffn_b1.var())), L.ffn_w2.var()),
                     L.ffn_b2.var());
    h = layer_norm(add(ff, z), L.ln2_gamma.var(), L.ln2_beta.var());
  }
  tr.xhat = matmul(z, m.w_out.var());
  return tr;
}

ForwardTrace forward(const FeatureSequence& x, const ReferenceBank& bank, const LevelModel& m) {
  if (!has_inter_branch(m.cfg.views)) return forward(x, BankInput{}, m);
  return forward(x, BankInput::from(bank), m);
}

}  // namespace fod
