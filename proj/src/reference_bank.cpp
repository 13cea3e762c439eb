// SPDX-License-Identifier: Apache-2.0
#include "fod/reference_bank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fod/errors.hpp"
#include "fod/optim.hpp"
#include "fod/rng.hpp"

namespace fod {

std::string_view to_string(BankKind k) {
  switch (k) {
    case BankKind::mean: return "mean";
    case BankKind::nearest: return "nearest";
    case BankKind::coreset: return "coreset";
    case BankKind::prototype: return "prototype";
    case BankKind::codebook: return "codebook";
  }
  return "?";
}

BankKind parse_bank_kind(std::string_view s) {
  if (s == "mean") return BankKind::mean;
  if (s == "nearest") return BankKind::nearest;
  if (s == "coreset") return BankKind::coreset;
  if (s == "prototype") return BankKind::prototype;
  if (s == "codebook") return BankKind::codebook;
  throw ConfigError("unknown bank kind '" + std::string(s) + "' (expected mean|nearest|coreset|prototype|codebook)");
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<GridPos> all_positions(const GridGeometry& g) {
  std::vector<GridPos> out(g.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {g.row_of(i), g.col_of(i)};
  return out;
}

}  // namespace

std::span<const double> FeatureStack::at(std::size_t img, std::size_t row, std::size_t col) const {
  const std::size_t d = dim();
  return {features.data().data() + ((img * geom.height + row) * geom.width + col) * d, d};
}

Tensor FeatureStack::pool() const { return features.reshaped({images() * geom.size(), dim()}); }

FeatureStack make_stack(std::span<const FeatureSequence> images) {
  if (images.empty()) throw ConfigError("feature stack needs at least one image");
  const GridGeometry g = images[0].geom;
  const std::size_t d = images[0].dim();
  std::vector<double> data;
  data.reserve(images.size() * g.size() * d);
  for (const auto& fs : images) {
    if (!(fs.geom == g) || fs.dim() != d) throw DimensionError("feature stack: images disagree on grid or dim");
    data.insert(data.end(), fs.features.data().begin(), fs.features.data().end());
  }
  return {Tensor(Shape{images.size(), g.height, g.width, d}, std::move(data)), g};
}

ReferenceBank mean_bank(const FeatureStack& stack) {
  const std::size_t n = stack.images(), d = stack.dim(), cells = stack.geom.size();
  Tensor out(Shape{cells, d});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < cells; ++c) {
      auto src = stack.at(k, stack.geom.row_of(c), stack.geom.col_of(c));
      for (std::size_t j = 0; j < d; ++j) out.at(c, j) += src[j];
    }
  for (auto& v : out.data()) v /= static_cast<double>(n);
  return {BankKind::mean, std::move(out), all_positions(stack.geom)};
}

ReferenceBank nearest_bank(const FeatureStack& stack, const FeatureSequence& query, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ConfigError("nearest window must be odd and >= 1");
  if (!(query.geom == stack.geom) || query.dim() != stack.dim())
    throw DimensionError("nearest_bank: query does not match the stack grid");
  const GridGeometry& g = stack.geom;
  const std::size_t r = window / 2, d = stack.dim();
  Tensor out(Shape{g.size(), d});
  for (std::size_t c = 0; c < g.size(); ++c) {
    const std::size_t i = g.row_of(c), j = g.col_of(c);
    auto q = query.features.row(c);
    const std::size_t i0 = i >= r ? i - r : 0, i1 = std::min(g.height - 1, i + r);
    const std::size_t j0 = j >= r ? j - r : 0, j1 = std::min(g.width - 1, j + r);
    double best = std::numeric_limits<double>::infinity();
    std::span<const double> arg;
    for (std::size_t k = 0; k < stack.images(); ++k)
      for (std::size_t ii = i0; ii <= i1; ++ii)
        for (std::size_t jj = j0; jj <= j1; ++jj) {
          auto cand = stack.at(k, ii, jj);
          const double dist = sq_dist(q, cand);
          if (dist < best) {
            best = dist;
            arg = cand;
          }
        }
    std::copy(arg.begin(), arg.end(), out.row(c).begin());
  }
  return {BankKind::nearest, std::move(out), all_positions(g)};
}

std::vector<std::size_t> coreset_indices(const Tensor& pool, std::size_t budget, std::size_t start) {
  require_rank2(pool, "coreset_indices");
  const std::size_t n = pool.rows();
  if (budget < 1 || budget > n)
    throw ConfigError("coreset budget " + std::to_string(budget) + " outside [1, " + std::to_string(n) + "]");
  if (start >= n) throw ConfigError("coreset start index out of range");
  std::vector<std::size_t> chosen{start};
  std::vector<char> taken(n, 0);
  taken[start] = 1;
  std::vector<double> min_d(n);
  for (std::size_t i = 0; i < n; ++i) min_d[i] = sq_dist(pool.row(i), pool.row(start));
  while (chosen.size() < budget) {
    std::size_t arg = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i] && min_d[i] > best) {
        best = min_d[i];
        arg = i;
      }
    chosen.push_back(arg);
    taken[arg] = 1;
    for (std::size_t i = 0; i < n; ++i) min_d[i] = std::min(min_d[i], sq_dist(pool.row(i), pool.row(arg)));
  }
  return chosen;
}

ReferenceBank coreset_bank(const FeatureStack& stack, std::size_t budget, std::uint64_t seed) {
  const Tensor pool = stack.pool();
  Rng rng(seed);
  const std::size_t start = rng.permutation(pool.rows()).front();
  const auto idx = coreset_indices(pool, budget, start);
  Tensor out(Shape{idx.size(), pool.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) std::ranges::copy(pool.row(idx[r]), out.row(r).begin());
  return {BankKind::coreset, std::move(out), std::nullopt};
}

void prototype_update(const Tensor& inputs, Tensor& prototypes) {
  const std::size_t k_count = inputs.rows(), m_count = prototypes.rows(), d = inputs.cols();
  if (prototypes.cols() != d) throw DimensionError("prototype_update: dim mismatch");
  // similarity[k][m] = x_k . p_m
  const Tensor sim = matmul_nt(inputs, prototypes);

  // Hard assignment by the largest matching weight (argmax of the softmax over m).
  std::vector<std::size_t> owner(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    auto row = sim.row(k);
    owner[k] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }

  for (std::size_t m = 0; m < m_count; ++m) {
    // nu[k] = softmax over all inputs of x_k . p_m
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_count; ++k) mx = std::max(mx, sim.at(k, m));
    std::vector<double> nu(k_count);
    double z = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) z += (nu[k] = std::exp(sim.at(k, m) - mx));
    for (auto& v : nu) v /= z;

    double nu_max = 0.0;
    bool any = false;
    for (std::size_t k = 0; k < k_count; ++k)
      if (owner[k] == m) {
        nu_max = std::max(nu_max, nu[k]);
        any = true;
      }
    if (!any) continue;

    auto p = prototypes.row(m);
    std::vector<double> next(p.begin(), p.end());
    for (std::size_t k = 0; k < k_count; ++k) {
      if (owner[k] != m) continue;
      const double w = nu[k] / nu_max;
      auto x = inputs.row(k);
      for (std::size_t j = 0; j < d; ++j) next[j] += w * x[j];
    }
    double norm = 0.0;
    for (double v : next) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;  // keep the previous unit vector
    for (std::size_t j = 0; j < d; ++j) p[j] = next[j] / norm;
  }
}

ReferenceBank prototype_bank(const FeatureStack& stack, std::size_t per_position, std::size_t iters,
                             std::uint64_t seed) {
  if (per_position < 1) throw ConfigError("prototypes per position must be >= 1");
  const GridGeometry& g = stack.geom;
  const std::size_t d = stack.dim(), n = stack.images();
  Rng rng(seed);
  Tensor out(Shape{g.size() * per_position, d});
  std::vector<GridPos> positions;
  positions.reserve(g.size() * per_position);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const std::size_t i = g.row_of(c), j = g.col_of(c);
    Tensor inputs(Shape{n, d});
    for (std::size_t k = 0; k < n; ++k) std::ranges::copy(stack.at(k, i, j), inputs.row(k).begin());
    Tensor protos(Shape{per_position, d});
    for (std::size_t m = 0; m < per_position; ++m) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (auto& v : protos.row(m)) {
          v = rng.normal();
          norm += v * v;
        }
      } while (norm == 0.0);
      norm = std::sqrt(norm);
      for (auto& v : protos.row(m)) v /= norm;
    }
    for (std::size_t it = 0; it < iters; ++it) prototype_update(inputs, protos);
    for (std::size_t m = 0; m < per_position; ++m) {
      std::ranges::copy(protos.row(m), out.row(c * per_position + m).begin());
      positions.push_back({i, j});
    }
  }
  return {BankKind::prototype, std::move(out), std::move(positions)};
}

std::vector<std::size_t> nearest_codes(const Tensor& x, const Tensor& codebook) {
  require_rank2(x, "nearest_codes");
  require_rank2(codebook, "nearest_codes");
  if (x.cols() != codebook.cols()) throw DimensionError("nearest_codes: dim mismatch");
  std::vector<std::size_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebook.rows(); ++k) {
      const double dist = sq_dist(x.row(i), codebook.row(k));
      if (dist < best) {
        best = dist;
        out[i] = k;
      }
    }
  }
  return out;
}

namespace {
double mean_quantization_distance(const Tensor& x, const Tensor& codebook) {
  const auto codes = nearest_codes(x, codebook);
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) s += std::sqrt(sq_dist(x.row(i), codebook.row(codes[i])));
  return s / static_cast<double>(x.rows());
}
}  // namespace

CodebookResult train_codebook(const FeatureStack& stack, const CodebookOptions& opts) {
  if (opts.size < 1) throw ConfigError("codebook size must be >= 1");
  const Tensor pool = stack.pool();
  const std::size_t n = pool.rows(), d = pool.cols();
  Rng rng(opts.seed);

  // Initialize from distinct pool rows when possible.
  Tensor init(Shape{opts.size, d});
  const auto perm = rng.permutation(n);
  for (std::size_t k = 0; k < opts.size; ++k) {
    const std::size_t src = k < n ? perm[k] : rng.index(n);
    std::ranges::copy(pool.row(src), init.row(k).begin());
  }
  Param codebook("codebook", std::move(init));
  Tensor eye(Shape{d, d});
  for (std::size_t j = 0; j < d; ++j) eye.at(j, j) = 1.0;
  Param dec_w("codebook.decoder_w", std::move(eye));
  Param dec_b("codebook.decoder_b", Tensor(Shape{d}));

  const AdamConfig adam{.lr = opts.lr};
  const Var x = constant(pool);
  CodebookResult res;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    res.quantization_distance.push_back(mean_quantization_distance(pool, codebook.value()));
    const auto codes = nearest_codes(pool, codebook.value());
    Var e = gather_rows(codebook.var(), codes);
    // Straight-through: the decoder sees e_k, its gradient would be copied onto
    // the (frozen) input features, so nothing reaches the codebook through it.
    Var z = add(x, stop_gradient(sub(e, x)));
    Var o = add_row(matmul(z, dec_w.var()), dec_b.var());
    Var cos = div(row_dot(o, x), clamp_min(mul(row_norm(o), row_norm(x)), 1e-12));
    Var codebook_term = row_norm(sub(x, e));                // ||sg[x] - e_k||
    Var commitment = row_norm(sub(x, stop_gradient(e)));    // ||x - sg[e_k]||
    Var loss = mean(add(sub(codebook_term, cos), commitment));
    backward(loss);
    for (Param* p : {&codebook, &dec_w, &dec_b}) adam_step(*p, adam);
  }
  res.quantization_distance.push_back(mean_quantization_distance(pool, codebook.value()));
  res.bank = {BankKind::codebook, codebook.value(), std::nullopt};
  res.decoder_w = dec_w.value();
  res.decoder_b = dec_b.value();
  return res;
}

ReferenceBank codebook_bank(const FeatureStack& stack, std::size_t codebook_size, std::size_t epochs,
                            std::uint64_t seed) {
  return train_codebook(stack, {.size = codebook_size, .epochs = epochs, .seed = seed}).bank;
}

FeatureSequence quantize(const FeatureSequence& x, const ReferenceBank& bank) {
  if (bank.kind != BankKind::codebook) throw UsageError("quantize requires a codebook bank");
  const auto codes = nearest_codes(x.features, bank.features);
  Tensor out(x.features.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) std::ranges::copy(bank.features.row(codes[i]), out.row(i).begin());
  return {std::move(out), x.geom, x.level};
}

}  // namespace fod
