// SPDX-License-Identifier: Apache-2.0
#include "fod/correlation.hpp"

#include <algorithm>
#include <cmath>

#include "fod/errors.hpp"

namespace fod {

KernelVariance KernelVariance::unit(const std::string& prefix) {
  return {Param(prefix + ".theta_x", Tensor::scalar(0.0)), Param(prefix + ".theta_y", Tensor::scalar(0.0))};
}

double KernelVariance::sigma_x() const { return std::exp(theta_x.value()[0]); }
double KernelVariance::sigma_y() const { return std::exp(theta_y.value()[0]); }

namespace {

double sq_dist(GridPos a, GridPos b) {
  const double dr = static_cast<double>(a.row) - static_cast<double>(b.row);
  const double dc = static_cast<double>(a.col) - static_cast<double>(b.col);
  return dr * dr + dc * dc;
}

// T_ij = exp(-D_ij / 2s) / Z_i with s = sigma_x^2 + sigma_y^2.
// dT_ij/ds = T_ij (D_ij - sum_k T_ik D_ik) / (2 s^2); ds/dtheta = 2 sigma^2.
CorrelationMatrix rbf_from_distances(Tensor dist, const KernelVariance& kv) {
  const std::size_t n = dist.rows(), m = dist.cols();
  const double sx2 = std::exp(2.0 * kv.theta_x.value()[0]);
  const double sy2 = std::exp(2.0 * kv.theta_y.value()[0]);
  const double s = sx2 + sy2;
  Tensor t(dist.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto di = dist.row(i);
    const double dmin = *std::min_element(di.begin(), di.end());
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (t.at(i, j) = std::exp(-(di[j] - dmin) / (2.0 * s)));
    for (std::size_t j = 0; j < m; ++j) t.at(i, j) /= z;
  }
  return make_node(std::move(t), {kv.theta_x.var(), kv.theta_y.var()},
                   [dist = std::move(dist), s, sx2, sy2, n, m](Node& self) {
                     double dl_ds = 0.0;
                     for (std::size_t i = 0; i < n; ++i) {
                       double ed = 0.0;
                       for (std::size_t j = 0; j < m; ++j) ed += self.value.at(i, j) * dist.at(i, j);
                       for (std::size_t j = 0; j < m; ++j)
                         dl_ds += self.grad.at(i, j) * self.value.at(i, j) * (dist.at(i, j) - ed);
                     }
                     dl_ds /= 2.0 * s * s;
                     accumulate(*self.inputs[0], Tensor::scalar(dl_ds * 2.0 * sx2));
                     accumulate(*self.inputs[1], Tensor::scalar(dl_ds * 2.0 * sy2));
                   });
}

}  // namespace

CorrelationMatrix rbf_target(const GridGeometry& geom, std::span<const GridPos> refs, const KernelVariance& kv) {
  if (refs.empty()) throw EmptyBankError("target correlation: reference set is empty");
  const std::size_t n = geom.size();
  Tensor dist(Shape{n, refs.size()});
  for (std::size_t i = 0; i < n; ++i) {
    const GridPos q{geom.row_of(i), geom.col_of(i)};
    for (std::size_t j = 0; j < refs.size(); ++j) dist.at(i, j) = sq_dist(q, refs[j]);
  }
  return rbf_from_distances(std::move(dist), kv);
}

CorrelationMatrix target_correlation(const GridGeometry& geom, const KernelVariance& kv) {
  std::vector<GridPos> all(geom.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = {geom.row_of(i), geom.col_of(i)};
  return rbf_target(geom, all, kv);
}

CorrelationMatrix target_correlation(const GridGeometry& geom, const KernelVariance& kv,
                                     const ReferenceBank& bank) {
  if (bank.size() == 0) throw EmptyBankError("target correlation: reference bank is empty");
  if (bank.positions) return rbf_target(geom, *bank.positions, kv);
  return constant(Tensor(Shape{geom.size(), bank.size()}, 1.0 / static_cast<double>(bank.size())));
}

namespace {
Var scaled_logits(const Var& q, const Var& k, std::size_t d_model) {
  return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_model)));
}
}  // namespace

CorrelationMatrix intra_correlation(const Var& x, const Var& wq, const Var& wk) {
  require_rank2(x.value(), "intra_correlation");
  const std::size_t d_model = x.value().cols();
  return softmax_rows(scaled_logits(matmul(x, wq), matmul(x, wk), d_model));
}

CorrelationMatrix inter_correlation(const Var& x, const Var& refs, const Var& wq, const Var& wk) {
  require_rank2(x.value(), "inter_correlation");
  if (refs.value().empty() || refs.value().rows() == 0)
    throw EmptyBankError("inter_correlation: reference bank is empty");
  const std::size_t d_model = x.value().cols();
  return softmax_rows(scaled_logits(matmul(x, wq), matmul(refs, wk), d_model));
}

Var symmetric_kl(const CorrelationMatrix& t, const CorrelationMatrix& s) {
  require_same_shape(t.value(), s.value(), "symmetric_kl");
  // KL(t||s) + KL(s||t) = sum_j (t - s)(ln t - ln s)
  return row_sum(mul(sub(t, s), sub(log_clamped(t, kProbFloor), log_clamped(s, kProbFloor))));
}

Var layer_mean_symmetric_kl(std::span<const CorrelationMatrix> t, std::span<const CorrelationMatrix> s) {
  if (t.size() != s.size() || t.empty())
    throw DimensionError("layer_mean_symmetric_kl: need equal, non-zero layer counts");
  std::vector<Var> per_layer;
  per_layer.reserve(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) per_layer.push_back(symmetric_kl(t[k], s[k]));
  return per_layer.size() == 1 ? per_layer[0] : average(per_layer);
}

Var correlation_entropy(const CorrelationMatrix& s) {
  return scale(sum(mul(s, log_clamped(s, kProbFloor))), -1.0);
}

Var layer_mean_entropy(std::span<const CorrelationMatrix> s) {
  if (s.empty()) throw DimensionError("layer_mean_entropy: no layers");
  std::vector<Var> per_layer;
  per_layer.reserve(s.size());
  for (const auto& m : s) per_layer.push_back(correlation_entropy(m));
  return per_layer.size() == 1 ? per_layer[0] : average(per_layer);
}

bool is_row_stochastic(const Tensor& m, double tol) {
  if (m.rank() != 2) return false;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) {
      if (!(v >= 0.0)) return false;
      s += v;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace fod
