// SPDX-License-Identifier: Apache-2.0
//
// Correlation distributions: RBF position targets, intra-/inter-image
// attention correlations, the symmetric KL measure and the entropy item.
// A correlation matrix is a Var holding an [N, M] row-stochastic tensor.

#pragma once

#include <span>

#include "fod/autograd.hpp"
#include "fod/bank.hpp"
#include "fod/optim.hpp"

namespace fod {

using CorrelationMatrix = Var;

inline constexpr double kProbFloor = 1e-12;

/// Learnable RBF widths, sigma = exp(theta) per axis.
struct KernelVariance {
  Param theta_x;
  Param theta_y;

  static KernelVariance unit(const std::string& prefix);
  double sigma_x() const;
  double sigma_y() const;
};

/// Row-normalized RBF over squared grid distance between every patch pair.
CorrelationMatrix target_correlation(const GridGeometry& geom, const KernelVariance& kv);

/// Inter-image target. With bank positions: RBF between query positions and
/// reference positions, row-normalized. Without positions: uniform 1/N_e.
CorrelationMatrix target_correlation(const GridGeometry& geom, const KernelVariance& kv,
                                     const ReferenceBank& bank);

/// Same as above, against an explicit reference position list.
CorrelationMatrix rbf_target(const GridGeometry& geom, std::span<const GridPos> refs, const KernelVariance& kv);

/// softmax((x wq)(x wk)^T / sqrt(d_m)), d_m = x.cols().
CorrelationMatrix intra_correlation(const Var& x, const Var& wq, const Var& wk);

/// softmax((x wq)(refs wk)^T / sqrt(d_m)); refs is the [N_e, d_e] bank.
CorrelationMatrix inter_correlation(const Var& x, const Var& refs, const Var& wq, const Var& wk);

/// Per-row KL(t||s) + KL(s||t) -> [N]; probabilities floored at 1e-12 before log.
Var symmetric_kl(const CorrelationMatrix& t, const CorrelationMatrix& s);

/// (1/K) sum_k symmetric_kl(t_k, s_k) -> [N].
Var layer_mean_symmetric_kl(std::span<const CorrelationMatrix> t, std::span<const CorrelationMatrix> s);

/// sum_ij -s_ij ln s_ij (0 ln 0 := 0) -> scalar.
Var correlation_entropy(const CorrelationMatrix& s);

/// (1/K) sum_k correlation_entropy(s_k) -> scalar.
Var layer_mean_entropy(std::span<const CorrelationMatrix> s);

/// True when every row is nonnegative and sums to 1 within tol.
bool is_row_stochastic(const Tensor& m, double tol = 1e-9);

}  // namespace fod
