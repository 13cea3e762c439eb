// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the unit and acceptance tests.
// Oracles here are written as direct, unoptimized recomputations and do not
// call the library routine they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fod/autograd.hpp"
#include "fod/correlation.hpp"
#include "fod/model.hpp"
#include "fod/optim.hpp"
#include "fod/reference_bank.hpp"
#include "fod/rng.hpp"
#include "fod/training.hpp"

namespace fod::testing {

inline Tensor rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor(std::move(shape), lo, hi);
}

inline Param rand_param(const std::string& name, Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return Param(name, rand_tensor(rng, std::move(shape), lo, hi));
}

/// sum(v * w) with a fixed random weighting, so gradients are not trivially structured.
inline Var weighted_sum(const Var& v, const Tensor& w) { return sum(mul(v, constant(w))); }

inline std::vector<GridPos> grid_positions(const GridGeometry& g) {
  std::vector<GridPos> out;
  for (std::size_t i = 0; i < g.size(); ++i) out.push_back({g.row_of(i), g.col_of(i)});
  return out;
}

/// Small model used by gradient and routing checks: 2x2 grid, d=3, d_m=4, 2 heads, 2 layers.
struct ToyProblem {
  LevelModel model;
  FeatureSequence x;
  ReferenceBank bank;
};

inline ToyProblem make_toy(std::uint64_t seed, Views views = Views::full, bool positions = true) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.d_model = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.views = views;
  ToyProblem t;
  t.model = LevelModel::init(cfg, rng, "toy");
  // Move the kernel widths off their initial value so the RBF gradients are generic.
  for (Param* p : t.model.params())
    if (p->name().find("theta") != std::string::npos) p->mutable_value()[0] = rng.uniform(-0.5, 0.5);
  const GridGeometry g{2, 2};
  t.x = {rand_tensor(rng, {4, 3}), g, 8};
  t.bank.kind = positions ? BankKind::mean : BankKind::coreset;
  t.bank.features = rand_tensor(rng, {4, 3});
  if (positions) t.bank.positions = grid_positions(g);
  return t;
}

// ---------------------------------------------------------------------------
// Oracles

/// Pairwise Mann-Whitney count: each (positive, negative) pair scores 1, ties 1/2.
inline double auroc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double count = 0.0, np = 0.0, nn = 0.0;
  for (int v : y) (v ? np : nn) += 1.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) count += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
  return count / (np * nn);
}

inline double sq_l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// Greedy k-center by full rescan at every step: argmax over unselected of the
/// minimum squared distance to the selected set; lowest index wins ties.
inline std::vector<std::size_t> coreset_rescan(const Tensor& pool, std::size_t budget, std::size_t start) {
  std::vector<std::size_t> sel{start};
  std::vector<bool> taken(pool.rows(), false);
  taken[start] = true;
  while (sel.size() < budget) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pool.rows(); ++i) {
      if (taken[i]) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) dmin = std::min(dmin, sq_l2(pool.row(i), pool.row(s)));
      if (dmin > best) {
        best = dmin;
        arg = i;
      }
    }
    sel.push_back(arg);
    taken[arg] = true;
  }
  return sel;
}

struct NearestHit {
  std::vector<double> feature;
  std::size_t image, row, col;
};

/// Exhaustive windowed search: every image, every in-window cell, strict improvement only.
inline NearestHit nearest_exhaustive(const FeatureStack& st, std::span<const double> q, std::size_t row,
                                     std::size_t col, std::size_t window) {
  const long r = static_cast<long>(window / 2);
  NearestHit best{{}, 0, 0, 0};
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < st.images(); ++k)
    for (long i = static_cast<long>(row) - r; i <= static_cast<long>(row) + r; ++i)
      for (long j = static_cast<long>(col) - r; j <= static_cast<long>(col) + r; ++j) {
        if (i < 0 || j < 0 || i >= static_cast<long>(st.geom.height) || j >= static_cast<long>(st.geom.width))
          continue;
        auto f = st.at(k, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        const double d = sq_l2(f, q);
        if (d < bd) {
          bd = d;
          best = {std::vector<double>(f.begin(), f.end()), k, static_cast<std::size_t>(i),
                  static_cast<std::size_t>(j)};
        }
      }
  return best;
}

// ---------------------------------------------------------------------------
// Gradient suite: every differentiable operation plus both phase losses.

struct GradCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

namespace detail {

inline GradCheckReport check(const std::function<Var()>& f, std::vector<Param*> ps) {
  return gradient_check(f, ps, 1e-5, 1e-4);
}

/// Unary elementwise/structural op on a random [n, m] input.
inline GradCase unary(std::string name, std::function<Var(const Var&)> op, double lo = -1.0, double hi = 1.0,
                      Shape shape = {3, 4}) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            Param a = rand_param("a", rng, shape, lo, hi);
            const Tensor w = rand_tensor(rng, op(a.var()).shape());
            return check([&] { return weighted_sum(op(a.var()), w); }, {&a});
          }};
}

inline GradCase binary(std::string name, std::function<Var(const Var&, const Var&)> op, Shape sa, Shape sb,
                       double blo = -1.0, double bhi = 1.0) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            Param a = rand_param("a", rng, sa);
            Param b = rand_param("b", rng, sb, blo, bhi);
            const Tensor w = rand_tensor(rng, op(a.var(), b.var()).shape());
            return check([&] { return weighted_sum(op(a.var(), b.var()), w); }, {&a, &b});
          }};
}

inline Tensor random_stochastic(Rng& rng, std::size_t n, std::size_t m) {
  Tensor t = rand_tensor(rng, {n, m}, 0.05, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v;
    for (double& v : t.row(i)) v /= s;
  }
  return t;
}

inline GradCase toy_loss(std::string name, std::function<Var(const ToyProblem&, const ForwardTrace&)> loss,
                         Views views = Views::full, bool positions = true) {
  return {name, [=](std::uint64_t seed) {
            ToyProblem t = make_toy(seed, views, positions);
            return check([&] { return loss(t, forward(t.x, t.bank, t.model)); }, t.model.params());
          }};
}

}  // namespace detail

inline std::vector<GradCase> gradient_suite() {
  using namespace detail;
  std::vector<GradCase> cases;
  cases.push_back(binary("matmul", [](const Var& a, const Var& b) { return matmul(a, b); }, {5, 7}, {7, 3}));
  cases.push_back(binary("matmul_nt", [](const Var& a, const Var& b) { return matmul_nt(a, b); }, {4, 6}, {5, 6}));
  cases.push_back(binary("add", [](const Var& a, const Var& b) { return add(a, b); }, {3, 4}, {3, 4}));
  cases.push_back(binary("sub", [](const Var& a, const Var& b) { return sub(a, b); }, {3, 4}, {3, 4}));
  cases.push_back(binary("mul", [](const Var& a, const Var& b) { return mul(a, b); }, {3, 4}, {3, 4}));
  cases.push_back(binary("div", [](const Var& a, const Var& b) { return div(a, b); }, {3, 4}, {3, 4}, 0.5, 1.5));
  cases.push_back(unary("scale", [](const Var& a) { return scale(a, -1.7); }));
  cases.push_back(unary("add_scalar", [](const Var& a) { return add_scalar(a, 0.3); }));
  cases.push_back(unary("exp", [](const Var& a) { return exp(a); }));
  cases.push_back(unary("gelu", [](const Var& a) { return gelu(a); }, -3.0, 3.0));
  cases.push_back(unary("log_clamped", [](const Var& a) { return log_clamped(a, 1e-12); }, 0.1, 2.0));
  cases.push_back(unary("clamp_min", [](const Var& a) { return clamp_min(a, 0.05); }, 0.1, 2.0));
  cases.push_back(binary("add_row", [](const Var& a, const Var& b) { return add_row(a, b); }, {3, 4}, {4}));
  cases.push_back(unary("sum", [](const Var& a) { return sum(a); }));
  cases.push_back(unary("mean", [](const Var& a) { return mean(a); }));
  cases.push_back(unary("row_sum", [](const Var& a) { return row_sum(a); }));
  cases.push_back(binary("row_dot", [](const Var& a, const Var& b) { return row_dot(a, b); }, {3, 4}, {3, 4}));
  cases.push_back(unary("row_norm", [](const Var& a) { return row_norm(a); }));
  cases.push_back(unary("softmax_rows", [](const Var& a) { return softmax_rows(a); }, -2.0, 2.0));
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param x = rand_param("x", rng, {3, 8});
                     Param g = rand_param("gamma", rng, {8}, 0.5, 1.5);
                     Param b = rand_param("beta", rng, {8});
                     const Tensor w = rand_tensor(rng, {3, 8});
                     return check([&] { return weighted_sum(layer_norm(x.var(), g.var(), b.var()), w); },
                                  {&x, &g, &b});
                   }});
  cases.push_back(binary(
      "concat_cols",
      [](const Var& a, const Var& b) {
        const Var parts[] = {a, b};
        return concat_cols(parts);
      },
      {3, 2}, {3, 4}));
  cases.push_back(binary(
      "average",
      [](const Var& a, const Var& b) {
        const Var parts[] = {a, b, a};
        return average(parts);
      },
      {3, 4}, {3, 4}));
  cases.push_back(unary("gather_rows", [](const Var& a) {
    const std::size_t rows[] = {2, 0, 2, 1};
    return gather_rows(a, rows);
  }));
  cases.push_back(unary("stop_gradient", [](const Var& a) { return mul(a, stop_gradient(a)); }));

  // Correlation mathematics.
  cases.push_back({"rbf_target", [](std::uint64_t seed) {
                     Rng rng(seed);
                     KernelVariance kv = KernelVariance::unit("kv");
                     kv.theta_x.mutable_value()[0] = rng.uniform(-0.7, 0.7);
                     kv.theta_y.mutable_value()[0] = rng.uniform(-0.7, 0.7);
                     const GridGeometry g{2, 3};
                     const Tensor w = rand_tensor(rng, {6, 6});
                     return check([&] { return weighted_sum(target_correlation(g, kv), w); },
                                  {&kv.theta_x, &kv.theta_y});
                   }});
  cases.push_back({"rbf_target_bank", [](std::uint64_t seed) {
                     Rng rng(seed);
                     KernelVariance kv = KernelVariance::unit("kv");
                     kv.theta_x.mutable_value()[0] = rng.uniform(-0.7, 0.7);
                     kv.theta_y.mutable_value()[0] = rng.uniform(-0.7, 0.7);
                     const GridGeometry g{3, 2};
                     const std::vector<GridPos> refs{{0, 0}, {2, 1}, {1, 1}, {0, 1}};
                     const Tensor w = rand_tensor(rng, {6, 4});
                     return check([&] { return weighted_sum(rbf_target(g, refs, kv), w); },
                                  {&kv.theta_x, &kv.theta_y});
                   }});
  cases.push_back({"intra_correlation", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param x = rand_param("x", rng, {4, 6});
                     Param wq = rand_param("wq", rng, {6, 3});
                     Param wk = rand_param("wk", rng, {6, 3});
                     const Tensor w = rand_tensor(rng, {4, 4});
                     return check([&] { return weighted_sum(intra_correlation(x.var(), wq.var(), wk.var()), w); },
                                  {&x, &wq, &wk});
                   }});
  cases.push_back({"inter_correlation", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param x = rand_param("x", rng, {4, 6});
                     Param refs = rand_param("refs", rng, {5, 3});
                     Param wq = rand_param("wq", rng, {6, 2});
                     Param wk = rand_param("wk", rng, {3, 2});
                     const Tensor w = rand_tensor(rng, {4, 5});
                     return check(
                         [&] { return weighted_sum(inter_correlation(x.var(), refs.var(), wq.var(), wk.var()), w); },
                         {&x, &refs, &wq, &wk});
                   }});
  cases.push_back({"symmetric_kl", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param t("t", random_stochastic(rng, 3, 5));
                     Param s("s", random_stochastic(rng, 3, 5));
                     const Tensor w = rand_tensor(rng, {3});
                     return check([&] { return weighted_sum(symmetric_kl(t.var(), s.var()), w); }, {&t, &s});
                   }});
  cases.push_back({"layer_mean_symmetric_kl", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param t0("t0", random_stochastic(rng, 3, 4)), t1("t1", random_stochastic(rng, 3, 4));
                     Param s0("s0", random_stochastic(rng, 3, 4)), s1("s1", random_stochastic(rng, 3, 4));
                     const Tensor w = rand_tensor(rng, {3});
                     return check(
                         [&] {
                           const Var t[] = {t0.var(), t1.var()};
                           const Var s[] = {s0.var(), s1.var()};
                           return weighted_sum(layer_mean_symmetric_kl(t, s), w);
                         },
                         {&t0, &t1, &s0, &s1});
                   }});
  cases.push_back({"correlation_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param s("s", random_stochastic(rng, 3, 5));
                     return check([&] { return correlation_entropy(s.var()); }, {&s});
                   }});
  cases.push_back({"layer_mean_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param s0("s0", random_stochastic(rng, 3, 5)), s1("s1", random_stochastic(rng, 3, 5));
                     return check(
                         [&] {
                           const Var s[] = {s0.var(), s1.var()};
                           return layer_mean_entropy(s);
                         },
                         {&s0, &s1});
                   }});
  cases.push_back({"reconstruction_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Param xhat = rand_param("xhat", rng, {4, 5});
                     const Tensor x = rand_tensor(rng, {4, 5});
                     return check([&] { return reconstruction_loss(xhat.var(), x); }, {&xhat});
                   }});

  // Model and losses on the toy problem; SG nodes are held constant by gradient_check.
  cases.push_back(toy_loss("forward_reconstruction",
                           [](const ToyProblem& t, const ForwardTrace& tr) {
                             return reconstruction_loss(tr.xhat, t.x.features);
                           }));
  cases.push_back(toy_loss("total_loss", [](const ToyProblem& t, const ForwardTrace& tr) {
    return total_loss(tr, t.x.features, {0.5, 0.5});
  }));
  cases.push_back(toy_loss("phase1_loss", [](const ToyProblem& t, const ForwardTrace& tr) {
    return phase_losses(tr, t.x.features, {0.5, 0.5}).phase1;
  }));
  cases.push_back(toy_loss("phase2_loss", [](const ToyProblem& t, const ForwardTrace& tr) {
    return phase_losses(tr, t.x.features, {0.5, 0.5}).phase2;
  }));
  cases.push_back(toy_loss(
      "phase2_loss_positionless_bank",
      [](const ToyProblem& t, const ForwardTrace& tr) { return phase_losses(tr, t.x.features, {0.5, 0.5}).phase2; },
      Views::full, false));
  cases.push_back(toy_loss(
      "phase2_loss_intra_view",
      [](const ToyProblem& t, const ForwardTrace& tr) {
        return phase_losses(tr, t.x.features, {0.5, 0.5}, Views::intra).phase2;
      },
      Views::intra));
  return cases;
}

inline constexpr std::uint64_t kGradSeeds[] = {11, 22, 33, 44, 55};

}  // namespace fod::testing
