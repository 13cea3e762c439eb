// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "fod/errors.hpp"
#include "fod/scoring.hpp"
#include "support.hpp"

using namespace fod;
using namespace fod::testing;

namespace {

AnomalyMap map_of(Tensor t, int level = 0) {
  AnomalyMap m{std::move(t), {}};
  if (level) m.levels.push_back(level);
  return m;
}

}  // namespace

TEST(Auroc, SmallExample) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auroc(s, y), 0.75);
}

TEST(Auroc, PerfectInvertedAndAllTied) {
  const std::vector<int> y{0, 1, 0, 1};
  EXPECT_EQ(auroc(std::vector<double>{0, 1, 0, 1}, y), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{1, 0, 1, 0}, y), 0.0);
  EXPECT_EQ(auroc(std::vector<double>{2, 2, 2, 2}, y), 0.5);
}

TEST(Auroc, MatchesPairwiseCountWithTies) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(8));  // coarse values force ties
      y[i] = static_cast<int>(rng.index(2));
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(auroc(s, y), auroc_pairwise(s, y), 1e-12);
  }
}

TEST(Auroc, InvariantToStrictlyIncreasingMaps) {
  Rng rng(2);
  std::vector<double> s(40), t(40);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    s[i] = rng.uniform(-2, 2);
    t[i] = std::exp(3.0 * s[i]) + 7.0;
    y[i] = i % 3 == 0;
  }
  EXPECT_DOUBLE_EQ(auroc(s, y), auroc(t, y));
  std::vector<double> neg(40);
  for (std::size_t i = 0; i < 40; ++i) neg[i] = -s[i];
  EXPECT_NEAR(auroc(neg, y), 1.0 - auroc(s, y), 1e-12);
}

TEST(Auroc, RejectsDegenerateInput) {
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), MetricError);
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), MetricError);
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{0}), MetricError);
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), MetricError);
}

TEST(CombineRecDiv, ProductWithSoftmaxComplement) {
  Rng rng(3);
  const Tensor rec = rand_tensor(rng, {6}, 0, 2);
  const Tensor div = rand_tensor(rng, {6}, 0, 3);
  const Tensor out = combine_rec_div(rec, div);
  double z = 0.0;
  for (double v : div.data()) z += std::exp(-v);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], rec[i] * (1.0 - std::exp(-div[i]) / z), 1e-14);
}

TEST(CombineRecDiv, SinglePatchScoresZeroAndLargeDivergencesAreStable) {
  EXPECT_EQ(combine_rec_div(Tensor::vector({5.0}), Tensor::vector({2.0}))[0], 0.0);
  const Tensor out = combine_rec_div(Tensor::vector({1.0, 1.0}), Tensor::vector({1e4, 0.0}));
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
  EXPECT_THROW(combine_rec_div(Tensor::vector({1.0}), Tensor::vector({1.0, 2.0})), DimensionError);
}

TEST(PatchScores, RoutesToTheRightBranch) {
  ToyProblem t = make_toy(4);
  const ForwardTrace tr = forward(t.x, t.bank, t.model);
  const Tensor rec = patch_scores(tr, t.x, Criterion::rec);
  EXPECT_EQ(rec, reconstruction_error(constant(tr.xhat.value()), t.x.features).value());
  const Tensor div = patch_scores(tr, t.x, Criterion::div);
  Tensor expect(Shape{4});
  for (std::size_t l = 0; l < tr.layers(); ++l) {
    const Tensor kl = symmetric_kl(tr.t_e[l], tr.s_e[l]).value();
    for (std::size_t i = 0; i < 4; ++i) expect[i] += kl[i] / static_cast<double>(tr.layers());
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(div[i], expect[i], 1e-14);
  EXPECT_EQ(patch_scores(tr, t.x, Criterion::recdiv), combine_rec_div(rec, div));

  ToyProblem intra = make_toy(4, Views::intra);
  const ForwardTrace ti = forward(intra.x, intra.bank, intra.model);
  const Tensor d = div_scores(ti);
  const Tensor k0 = symmetric_kl(ti.t_g[0], ti.s_g[0]).value();
  const Tensor k1 = symmetric_kl(ti.t_g[1], ti.s_g[1]).value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d[i], 0.5 * (k0[i] + k1[i]), 1e-14);
}

TEST(Criterion, ParseAndPrint) {
  for (Criterion c : {Criterion::rec, Criterion::div, Criterion::recdiv}) EXPECT_EQ(parse_criterion(to_string(c)), c);
  EXPECT_THROW(parse_criterion("sum"), ConfigError);
}

TEST(ToMap, UniformScoresGiveUniformMap) {
  const AnomalyMap m = to_map(Tensor(Shape{12}, 0.3), {3, 4}, 24, 32, 8);
  EXPECT_EQ(m.height(), 24u);
  EXPECT_EQ(m.width(), 32u);
  for (double v : m.values.data()) EXPECT_NEAR(v, 0.3, 1e-15);
  EXPECT_EQ(m.levels, std::vector<int>{8});
}

TEST(ToMap, HotPatchPeaksInsideItsCell) {
  Tensor s(Shape{16});
  s[5] = 1.0;  // row 1, col 1 of a 4x4 grid
  const AnomalyMap m = to_map(s, {4, 4}, 32, 32);
  std::size_t arg = 0;
  for (std::size_t k = 1; k < m.values.numel(); ++k)
    if (m.values[k] > m.values[arg]) arg = k;
  const std::size_t y = arg / 32, x = arg % 32;
  EXPECT_TRUE(y >= 8 && y < 16 && x >= 8 && x < 16);
  EXPECT_EQ(m.values.at(31, 31), 0.0);
}

TEST(ToMap, BilinearWithPixelCenterAlignment) {
  const double a = 1.0, b = 2.0, c = 4.0, d = 8.0;
  const AnomalyMap m = to_map(Tensor::vector({a, b, c, d}), {2, 2}, 4, 4);
  const double w[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      const double top = (1 - w[x]) * a + w[x] * b, bot = (1 - w[x]) * c + w[x] * d;
      EXPECT_NEAR(m.values.at(y, x), (1 - w[y]) * top + w[y] * bot, 1e-15);
    }
  EXPECT_THROW(to_map(Tensor(Shape{3}), {2, 2}, 4, 4), DimensionError);
}

TEST(Smooth, PreservesConstantsAndMass) {
  const AnomalyMap flat = smooth(map_of(Tensor(Shape{9, 7}, 2.5)), 1.5);
  for (double v : flat.values.data()) EXPECT_NEAR(v, 2.5, 1e-12);
  Tensor spike(Shape{21, 21});
  spike.at(10, 10) = 1.0;
  const AnomalyMap s = smooth(map_of(spike), 1.0);
  double total = 0.0;
  for (double v : s.values.data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(image_score(s), s.values.at(10, 10));
  EXPECT_NEAR(s.values.at(10, 11), s.values.at(11, 10), 1e-15);
  EXPECT_EQ(smooth(map_of(spike), 0.0).values, spike);
}

TEST(FuseLevels, IdenticalMapsNormalizeToThemselves) {
  Rng rng(5);
  const Tensor v = rand_tensor(rng, {5, 6}, 2, 4);
  const std::vector<AnomalyMap> maps{map_of(v, 8), map_of(v, 16)};
  const AnomalyMap f = fuse_levels(maps);
  const LevelRange r = level_range(std::span(&maps[0], 1));
  for (std::size_t k = 0; k < v.numel(); ++k) EXPECT_NEAR(f.values[k], (v[k] - r.min) / (r.max - r.min), 1e-14);
  EXPECT_EQ(f.levels, (std::vector<int>{8, 16}));
}

TEST(FuseLevels, ConstantLevelContributesZero) {
  const std::vector<AnomalyMap> maps{map_of(Tensor::matrix({{0, 1}, {2, 4}})), map_of(Tensor(Shape{2, 2}, 3.0))};
  const AnomalyMap f = fuse_levels(maps);
  EXPECT_DOUBLE_EQ(f.values.at(1, 1), 0.5);
  EXPECT_DOUBLE_EQ(f.values.at(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(f.values.at(0, 0), 0.0);
}

TEST(FuseLevels, UsesSharedRangesAndIgnoresOrder) {
  Rng rng(6);
  const std::vector<AnomalyMap> a{map_of(rand_tensor(rng, {3, 3}), 16), map_of(rand_tensor(rng, {3, 3}), 8)};
  const std::vector<AnomalyMap> b{a[1], a[0]};
  const std::vector<LevelRange> ra{{-2, 2}, {-1, 1}}, rb{{-1, 1}, {-2, 2}};
  const AnomalyMap fa = fuse_levels(a, ra), fb = fuse_levels(b, rb);
  for (std::size_t k = 0; k < 9; ++k) {
    EXPECT_NEAR(fa.values[k], fb.values[k], 1e-15);
    EXPECT_NEAR(fa.values[k], 0.5 * ((a[0].values[k] + 2) / 4 + (a[1].values[k] + 1) / 2), 1e-15);
  }
  EXPECT_EQ(fa.levels, fb.levels);
  EXPECT_THROW(fuse_levels(a, std::vector<LevelRange>{{0, 1}}), UsageError);
  const std::vector<AnomalyMap> bad{map_of(Tensor(Shape{2, 2})), map_of(Tensor(Shape{2, 3}))};
  EXPECT_THROW(fuse_levels(bad), DimensionError);
}

TEST(LevelRange, SpansEveryMap) {
  const std::vector<AnomalyMap> maps{map_of(Tensor::matrix({{1, 5}})), map_of(Tensor::matrix({{-3, 2}}))};
  const LevelRange r = level_range(maps);
  EXPECT_EQ(r.min, -3.0);
  EXPECT_EQ(r.max, 5.0);
  EXPECT_THROW(level_range(std::span<const AnomalyMap>{}), UsageError);
}

TEST(ImageScore, IsTheMaximumPixel) {
  EXPECT_EQ(image_score(map_of(Tensor::matrix({{0.1, 0.9}, {-4, 0.3}}))), 0.9);
}
