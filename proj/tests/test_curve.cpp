#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "ffr/artery.hpp"
#include "ffr/curve.hpp"

using namespace ffr;

namespace {

DropProfile profile(std::vector<double> d, double spacing = 0.5) {
  const Grid g(spacing, d.size());
  return DropProfile(g, std::move(d));
}

void expect_near_all(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-12) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(Grid, RejectsBadSpacingAndLength) {
  EXPECT_THROW(Grid(0.0, 10), std::invalid_argument);
  EXPECT_THROW(Grid(-1.0, 10), std::invalid_argument);
  EXPECT_THROW(Grid(0.5, 1), std::invalid_argument);
  EXPECT_DOUBLE_EQ(Grid(0.5, 201).length_mm(), 100.0);
}

TEST(DropsToFfr, HandCases) {
  expect_near_all(drops_to_ffr(profile({0, 0, 0, 0})).ffr, {1, 1, 1, 1});
  expect_near_all(drops_to_ffr(profile({0.1, 0, 0.2, 0})).ffr, {0.9, 0.9, 0.7, 0.7});
}

TEST(FfrToDrops, HandCases) {
  const Grid g(0.5, 3);
  expect_near_all(ffr_to_drops(PullbackCurve(g, {1, 1, 1})).drops, {0, 0, 0});
  expect_near_all(ffr_to_drops(PullbackCurve(g, {0.95, 0.80, 0.80})).drops, {0.05, 0.15, 0});
}

TEST(DropProfile, RejectsNonFiniteAndLengthMismatch) {
  EXPECT_THROW(DropProfile(Grid(0.5, 3), {0.1, 0.2}), std::invalid_argument);
  EXPECT_THROW(DropProfile(Grid(0.5, 2), {0.1, std::nan("")}), std::invalid_argument);
}

TEST(PctDiff, HandCasesAndErrors) {
  expect_near_all(pct_diff(std::vector<double>{4, 4, 4}), {0, 0, 0});
  expect_near_all(pct_diff(std::vector<double>{4, 4, 2, 2}), {0, 0, 0.5, 0});
  EXPECT_THROW(pct_diff(std::vector<double>{4, 0, 2}), std::invalid_argument);
  EXPECT_THROW(pct_diff(std::vector<double>{4, -1}), std::invalid_argument);
}

TEST(AvgPool, HandCases) {
  const DropProfile c = avg_pool_drops(profile(std::vector<double>(8, 0.1)), 4);
  EXPECT_EQ(c.grid, Grid(2.0, 2));
  expect_near_all(c.drops, {0.1, 0.1});
  expect_near_all(avg_pool_drops(profile({0.4, 0, 0, 0, 0, 0, 0, 0}), 4).drops, {0.1, 0});
}

TEST(AvgPool, TrailingWindowUsesItsOwnLength) {
  const DropProfile p = avg_pool_drops(profile({0.4, 0, 0, 0, 0.2, 0.4}), 4);
  expect_near_all(p.drops, {0.1, 0.3});
  EXPECT_EQ(pooled_length(6, 4), 2u);
  EXPECT_EQ(pooled_length(9, 4), 3u);
}

TEST(SumPool, RunningSumSamplesTheCurve) {
  const DropProfile d = profile({0.1, 0.0, 0.05, 0.02, 0.0, 0.03, 0.01, 0.0, 0.04});
  const PullbackCurve fine = drops_to_ffr(d);
  const PullbackCurve coarse = drops_to_ffr(sum_pool_drops(d, 4));
  ASSERT_EQ(coarse.size(), 3u);
  EXPECT_NEAR(coarse.ffr[0], fine.ffr[3], 1e-15);
  EXPECT_NEAR(coarse.ffr[1], fine.ffr[7], 1e-15);
  EXPECT_NEAR(coarse.ffr[2], fine.ffr[8], 1e-15);
}

TEST(MaskDistal, HandCases) {
  const DropProfile d = profile({0.1, 0.2, 0.3});
  EXPECT_EQ(mask_distal(d, 2), d);
  expect_near_all(mask_distal(d, 1).drops, {0.1, 0.2, 0});
  EXPECT_THROW(mask_distal(d, 3), std::out_of_range);
}

TEST(MinFfr, HandCases) {
  EXPECT_DOUBLE_EQ(min_ffr(PullbackCurve(Grid(1, 4), {1, 0.9, 0.8, 0.85})), 0.8);
  EXPECT_DOUBLE_EQ(min_ffr(PullbackCurve(Grid(1, 3), {1, 1, 1})), 1.0);
  EXPECT_DOUBLE_EQ(min_ffr(PullbackCurve(Grid(1, 3), {1.0, 0.92, 0.95})), 0.92);
}

TEST(ResampleLinear, HandCases) {
  const PullbackCurve c(Grid(10.0, 2), {1.0, 0.8});
  const PullbackCurve r = resample_linear(c, 5.0);
  expect_near_all(r.ffr, {1.0, 0.9, 0.8});
  EXPECT_EQ(resample_linear(c, 10.0), c);
  const PullbackCurve flat(Grid(0.5, 11), std::vector<double>(11, 0.83));
  for (double v : resample_linear(flat, 1.0).ffr) EXPECT_DOUBLE_EQ(v, 0.83);
  EXPECT_THROW(resample_linear(c, 0.0), std::invalid_argument);
  EXPECT_THROW(resample_linear(c, 20.0), std::invalid_argument);
}

TEST(InterpolateOnto, ClampsPastTheEnd) {
  const PullbackCurve c(Grid(2.0, 3), {1.0, 0.9, 0.7});
  const PullbackCurve r = interpolate_onto(c, Grid(1.0, 7));
  expect_near_all(r.ffr, {1.0, 0.95, 0.9, 0.8, 0.7, 0.7, 0.7});
}

TEST(CurveProperties, RandomProfiles) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(2, 300);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d(len(rng));
    for (double& x : d) x = u(rng) / static_cast<double>(d.size());
    const DropProfile p = profile(d);
    expect_near_all(ffr_to_drops(drops_to_ffr(p)).drops, d, 1e-12);

    const std::size_t end = std::uniform_int_distribution<std::size_t>(0, d.size() - 1)(rng);
    std::vector<double> nonneg = d;
    for (double& x : nonneg) x = std::abs(x);
    const DropProfile q = profile(nonneg);
    EXPECT_GE(min_ffr(drops_to_ffr(mask_distal(q, end))), min_ffr(drops_to_ffr(q)));
    double total = 0.0;
    for (double x : nonneg) total += x;
    EXPECT_NEAR(min_ffr(drops_to_ffr(q)), 1.0 - total, 1e-12);
  }
}

TEST(Normalization, TrainingSetIsStandardized) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> area(2.0, 9.0);
  std::normal_distribution<double> lat(3.0, 2.0);
  std::vector<ArteryRecord> recs(6);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    const std::size_t n = 20 + 7 * k;
    auto& c = recs[k].characteristics;
    recs[k].id = "a" + std::to_string(k);
    c.grid = Grid(0.5, n);
    recs[k].measurement_end_index = n - 1;
    c.lumen_area.resize(n);
    for (double& x : c.lumen_area) x = area(rng);
    c.bifurcation.assign(n, 0.0);
    c.side_branch.assign(n, 0.0);
    c.bifurcation[3] = 1.0;
    c.side_branch[4] = 2.0;
    c.latent.assign(2, std::vector<double>(n));
    for (auto& ch : c.latent) {
      for (double& x : ch) x = lat(rng);
    }
  }
  const NormalizationResult res = normalize_characteristics(recs);
  auto check = [&](auto get) {
    double s = 0.0, ss = 0.0, n = 0.0;
    for (const auto& a : res.arteries) {
      for (double x : get(a)) {
        s += x;
        ss += x * x;
        n += 1.0;
      }
    }
    EXPECT_LT(std::abs(s / n), 1e-9);
    EXPECT_LT(std::abs(ss / n - 1.0), 1e-9);
  };
  check([](const NormalizedArtery& a) { return a.lumen_pct; });
  check([](const NormalizedArtery& a) { return a.latent[0]; });
  check([](const NormalizedArtery& a) { return a.latent[1]; });
  EXPECT_EQ(res.arteries[0].bifurcation[3], 1.0);
  EXPECT_EQ(res.arteries[0].side_branch[4], 1.0);  // capped
  EXPECT_EQ(res.arteries[0].bifurcation[0], 0.0);
}

TEST(Normalization, LumenChannelIgnoresAreaScale) {
  ArteryRecord r;
  r.id = "x";
  r.characteristics.grid = Grid(0.5, 5);
  r.measurement_end_index = 4;
  r.characteristics.lumen_area = {4, 3, 2, 2.5, 3};
  r.characteristics.bifurcation.assign(5, 0);
  r.characteristics.side_branch.assign(5, 0);
  ArteryRecord scaled = r;
  for (double& x : scaled.characteristics.lumen_area) x *= 7.5;
  const NormalizationStats s = compute_normalization_stats(std::vector<ArteryRecord>{r});
  EXPECT_EQ(apply_normalization(r, s).lumen_pct, apply_normalization(scaled, s).lumen_pct);
}

TEST(Normalization, ZeroVarianceChannelIsAnError) {
  ArteryRecord r;
  r.id = "flat";
  r.characteristics.grid = Grid(0.5, 4);
  r.measurement_end_index = 3;
  r.characteristics.lumen_area = {4, 4, 4, 4};
  r.characteristics.bifurcation.assign(4, 0);
  r.characteristics.side_branch.assign(4, 0);
  EXPECT_THROW(compute_normalization_stats(std::vector<ArteryRecord>{r}), std::invalid_argument);
}

TEST(ReferenceDrops, CurveStartIsRenormalized) {
  const PullbackCurve c(Grid(0.5, 3), {0.98, 0.9, 0.9});
  const DropProfile d = reference_drops_from_curve(c);
  expect_near_all(d.drops, {0.0, 0.08, 0.0});
}
