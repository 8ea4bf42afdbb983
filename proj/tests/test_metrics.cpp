#include <gtest/gtest.h>

#include <random>
#include <utility>
#include <vector>

#include "ffr/metrics.hpp"

using namespace ffr;

namespace {

// 1 mm grid from 0 to length_mm, FFR given as a function of position.
template <typename F>
PullbackCurve curve_mm(std::size_t length_mm, F f) {
  std::vector<double> v(length_mm + 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(static_cast<double>(i));
  const Grid g(1.0, v.size());
  return PullbackCurve(g, std::move(v));
}

using Pair = std::pair<LesionClass, LesionClass>;
constexpr auto F = LesionClass::focal;
constexpr auto D = LesionClass::diffuse;

}  // namespace

TEST(Aupc, ConstantCurves) {
  const PullbackCurve one(Grid(0.5, 201), std::vector<double>(201, 1.0));
  EXPECT_NEAR(aupc(one), 11.0, 1e-12);
  const PullbackCurve half(Grid(0.5, 201), std::vector<double>(201, 0.5));
  EXPECT_NEAR(aupc(half), 5.5, 1e-12);
  EXPECT_THROW(aupc(PullbackCurve(Grid(0.5, 11), std::vector<double>(11, 1.0))), std::invalid_argument);
}

TEST(Aupc, Linear) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(157), b(157), c(157);
    for (double& x : a) x = u(rng);
    for (double& x : b) x = u(rng);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.3 * a[i] - 1.7 * b[i] + 0.25;
    const Grid g(0.5, 157);
    const double expect = 0.3 * aupc(PullbackCurve(g, a)) - 1.7 * aupc(PullbackCurve(g, b)) + 0.25 * aupc(PullbackCurve(g, std::vector<double>(157, 1.0)));
    EXPECT_NEAR(aupc(PullbackCurve(g, c)), expect, 1e-10);
  }
}

TEST(Ppg, FocalExtreme) {
  // 0.2 lost linearly between 40 and 60 mm of a 100 mm vessel.
  const PullbackCurve c = curve_mm(100, [](double x) { return 1.0 - 0.01 * std::clamp(x - 40.0, 0.0, 20.0); });
  const auto p = ppg_index(c);
  ASSERT_TRUE(p);
  EXPECT_NEAR(*p, 0.9, 1e-12);
  EXPECT_EQ(classify_focal(p, 0.63), F);
}

TEST(Ppg, UniformDiffuse) {
  const PullbackCurve c = curve_mm(100, [](double x) { return 1.0 - 0.003 * x; });
  const auto p = ppg_index(c);
  ASSERT_TRUE(p);
  EXPECT_NEAR(*p, 0.1, 1e-12);
  EXPECT_EQ(classify_focal(p, 0.63), D);
}

TEST(Ppg, ResamplingDoesNotChangeTheHandCase) {
  std::vector<double> v(201);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - 0.01 * std::clamp(0.5 * static_cast<double>(i) - 40.0, 0.0, 20.0);
  EXPECT_NEAR(*ppg_index(PullbackCurve(Grid(0.5, 201), v)), 0.9, 1e-12);
}

TEST(Ppg, HealthyVesselHasNone) {
  EXPECT_FALSE(ppg_index(curve_mm(50, [](double) { return 1.0; })));
  EXPECT_FALSE(classify_focal(std::nullopt, 0.63));
}

TEST(Ppg, BoundedForMonotoneCurves) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + 20 + static_cast<std::size_t>(u(rng) * 200));
    v[0] = 1.0;
    for (std::size_t i = 1; i < v.size(); ++i) v[i] = v[i - 1] - (u(rng) < 0.3 ? 0.02 * u(rng) : 0.0);
    if (v.back() == 1.0) v.back() = 0.99;
    const auto p = ppg_index(PullbackCurve(Grid(0.5, v.size()), v));
    ASSERT_TRUE(p);
    EXPECT_GE(*p, 0.0);
    EXPECT_LE(*p, 1.0);
  }
}

TEST(ClassifyFocal, StrictThresholdAndRescaling) {
  EXPECT_EQ(classify_focal(0.64, 0.63), F);
  EXPECT_EQ(classify_focal(0.63, 0.63), D);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double p = u(rng), t = u(rng);
    EXPECT_EQ(classify_focal(p, t), classify_focal(std::exp(3 * p) + 1, std::exp(3 * t) + 1));
  }
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(Confusion, HandCounts) {
  const std::vector<Pair> perfect{{F, F}, {D, D}, {F, F}};
  const ConfusionStats p = confusion_stats(perfect);
  EXPECT_EQ(p.accuracy, 1.0);
  EXPECT_EQ(*p.sensitivity, 1.0);
  EXPECT_EQ(*p.specificity, 1.0);

  const std::vector<Pair> all_diffuse{{D, F}, {D, F}, {D, D}, {D, D}};
  const ConfusionStats d = confusion_stats(all_diffuse);
  EXPECT_EQ(d.accuracy, 0.5);
  EXPECT_EQ(*d.sensitivity, 0.0);
  EXPECT_EQ(*d.specificity, 1.0);

  // 4 TP, 1 FN, 3 TN, 2 FP.
  const std::vector<Pair> mixed{{F, F}, {F, F}, {F, F}, {F, F}, {D, F}, {D, D}, {D, D}, {D, D}, {F, D}, {F, D}};
  const ConfusionStats m = confusion_stats(mixed);
  EXPECT_EQ(m.true_pos, 4u);
  EXPECT_EQ(m.false_neg, 1u);
  EXPECT_EQ(m.true_neg, 3u);
  EXPECT_EQ(m.false_pos, 2u);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(*m.sensitivity, 0.8);
  EXPECT_DOUBLE_EQ(*m.specificity, 0.6);

  const std::vector<Pair> no_focal{{D, D}, {F, D}};
  EXPECT_FALSE(confusion_stats(no_focal).sensitivity);
  EXPECT_THROW(confusion_stats(std::vector<Pair>{}), std::invalid_argument);
}

TEST(Confusion, AccuracyIsPrevalenceWeighted) {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Pair> v;
    for (int i = 0; i < 30; ++i) v.emplace_back(coin(rng) ? F : D, i % 3 == 0 ? F : D);
    const ConfusionStats s = confusion_stats(v);
    const double pos = 10, neg = 20;
    EXPECT_NEAR(s.accuracy, (*s.sensitivity * pos + *s.specificity * neg) / (pos + neg), 1e-15);
  }
}

TEST(BlandAltman, HandCases) {
  const std::vector<double> r{0.8, 0.7, 0.9};
  BlandAltman b = bland_altman(r, r);
  EXPECT_EQ(b.bias, 0.0);
  EXPECT_EQ(b.lower_limit, 0.0);
  EXPECT_EQ(b.upper_limit, 0.0);

  const std::vector<double> shifted{0.9, 0.8, 1.0};
  b = bland_altman(shifted, r);
  EXPECT_NEAR(b.bias, 0.1, 1e-12);
  EXPECT_NEAR(b.upper_limit - b.lower_limit, 0.0, 1e-12);

  const std::vector<double> p{0.6, 0.4}, q{0.5, 0.5};
  b = bland_altman(p, q);
  const double sd = std::sqrt(0.02);  // differences +-0.1, sample sd
  EXPECT_NEAR(b.bias, 0.0, 1e-15);
  EXPECT_NEAR(b.sd, sd, 1e-15);
  EXPECT_NEAR(b.upper_limit, 1.96 * sd, 1e-15);
  EXPECT_NEAR(b.lower_limit, -1.96 * sd, 1e-15);

  EXPECT_THROW(bland_altman(std::vector<double>{1.0}, std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(bland_altman(p, r), std::invalid_argument);
}

TEST(HistogramOverlap, HandCases) {
  const std::vector<double> a{0.71, 0.82, 0.93, 0.64};
  EXPECT_NEAR(histogram_overlap(a, a), 1.0, 1e-12);
  EXPECT_EQ(histogram_overlap(std::vector<double>{0.1, 0.2}, std::vector<double>{0.8, 0.9}), 0.0);
  std::vector<double> lo, mid;
  for (int i = 0; i < 10; ++i) lo.push_back(0.025 + 0.05 * i);         // bins 0-9
  for (int i = 5; i < 15; ++i) mid.push_back(0.025 + 0.05 * i);        // bins 5-14
  EXPECT_NEAR(histogram_overlap(lo, mid), 0.5, 1e-12);
  EXPECT_NEAR(histogram_overlap(std::vector<double>{1.2}, std::vector<double>{0.99}), 1.0, 1e-12);
  EXPECT_THROW(histogram_overlap(std::vector<double>{}, a), std::invalid_argument);
}

TEST(Summary, RecomputableFromRows) {
  const PPGConfig cfg;
  std::vector<ArteryCurves> curves;
  curves.push_back({"a", curve_mm(100, [](double x) { return 1.0 - 0.01 * std::clamp(x - 40.0, 0.0, 20.0); }),
                    curve_mm(100, [](double x) { return 1.0 - 0.01 * std::clamp(x - 30.0, 0.0, 20.0); }), F, 0});
  curves.push_back({"b", curve_mm(100, [](double x) { return 1.0 - 0.003 * x; }),
                    curve_mm(100, [](double x) { return 1.0 - 0.01 * std::clamp(x - 50.0, 0.0, 20.0); }), F, 1});
  curves.push_back({"c", curve_mm(100, [](double x) { return 1.0 - 0.002 * x; }),
                    curve_mm(100, [](double x) { return 1.0 - 0.0025 * x; }), D, 1});
  std::vector<ArteryMetrics> rows;
  for (const auto& c : curves) rows.push_back(evaluate_curves(c, cfg, 0.63));
  const MetricsSummary s = summarize(rows, curves);
  EXPECT_EQ(s.n_arteries, 3u);
  EXPECT_EQ(s.n_classified, 3u);
  double mad = 0.0;
  for (const auto& r : rows) mad += std::abs(r.aupc_pred - r.aupc_ref);
  EXPECT_NEAR(s.aupc_mad, mad / 3.0, 1e-12);
  EXPECT_EQ(s.confusion.true_pos, 1u);
  EXPECT_EQ(s.confusion.false_neg, 1u);
  EXPECT_EQ(s.confusion.true_neg, 1u);
  ASSERT_TRUE(s.ppg_agreement);
  EXPECT_NEAR(s.ppg_agreement->bias, (0.9 - 0.9 + 0.1 - 0.9 + 0.1 - 0.1) / 3.0, 1e-12);
  ASSERT_TRUE(s.ffr_agreement);
  EXPECT_GT(s.histogram_overlap, 0.0);

  std::vector<PullbackCurve> refs;
  for (const auto& c : curves) refs.push_back(c.ref);
  EXPECT_NEAR(reference_ppg_median(refs, cfg), 0.9, 1e-12);
}
