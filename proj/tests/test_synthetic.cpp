#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ffr/metrics.hpp"
#include "ffr/synthetic.hpp"

using namespace ffr;

namespace {

OracleConfig oracle(double alpha = 20.0, double beta = 0.015) { return {alpha, beta, 0.97}; }

PullbackCurve measured_reference(const ArteryRecord& r) {
  return truncate(drops_to_ffr(*r.ref_drops), r.measurement_end_index + 1);
}

SyntheticConfig small_config(std::size_t n) {
  SyntheticConfig c;
  c.n_arteries = n;
  c.n_latent = 4;
  return c;
}

}  // namespace

TEST(Lumen, LesionFreeProfileIsStrictlyDecreasing) {
  const Grid g(0.5, 201);
  const std::vector<double> a = gen_lumen_profile(g, 10.0, 0.45, {});
  EXPECT_DOUBLE_EQ(a.front(), 10.0);
  EXPECT_NEAR(a.back(), 4.5, 1e-12);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i], a[i - 1]);
}

TEST(Lumen, ZeroSeverityIsNoLesion) {
  const Grid g(0.5, 161);
  const std::vector<LesionSpec> none{};
  const std::vector<LesionSpec> zero{{LesionClass::focal, 30.0, 10.0, 0.0}, {LesionClass::diffuse, 60.0, 30.0, 0.0}};
  EXPECT_EQ(gen_lumen_profile(g, 9.0, 0.5, zero), gen_lumen_profile(g, 9.0, 0.5, none));
}

TEST(Lumen, FocalPeakReduction) {
  const Grid g(0.5, 201);
  const std::vector<double> base = baseline_lumen(g, 12.0, 0.4);
  const std::vector<LesionSpec> l{{LesionClass::focal, 40.0, 10.0, 0.7}};
  const std::vector<double> a = gen_lumen_profile(g, 12.0, 0.4, l);
  EXPECT_NEAR(a[80], 0.3 * base[80], 1e-12);
  const auto lowest = static_cast<std::size_t>(std::min_element(a.begin(), a.end()) - a.begin());
  EXPECT_NEAR(g.position_mm(lowest), 40.0, 1.0);
}

TEST(Lumen, DiffusePlateauAndErrors) {
  const Grid g(0.5, 201);
  const std::vector<double> base = baseline_lumen(g, 10.0, 0.5);
  const std::vector<LesionSpec> l{{LesionClass::diffuse, 50.0, 40.0, 0.3}};
  const std::vector<double> a = gen_lumen_profile(g, 10.0, 0.5, l);
  for (double x = 41.0; x <= 59.0; x += 0.5) {
    const auto i = static_cast<std::size_t>(x / 0.5);
    EXPECT_NEAR(a[i], 0.7 * base[i], 1e-12) << x;
  }
  EXPECT_EQ(a[40], base[40]);  // 20 mm, outside the extent

  const std::vector<LesionSpec> closing{{LesionClass::focal, 40.0, 10.0, 0.6}, {LesionClass::focal, 41.0, 10.0, 0.6}};
  EXPECT_THROW(gen_lumen_profile(g, 10.0, 0.5, closing), std::invalid_argument);
  const std::vector<LesionSpec> outside{{LesionClass::focal, 140.0, 10.0, 0.5}};
  EXPECT_THROW(gen_lumen_profile(g, 10.0, 0.5, outside), std::invalid_argument);
}

TEST(Oracle, CalibrationFixedPoint) {
  const SyntheticConfig cfg;
  Grid g;
  const std::vector<double> v = median_vessel(cfg, g);
  EXPECT_DOUBLE_EQ(g.length_mm(), 100.0);
  const DropProfile d = oracle_ffr(v, g, calibrated_oracle(cfg));
  EXPECT_NEAR(drops_to_ffr(d).ffr.back(), 0.97, 1e-9);
}

TEST(Oracle, InverseSquareLaw) {
  const Grid g(0.5, 121);
  const std::vector<double> a = baseline_lumen(g, 9.0, 0.5);
  std::vector<double> doubled = a;
  for (double& x : doubled) x *= 2;
  const DropProfile d1 = oracle_ffr(a, g, oracle()), d2 = oracle_ffr(doubled, g, oracle());
  EXPECT_EQ(d1.drops[0], 0.0);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_NEAR(d2.drops[i], d1.drops[i] / 4.0, 1e-15);
}

TEST(Oracle, NarrowingTermHandValue) {
  const Grid g(0.5, 3);
  const std::vector<double> ref{4.0, 4.0, 4.0}, lumen{4.0, 2.0, 4.0};
  const DropProfile d = oracle_ffr(lumen, ref, g, oracle(1.0, 0.1));
  EXPECT_NEAR(d.drops[1], 0.5 / 4.0 + 0.1 * 0.5 * 1.0, 1e-15);
  EXPECT_NEAR(d.drops[2], 0.5 / 16.0, 1e-15);
  EXPECT_THROW(oracle_ffr(std::vector<double>{1.0, 0.0, 1.0}, g, oracle()), std::invalid_argument);
  EXPECT_THROW(oracle_ffr(lumen, g, oracle(0.0)), std::invalid_argument);
}

TEST(Oracle, NonNegativeAndMonotoneInArea) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Grid g(0.5, 40 + static_cast<std::size_t>(200 * u(rng)));
    const std::vector<double> ref = baseline_lumen(g, 8 + 6 * u(rng), 0.35 + 0.2 * u(rng));
    std::vector<double> a(ref.size()), smaller(ref.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = ref[i] * (0.2 + 0.8 * u(rng));
      smaller[i] = a[i] * (0.3 + 0.7 * u(rng));
    }
    const OracleConfig o = oracle(10 + 30 * u(rng), 0.005 + 0.05 * u(rng));
    const DropProfile d = oracle_ffr(a, ref, g, o), ds = oracle_ffr(smaller, ref, g, o);
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_GE(d.drops[i], 0.0);
      ASSERT_GE(ds.drops[i], d.drops[i]) << "trial " << trial << " index " << i;
    }
  }
}

TEST(Misregistration, ShiftsReferenceOnly) {
  ArteryRecord r;
  r.id = "m";
  r.characteristics.grid = Grid(0.5, 60);
  r.characteristics.lumen_area.assign(60, 5.0);
  r.characteristics.bifurcation.assign(60, 0.0);
  r.characteristics.side_branch.assign(60, 0.0);
  r.measurement_end_index = 59;
  std::vector<double> d(60, 0.0);
  d[20] = 0.1;
  d[25] = 0.05;
  r.ref_drops = DropProfile(r.grid(), d);

  const ArteryRecord same = inject_misregistration(r, 0.0);
  EXPECT_EQ(same.ref_drops->drops, d);

  const ArteryRecord s = inject_misregistration(r, 4.5);
  EXPECT_EQ(s.ref_drops->drops[29], 0.1);
  EXPECT_EQ(s.ref_drops->drops[34], 0.05);
  EXPECT_EQ(s.characteristics.lumen_area, r.characteristics.lumen_area);
  EXPECT_DOUBLE_EQ(s.misregistration_mm, 4.5);
  double total = 0.0;
  for (double x : s.ref_drops->drops) total += x;
  EXPECT_NEAR(total, 0.15, 1e-15);

  const ArteryRecord back = inject_misregistration(r, -2.2);  // rounds to -4 samples
  EXPECT_EQ(back.ref_drops->drops[16], 0.1);

  EXPECT_THROW(inject_misregistration(r, 10.5), std::invalid_argument);
  EXPECT_THROW(inject_misregistration(r, 40.0, 50.0), std::invalid_argument);
}

TEST(Dataset, Deterministic) {
  const SyntheticConfig cfg = small_config(12);
  const SyntheticDataset a = gen_dataset(cfg), b = gen_dataset(cfg);
  ASSERT_EQ(a.records.size(), 12u);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].characteristics.lumen_area, b.records[i].characteristics.lumen_area);
    EXPECT_EQ(a.records[i].characteristics.latent, b.records[i].characteristics.latent);
    EXPECT_EQ(a.records[i].ref_drops->drops, b.records[i].ref_drops->drops);
    EXPECT_EQ(a.records[i].measurement_end_index, b.records[i].measurement_end_index);
  }
  SyntheticConfig other = cfg;
  other.seed = 43;
  EXPECT_NE(gen_dataset(other).records[0].characteristics.lumen_area, a.records[0].characteristics.lumen_area);
}

TEST(Dataset, RecordsAreWellFormed) {
  const SyntheticConfig cfg = small_config(40);
  const SyntheticDataset ds = gen_dataset(cfg);
  for (const auto& r : ds.records) {
    EXPECT_NO_THROW(r.validate());
    EXPECT_EQ(r.characteristics.latent.size(), 4u);
    EXPECT_GE(r.grid().length_mm(), 60.0 - 0.5);
    EXPECT_LE(r.grid().length_mm(), 140.0 + 0.5);
    EXPECT_LE(std::abs(r.misregistration_mm), 5.0);
    ASSERT_TRUE(r.ref_drops);
    EXPECT_EQ(r.ref_drops->drops[0], 0.0);
    for (std::size_t i = 0; i < r.grid().n_points(); ++i) {
      EXPECT_GE(r.ref_drops->drops[i], -1e-15);
      if (i > r.measurement_end_index) {
        EXPECT_EQ(r.ref_drops->drops[i], 0.0);
      }
    }
    for (double a : r.characteristics.lumen_area) EXPECT_GT(a, 0.0);
  }
}

TEST(Dataset, FocalFractionControlsLabels) {
  SyntheticConfig cfg = small_config(20);
  cfg.focal_fraction = 1.0;
  for (const auto& r : gen_dataset(cfg).records) EXPECT_EQ(r.label, LesionClass::focal);
  cfg.focal_fraction = 0.5;
  std::size_t focal = 0;
  for (const auto& r : gen_dataset(cfg).records) focal += r.label == LesionClass::focal;
  EXPECT_EQ(focal, 10u);
}

TEST(Dataset, ConfigValidationNamesTheField) {
  SyntheticConfig cfg;
  cfg.focal_fraction = 1.5;
  try {
    cfg.validate();
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("synthetic.focal_fraction"), std::string::npos);
  }
  cfg = {};
  cfg.misregistration_max_mm = 12.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.max_lesions = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Dataset, LabelsAgreeWithReferencePpg) {
  SyntheticConfig cfg;
  cfg.n_latent = 2;
  const SyntheticDataset ds = gen_dataset(cfg);
  std::vector<double> all, focal, diffuse;
  for (const auto& r : ds.records) {
    const auto p = ppg_index(measured_reference(r));
    ASSERT_TRUE(p) << r.id;
    all.push_back(*p);
    (r.label == LesionClass::focal ? focal : diffuse).push_back(*p);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  EXPECT_GT(mean(focal), mean(diffuse));
  const double med = median(all);
  const auto above = std::count_if(focal.begin(), focal.end(), [&](double p) { return p > med; });
  EXPECT_GE(static_cast<double>(above) / static_cast<double>(focal.size()), 0.9);
}

TEST(Dataset, ReferenceCurvesCoverAUsefulRange) {
  SyntheticConfig cfg = small_config(200);
  const SyntheticDataset ds = gen_dataset(cfg);
  double lo = 1.0, hi = 0.0;
  for (const auto& r : ds.records) {
    const double m = min_ffr(measured_reference(r));
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  EXPECT_LT(lo, 0.7);
  EXPECT_GT(hi, 0.85);
  EXPECT_GT(lo, 0.3);
}

TEST(Dataset, BackgroundLatentChannelsAreAppended) {
  const SyntheticDataset ds = gen_dataset(small_config(3));
  const auto more = append_background_latent(ds.records, 5, 5, 9);
  ASSERT_EQ(more.size(), 3u);
  EXPECT_EQ(more[1].characteristics.latent.size(), 9u);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(more[1].characteristics.latent[c], ds.records[1].characteristics.latent[c]);
  EXPECT_EQ(append_background_latent(ds.records, 5, 5, 9)[2].characteristics.latent, more[2].characteristics.latent);
}
