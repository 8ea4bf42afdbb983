#pragma once

// Synthetic arteries with known pullbacks. A smooth tapering lumen receives
// focal (Gaussian) or diffuse (plateau) narrowings; a viscous 1/A^2 term plus
// a quadratic narrowing-loss term turn the lumen into per-point FFR drops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffr/artery.hpp"
#include "ffr/curve.hpp"

namespace ffr {

struct LesionSpec {
  LesionClass kind = LesionClass::focal;
  double center_mm = 0.0;
  double extent_mm = 10.0;
  double severity = 0.5;  // fractional area reduction at the peak
};

struct OracleConfig {
  double alpha = 0.0;  // viscous coefficient; 0 means "calibrate"
  double beta = 0.015;
  double healthy_distal_ffr = 0.97;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct SyntheticConfig {
  std::size_t n_arteries = 200;
  double spacing_mm = 0.5;
  Range length_mm{60.0, 140.0};
  Range proximal_area_mm2{8.0, 14.0};
  Range taper_fraction{0.35, 0.55};
  double focal_fraction = 0.5;
  std::size_t min_lesions = 1;
  std::size_t max_lesions = 2;
  double two_lesion_probability = 0.25;
  Range focal_extent_mm{5.0, 15.0};
  Range focal_severity{0.45, 0.70};
  Range diffuse_extent_fraction{0.8, 1.0};  // of the lesion slot
  Range diffuse_severity{0.28, 0.42};
  Range measurement_margin_mm{10.0, 30.0};
  std::size_t n_latent = kDefaultLatentChannels;
  double latent_noise = 0.3;
  std::size_t latent_smoothing = 5;  // moving-average width in points
  double bifurcation_rate_per_mm = 0.05;
  double side_branch_rate_per_mm = 0.1;
  double misregistration_max_mm = 5.0;
  double beta = 0.015;
  double healthy_distal_ffr = 0.97;
  std::uint64_t seed = 42;

  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument("synthetic." + field + ": " + why);
    };
    auto range = [&](const Range& r, const std::string& field) {
      if (!(r.hi >= r.lo) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) bad(field, "range must be nonempty");
    };
    if (n_arteries == 0) bad("n_arteries", "must be >= 1");
    if (!(spacing_mm > 0.0)) bad("spacing_mm", "must be positive");
    range(length_mm, "length_mm");
    range(proximal_area_mm2, "proximal_area_mm2");
    range(taper_fraction, "taper_fraction");
    range(focal_extent_mm, "focal_extent_mm");
    range(focal_severity, "focal_severity");
    range(diffuse_extent_fraction, "diffuse_extent_fraction");
    range(diffuse_severity, "diffuse_severity");
    range(measurement_margin_mm, "measurement_margin_mm");
    if (length_mm.lo < 20.0) bad("length_mm", "vessels shorter than 20 mm are not supported");
    if (proximal_area_mm2.lo <= 0.0) bad("proximal_area_mm2", "must be positive");
    if (taper_fraction.lo <= 0.0 || taper_fraction.hi > 1.0) bad("taper_fraction", "must lie in (0, 1]");
    if (!(focal_fraction >= 0.0 && focal_fraction <= 1.0)) bad("focal_fraction", "must lie in [0, 1]");
    if (min_lesions > max_lesions || max_lesions > 2) bad("max_lesions", "lesion count range must lie within [0, 2]");
    if (!(two_lesion_probability >= 0.0 && two_lesion_probability <= 1.0)) bad("two_lesion_probability", "must lie in [0, 1]");
    if (focal_severity.lo < 0.0 || focal_severity.hi >= 1.0) bad("focal_severity", "must lie in [0, 1)");
    if (diffuse_severity.lo < 0.0 || diffuse_severity.hi >= 1.0) bad("diffuse_severity", "must lie in [0, 1)");
    if (diffuse_extent_fraction.lo <= 0.0 || diffuse_extent_fraction.hi > 1.0) bad("diffuse_extent_fraction", "must lie in (0, 1]");
    if (focal_extent_mm.lo <= 0.0) bad("focal_extent_mm", "must be positive");
    if (n_latent == 0) bad("n_latent", "must be >= 1");
    if (latent_noise < 0.0) bad("latent_noise", "must be >= 0");
    if (latent_smoothing == 0) bad("latent_smoothing", "must be >= 1");
    if (bifurcation_rate_per_mm < 0.0 || side_branch_rate_per_mm < 0.0) bad("bifurcation_rate_per_mm", "rates must be >= 0");
    if (!(misregistration_max_mm >= 0.0 && misregistration_max_mm <= 10.0)) bad("misregistration_max_mm", "must lie in [0, 10]");
    if (!(beta > 0.0)) bad("beta", "must be positive");
    if (!(healthy_distal_ffr > 0.0 && healthy_distal_ffr < 1.0)) bad("healthy_distal_ffr", "must lie in (0, 1)");
  }

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

// Smooth exponential taper from `proximal_area` to taper * proximal_area.
inline std::vector<double> baseline_lumen(const Grid& g, double proximal_area, double taper) {
  std::vector<double> a(g.n_points());
  const double k = -std::log(taper) / g.length_mm();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = proximal_area * std::exp(-k * g.position_mm(i));
  return a;
}

// Shape of a lesion's area reduction, peak 1: Gaussian with sd = extent / 4
// for focal lesions, a cosine-edged plateau across the extent for diffuse.
inline double lesion_shape(const LesionSpec& l, double x_mm) {
  if (l.kind == LesionClass::focal) {
    const double w = l.extent_mm / 4.0;
    const double d = x_mm - l.center_mm;
    return std::exp(-d * d / (2.0 * w * w));
  }
  const double lo = l.center_mm - l.extent_mm / 2.0;
  const double hi = l.center_mm + l.extent_mm / 2.0;
  const double ramp = 0.25 * l.extent_mm;
  if (x_mm < lo || x_mm > hi) return 0.0;
  if (x_mm < lo + ramp) return 0.5 - 0.5 * std::cos(std::numbers::pi * (x_mm - lo) / ramp);
  if (x_mm > hi - ramp) return 0.5 - 0.5 * std::cos(std::numbers::pi * (hi - x_mm) / ramp);
  return 1.0;
}

// Lumen area = baseline * (1 - sum_k severity_k * shape_k).
inline std::vector<double> gen_lumen_profile(const Grid& g, std::span<const double> baseline, std::span<const LesionSpec> lesions) {
  if (baseline.size() != g.n_points()) throw std::invalid_argument("baseline length does not match grid");
  std::vector<double> a(baseline.begin(), baseline.end());
  for (const auto& l : lesions) {
    if (!(l.severity >= 0.0 && l.severity < 1.0)) throw std::invalid_argument("lesion severity must lie in [0, 1)");
    if (l.center_mm < 0.0 || l.center_mm > g.length_mm()) throw std::invalid_argument("lesion center outside the vessel");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    double reduction = 0.0;
    for (const auto& l : lesions) reduction += l.severity * lesion_shape(l, g.position_mm(i));
    const double factor = 1.0 - reduction;
    if (!(factor > 0.0)) {
      throw std::invalid_argument("combined lesion severity closes the lumen at " + std::to_string(g.position_mm(i)) + " mm");
    }
    a[i] *= factor;
  }
  return a;
}

inline std::vector<double> gen_lumen_profile(const Grid& g, double proximal_area, double taper, std::span<const LesionSpec> lesions) {
  return gen_lumen_profile(g, baseline_lumen(g, proximal_area, taper), lesions);
}

// drop[0] = 0 (the ostium is the reference point); for i >= 1
//   drop[i] = alpha * dx / A_i^2 + beta * dx * max(0, A_ref,i / A_i - 1)^2
// where A_ref is the lesion-free reference lumen at the same position.
inline DropProfile oracle_ffr(std::span<const double> lumen, std::span<const double> reference, const Grid& g, const OracleConfig& cfg) {
  if (lumen.size() != g.n_points() || reference.size() != g.n_points()) {
    throw std::invalid_argument("oracle inputs do not match the grid");
  }
  if (!(cfg.alpha > 0.0) || !(cfg.beta > 0.0)) throw std::invalid_argument("oracle coefficients must be positive");
  const double dx = g.spacing_mm();
  std::vector<double> d(lumen.size(), 0.0);
  for (std::size_t i = 0; i < lumen.size(); ++i) {
    if (!(lumen[i] > 0.0) || !(reference[i] > 0.0)) {
      throw std::invalid_argument("oracle needs strictly positive areas (index " + std::to_string(i) + ")");
    }
  }
  for (std::size_t i = 1; i < lumen.size(); ++i) {
    const double a = lumen[i];
    const double narrowing = std::max(0.0, reference[i] / a - 1.0);
    d[i] = cfg.alpha * dx / (a * a) + cfg.beta * dx * narrowing * narrowing;
  }
  return {g, std::move(d)};
}

// Lesion-free oracle: the lumen is its own reference.
inline DropProfile oracle_ffr(std::span<const double> lumen, const Grid& g, const OracleConfig& cfg) {
  return oracle_ffr(lumen, lumen, g, cfg);
}

// Vessel of median length, proximal area and taper used for calibration.
inline std::vector<double> median_vessel(const SyntheticConfig& cfg, Grid& grid_out) {
  const double len = 0.5 * (cfg.length_mm.lo + cfg.length_mm.hi);
  const auto n = static_cast<std::size_t>(std::llround(len / cfg.spacing_mm)) + 1;
  grid_out = Grid(cfg.spacing_mm, n);
  return baseline_lumen(grid_out, 0.5 * (cfg.proximal_area_mm2.lo + cfg.proximal_area_mm2.hi),
                        0.5 * (cfg.taper_fraction.lo + cfg.taper_fraction.hi));
}

// alpha such that the lesion-free median vessel ends at healthy_distal_ffr.
inline double calibrate_alpha(const SyntheticConfig& cfg) {
  Grid g;
  const std::vector<double> a = median_vessel(cfg, g);
  double s = 0.0;
  for (std::size_t i = 1; i < a.size(); ++i) s += g.spacing_mm() / (a[i] * a[i]);
  return (1.0 - cfg.healthy_distal_ffr) / s;
}

inline OracleConfig calibrated_oracle(const SyntheticConfig& cfg) {
  return OracleConfig{calibrate_alpha(cfg), cfg.beta, cfg.healthy_distal_ffr};
}

// Translates the reference drops by round(shift / spacing) samples with zero
// fill. Characteristics are untouched; the shift is recorded on the record.
inline ArteryRecord inject_misregistration(const ArteryRecord& r, double shift_mm, double max_shift_mm = 10.0) {
  if (std::abs(shift_mm) > max_shift_mm) {
    throw std::invalid_argument("misregistration " + std::to_string(shift_mm) + " mm exceeds the configured maximum");
  }
  ArteryRecord out = r;
  out.misregistration_mm = r.misregistration_mm + shift_mm;
  if (!r.ref_drops) return out;
  const long samples = std::lround(shift_mm / r.grid().spacing_mm());
  const auto n = static_cast<long>(r.grid().n_points());
  if (std::abs(samples) >= n) throw std::invalid_argument("misregistration shifts the reference beyond the vessel");
  std::vector<double> d(static_cast<std::size_t>(n), 0.0);
  for (long i = 0; i < n; ++i) {
    const long src = i - samples;
    if (src >= 0 && src < n) d[static_cast<std::size_t>(i)] = r.ref_drops->drops[static_cast<std::size_t>(src)];
  }
  out.ref_drops = DropProfile(r.grid(), std::move(d));
  return out;
}

namespace detail {

inline std::mt19937_64 artery_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, const Range& r) {
  return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t width) {
  if (width <= 1) return v;
  const std::size_t half = width / 2;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(v.size(), i + half + 1);
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += v[k];
    out[i] = s / static_cast<double>(hi - lo);
  }
  return out;
}

inline std::vector<double> event_flags(std::mt19937_64& rng, const Grid& g, double rate_per_mm) {
  std::vector<double> f(g.n_points(), 0.0);
  std::bernoulli_distribution hit(std::min(1.0, rate_per_mm * g.spacing_mm()));
  for (double& x : f) x = hit(rng) ? 1.0 : 0.0;
  return f;
}

// Per-dataset mixing of the two geometry signals into latent channels.
struct LatentMixing {
  std::vector<double> narrowing_gain, area_gain, offset;
};

inline LatentMixing latent_mixing(std::uint64_t seed, std::size_t channels) {
  std::mt19937_64 rng = artery_stream(seed, ~std::uint64_t{0}, 0x1a7e);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentMixing m;
  for (std::size_t c = 0; c < channels; ++c) {
    m.narrowing_gain.push_back(3.0 * normal(rng));
    m.area_gain.push_back(normal(rng));
    m.offset.push_back(0.3 * normal(rng));
  }
  return m;
}

}  // namespace detail

// Latent channels: smoothed noisy nonlinear encodings of the local
// narrowing fraction (a plaque proxy) and of the log lumen area.
inline std::vector<std::vector<double>> synthesize_latent(std::span<const double> lumen, std::span<const double> reference,
                                                          const detail::LatentMixing& mix, double noise, std::size_t smoothing,
                                                          std::mt19937_64& rng) {
  const std::size_t n = lumen.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> out(mix.offset.size(), std::vector<double>(n));
  const double log_prox = std::log(reference[0]);
  for (std::size_t c = 0; c < out.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double narrowing = 1.0 - lumen[i] / reference[i];
      const double area = std::log(lumen[i]) - log_prox;
      out[c][i] = std::tanh(mix.narrowing_gain[c] * narrowing + mix.area_gain[c] * area + mix.offset[c]) + noise * normal(rng);
    }
    out[c] = detail::moving_average(out[c], smoothing);
  }
  return out;
}

struct SyntheticArtery {
  ArteryRecord record;
  std::vector<LesionSpec> lesions;
  DropProfile oracle_drops;  // before misregistration and masking
};

struct SyntheticDataset {
  std::vector<ArteryRecord> records;
  OracleConfig oracle;
  std::uint64_t seed = 0;
};

// Lesion kinds assigned by exact count: round(n * focal_fraction) focal
// arteries at seeded positions.
inline std::vector<LesionClass> assign_lesion_kinds(const SyntheticConfig& cfg) {
  const auto n_focal = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_arteries) * cfg.focal_fraction));
  std::vector<LesionClass> kinds(cfg.n_arteries, LesionClass::diffuse);
  std::fill(kinds.begin(), kinds.begin() + static_cast<std::ptrdiff_t>(n_focal), LesionClass::focal);
  std::mt19937_64 rng = detail::artery_stream(cfg.seed, ~std::uint64_t{0}, 0x6b1d);
  std::shuffle(kinds.begin(), kinds.end(), rng);
  return kinds;
}

inline SyntheticArtery gen_artery(const SyntheticConfig& cfg, const OracleConfig& oracle, const detail::LatentMixing& mix,
                                  std::size_t index, LesionClass kind) {
  std::mt19937_64 rng = detail::artery_stream(cfg.seed, index, 0xa27e);
  const double length = detail::uniform(rng, cfg.length_mm);
  const auto n = static_cast<std::size_t>(std::llround(length / cfg.spacing_mm)) + 1;
  const Grid g(cfg.spacing_mm, n);
  const double prox = detail::uniform(rng, cfg.proximal_area_mm2);
  const double taper = detail::uniform(rng, cfg.taper_fraction);
  const std::vector<double> reference = baseline_lumen(g, prox, taper);

  std::size_t n_lesions = cfg.min_lesions;
  if (cfg.max_lesions > cfg.min_lesions) {
    if (cfg.max_lesions == 2 && cfg.min_lesions == 1) {
      n_lesions = std::bernoulli_distribution(cfg.two_lesion_probability)(rng) ? 2 : 1;
    } else {
      n_lesions = std::uniform_int_distribution<std::size_t>(cfg.min_lesions, cfg.max_lesions)(rng);
    }
  }

  // Lesions occupy disjoint slots over the proximal 80 % of the vessel.
  std::vector<LesionSpec> lesions;
  const double start = 5.0;
  const double span = 0.8 * g.length_mm() - start;
  double distal_edge = 0.0;
  for (std::size_t k = 0; k < n_lesions; ++k) {
    const double slot = span / static_cast<double>(n_lesions);
    const double lo = start + slot * static_cast<double>(k);
    LesionSpec l;
    l.kind = kind;
    if (kind == LesionClass::focal) {
      l.extent_mm = detail::uniform(rng, cfg.focal_extent_mm);
      l.severity = detail::uniform(rng, cfg.focal_severity);
    } else {
      l.extent_mm = detail::uniform(rng, cfg.diffuse_extent_fraction) * slot;
      l.severity = detail::uniform(rng, cfg.diffuse_severity);
    }
    l.extent_mm = std::min(l.extent_mm, slot);
    l.center_mm = detail::uniform(rng, Range{lo + l.extent_mm / 2.0, lo + slot - l.extent_mm / 2.0});
    distal_edge = std::max(distal_edge, l.center_mm + l.extent_mm / 2.0);
    lesions.push_back(l);
  }

  const std::vector<double> lumen = gen_lumen_profile(g, reference, lesions);
  const DropProfile drops = oracle_ffr(lumen, reference, g, oracle);

  ArteryRecord r;
  r.id = "artery_" + std::to_string(index);
  r.characteristics.grid = g;
  r.characteristics.lumen_area = lumen;
  r.characteristics.bifurcation = detail::event_flags(rng, g, cfg.bifurcation_rate_per_mm);
  r.characteristics.side_branch = detail::event_flags(rng, g, cfg.side_branch_rate_per_mm);
  r.characteristics.latent = synthesize_latent(lumen, reference, mix, cfg.latent_noise, cfg.latent_smoothing, rng);

  const double end_mm = distal_edge + detail::uniform(rng, cfg.measurement_margin_mm);
  auto end = static_cast<std::size_t>(std::llround(end_mm / g.spacing_mm()));
  end = std::clamp<std::size_t>(end, (n - 1) / 2, n - 1);
  r.measurement_end_index = end;
  r.label = n_lesions == 0 ? LesionClass::diffuse : kind;
  r.ref_drops = drops;

  const double shift = cfg.misregistration_max_mm > 0.0
                           ? std::uniform_real_distribution<double>(-cfg.misregistration_max_mm, cfg.misregistration_max_mm)(rng)
                           : 0.0;
  r = inject_misregistration(r, shift, cfg.misregistration_max_mm);
  // The stored reference is what survives a write/read cycle: masked to the
  // measured extent, starting at FFR 1.0 at the ostium.
  r.ref_drops = reference_drops_from_curve(drops_to_ffr(mask_distal(*r.ref_drops, end)));
  r.validate();
  return {std::move(r), std::move(lesions), drops};
}

inline SyntheticDataset gen_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.seed = cfg.seed;
  ds.oracle = calibrated_oracle(cfg);
  const auto mix = detail::latent_mixing(cfg.seed, cfg.n_latent);
  const auto kinds = assign_lesion_kinds(cfg);
  ds.records.reserve(cfg.n_arteries);
  for (std::size_t i = 0; i < cfg.n_arteries; ++i) ds.records.push_back(gen_artery(cfg, ds.oracle, mix, i, kinds[i]).record);
  return ds;
}

// Appends `extra` latent channels of smoothed noise that carry no geometry;
// stands in for encodings that describe image background.
inline std::vector<ArteryRecord> append_background_latent(std::span<const ArteryRecord> records, std::size_t extra,
                                                          std::size_t smoothing, std::uint64_t seed) {
  std::vector<ArteryRecord> out(records.begin(), records.end());
  for (std::size_t a = 0; a < out.size(); ++a) {
    std::mt19937_64 rng = detail::artery_stream(seed, a, 0xb6c0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto& latent = out[a].characteristics.latent;
    const std::size_t n = out[a].grid().n_points();
    for (std::size_t c = 0; c < extra; ++c) {
      std::vector<double> ch(n);
      for (double& x : ch) x = normal(rng);
      latent.push_back(detail::moving_average(ch, smoothing));
    }
  }
  return out;
}

}  // namespace ffr
