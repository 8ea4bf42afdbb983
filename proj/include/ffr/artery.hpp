#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffr/curve.hpp"

namespace ffr {

enum class LesionClass { focal, diffuse };

inline const char* to_string(LesionClass c) { return c == LesionClass::focal ? "focal" : "diffuse"; }

inline LesionClass lesion_class_from_string(const std::string& s) {
  if (s == "focal") return LesionClass::focal;
  if (s == "diffuse") return LesionClass::diffuse;
  throw std::invalid_argument("unknown lesion label '" + s + "'");
}

inline constexpr std::size_t kDefaultLatentChannels = 32;

// Per-point artery characteristics. `latent` is channel-major: latent[c][i].
struct CharacteristicSet {
  Grid grid;
  std::vector<double> lumen_area;
  std::vector<double> bifurcation;
  std::vector<double> side_branch;
  std::vector<std::vector<double>> latent;

  void validate() const {
    detail::require_length(grid, lumen_area.size(), "lumen_area");
    detail::require_length(grid, bifurcation.size(), "bifurcation");
    detail::require_length(grid, side_branch.size(), "side_branch");
    for (const auto& ch : latent) detail::require_length(grid, ch.size(), "latent channel");
    detail::require_finite(lumen_area, "lumen_area");
    detail::require_finite(bifurcation, "bifurcation");
    detail::require_finite(side_branch, "side_branch");
    for (const auto& ch : latent) detail::require_finite(ch, "latent channel");
  }
};

struct ArteryRecord {
  std::string id;
  CharacteristicSet characteristics;
  // Reference drops on the characteristics grid; zero distal to the
  // measurement end. Absent when the artery has no pullback.
  std::optional<DropProfile> ref_drops;
  std::size_t measurement_end_index = 0;
  std::optional<LesionClass> label;
  double misregistration_mm = 0.0;

  const Grid& grid() const { return characteristics.grid; }

  void validate() const {
    characteristics.validate();
    if (measurement_end_index == 0 || measurement_end_index >= grid().n_points()) {
      throw std::invalid_argument("artery '" + id + "': measurement_end_index " + std::to_string(measurement_end_index) +
                                  " must lie in (0, n_points)");
    }
    if (ref_drops && !(ref_drops->grid == grid())) {
      throw std::invalid_argument("artery '" + id + "': reference grid differs from characteristics grid");
    }
  }
};

// Standardization statistics for the continuous channels. Channel 0 is the
// percentage-difference lumen channel; channels 1.. are latent features.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t n_latent() const { return mean.empty() ? 0 : mean.size() - 1; }
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

// Network-ready artery: standardized channels on the native grid.
struct NormalizedArtery {
  std::string id;
  Grid grid;
  std::vector<double> lumen_pct;                 // standardized pct_diff of the raw lumen area
  std::vector<std::vector<double>> latent;       // standardized latent channels
  std::vector<double> bifurcation;               // capped at 1
  std::vector<double> side_branch;               // capped at 1
  std::optional<DropProfile> ref_drops;
  std::size_t measurement_end_index = 0;
  std::optional<LesionClass> label;
};

struct NormalizationResult {
  std::vector<NormalizedArtery> arteries;
  NormalizationStats stats;
};

namespace detail {

inline std::vector<double> raw_continuous_channel(const ArteryRecord& r, std::size_t ch) {
  if (ch == 0) return pct_diff(r.characteristics.lumen_area);
  return r.characteristics.latent.at(ch - 1);
}

inline std::vector<double> capped(const std::vector<double>& v) {
  std::vector<double> out(v);
  for (double& x : out) x = std::min(x, 1.0);
  return out;
}

}  // namespace detail

inline NormalizationStats compute_normalization_stats(std::span<const ArteryRecord> training) {
  if (training.empty()) throw std::invalid_argument("cannot compute normalization statistics of an empty set");
  const std::size_t n_latent = training.front().characteristics.latent.size();
  const std::size_t n_ch = n_latent + 1;
  NormalizationStats s;
  s.mean.assign(n_ch, 0.0);
  s.stddev.assign(n_ch, 0.0);
  for (std::size_t ch = 0; ch < n_ch; ++ch) {
    // Two-pass mean / variance over every point of every training artery.
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : training) {
      if (r.characteristics.latent.size() != n_latent) {
        throw std::invalid_argument("artery '" + r.id + "' has a different latent channel count");
      }
      for (double x : detail::raw_continuous_channel(r, ch)) sum += x;
      count += r.grid().n_points();
    }
    const double mu = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto& r : training) {
      for (double x : detail::raw_continuous_channel(r, ch)) ss += (x - mu) * (x - mu);
    }
    const double var = ss / static_cast<double>(count);
    if (!(var > 0.0)) {
      throw std::invalid_argument("zero-variance characteristic channel " + std::to_string(ch) +
                                  (ch == 0 ? " (lumen pct_diff)" : " (latent)"));
    }
    s.mean[ch] = mu;
    s.stddev[ch] = std::sqrt(var);
  }
  return s;
}

inline NormalizedArtery apply_normalization(const ArteryRecord& r, const NormalizationStats& s) {
  r.validate();
  if (r.characteristics.latent.size() != s.n_latent()) {
    throw std::invalid_argument("artery '" + r.id + "' has " + std::to_string(r.characteristics.latent.size()) +
                                " latent channels, statistics expect " + std::to_string(s.n_latent()));
  }
  NormalizedArtery a;
  a.id = r.id;
  a.grid = r.grid();
  a.lumen_pct = pct_diff(r.characteristics.lumen_area);
  for (double& x : a.lumen_pct) x = (x - s.mean[0]) / s.stddev[0];
  a.latent = r.characteristics.latent;
  for (std::size_t c = 0; c < a.latent.size(); ++c) {
    for (double& x : a.latent[c]) x = (x - s.mean[c + 1]) / s.stddev[c + 1];
  }
  a.bifurcation = detail::capped(r.characteristics.bifurcation);
  a.side_branch = detail::capped(r.characteristics.side_branch);
  a.ref_drops = r.ref_drops;
  a.measurement_end_index = r.measurement_end_index;
  a.label = r.label;
  return a;
}

// Without `stats`, the records are treated as a training set and their own
// statistics are used; with `stats`, those are applied unchanged.
inline NormalizationResult normalize_characteristics(std::span<const ArteryRecord> records,
                                                     std::optional<NormalizationStats> stats = std::nullopt) {
  NormalizationResult out;
  out.stats = stats ? std::move(*stats) : compute_normalization_stats(records);
  out.arteries.reserve(records.size());
  for (const auto& r : records) out.arteries.push_back(apply_normalization(r, out.stats));
  return out;
}

// Renormalizes an ingested reference so the curve starts at 1.0 at the ostium.
inline DropProfile reference_drops_from_curve(const PullbackCurve& c) {
  DropProfile d = ffr_to_drops(c);
  d.drops[0] = 0.0;
  return d;
}

}  // namespace ffr
