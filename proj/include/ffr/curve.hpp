#pragma once

// Uniform-grid FFR curves and per-point drop profiles, plus the deterministic
// transforms between them. Everything here is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ffr {

class Grid {
 public:
  Grid() = default;
  Grid(double spacing_mm, std::size_t n_points) : spacing_mm_(spacing_mm), n_points_(n_points) {
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) {
      throw std::invalid_argument("grid spacing must be positive, got " + std::to_string(spacing_mm));
    }
    if (n_points < 2) {
      throw std::invalid_argument("grid needs at least 2 points, got " + std::to_string(n_points));
    }
  }

  double spacing_mm() const { return spacing_mm_; }
  std::size_t n_points() const { return n_points_; }
  double length_mm() const { return spacing_mm_ * static_cast<double>(n_points_ - 1); }
  double position_mm(std::size_t i) const { return spacing_mm_ * static_cast<double>(i); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  double spacing_mm_ = 0.5;
  std::size_t n_points_ = 2;
};

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " contains non-finite values");
  }
}

inline void require_length(const Grid& g, std::size_t n, const char* what) {
  if (g.n_points() != n) {
    throw std::invalid_argument(std::string(what) + " length " + std::to_string(n) +
                                " does not match grid of " + std::to_string(g.n_points()) + " points");
  }
}

}  // namespace detail

// Per-point FFR drops; the running sum from the ostium defines the curve.
struct DropProfile {
  Grid grid;
  std::vector<double> drops;

  DropProfile() = default;
  DropProfile(Grid g, std::vector<double> d) : grid(g), drops(std::move(d)) {
    detail::require_length(grid, drops.size(), "drop profile");
    detail::require_finite(drops, "drop profile");
  }

  std::size_t size() const { return drops.size(); }
  friend bool operator==(const DropProfile&, const DropProfile&) = default;
};

struct PullbackCurve {
  Grid grid;
  std::vector<double> ffr;

  PullbackCurve() = default;
  PullbackCurve(Grid g, std::vector<double> v) : grid(g), ffr(std::move(v)) {
    detail::require_length(grid, ffr.size(), "pullback curve");
    detail::require_finite(ffr, "pullback curve");
  }

  std::size_t size() const { return ffr.size(); }
  friend bool operator==(const PullbackCurve&, const PullbackCurve&) = default;
};

inline PullbackCurve drops_to_ffr(const DropProfile& d) {
  std::vector<double> out(d.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    acc += d.drops[i];
    out[i] = 1.0 - acc;
  }
  return {d.grid, std::move(out)};
}

inline DropProfile ffr_to_drops(const PullbackCurve& c) {
  std::vector<double> out(c.size());
  // Differences of the curve rather than of the running sum, so the round
  // trip is exact up to one rounding per element.
  out[0] = 1.0 - c.ffr[0];
  for (std::size_t i = 1; i < c.size(); ++i) out[i] = c.ffr[i - 1] - c.ffr[i];
  return {c.grid, std::move(out)};
}

// Relative step of the lumen area: out[i] = 1 - a[i]/a[i-1], out[0] = 0.
inline std::vector<double> pct_diff(std::span<const double> lumen_area) {
  for (std::size_t i = 0; i < lumen_area.size(); ++i) {
    if (!(lumen_area[i] > 0.0) || !std::isfinite(lumen_area[i])) {
      throw std::invalid_argument("lumen area must be strictly positive (index " + std::to_string(i) + ")");
    }
  }
  std::vector<double> out(lumen_area.size(), 0.0);
  for (std::size_t i = 1; i < lumen_area.size(); ++i) out[i] = 1.0 - lumen_area[i] / lumen_area[i - 1];
  return out;
}

inline std::size_t pooled_length(std::size_t n, std::size_t kernel) { return (n + kernel - 1) / kernel; }

// Non-overlapping window means; a trailing partial window is averaged over
// its actual length. Output spacing is kernel times the input spacing.
inline DropProfile avg_pool_drops(const DropProfile& d, std::size_t kernel = 4) {
  if (kernel == 0) throw std::invalid_argument("pooling kernel must be >= 1");
  const std::size_t m = pooled_length(d.size(), kernel);
  if (m < 2) throw std::invalid_argument("pooled profile would have fewer than 2 points");
  std::vector<double> out(m, 0.0);
  for (std::size_t w = 0; w < m; ++w) {
    const std::size_t lo = w * kernel;
    const std::size_t hi = std::min(lo + kernel, d.size());
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += d.drops[i];
    out[w] = s / static_cast<double>(hi - lo);
  }
  return {Grid(d.grid.spacing_mm() * static_cast<double>(kernel), m), std::move(out)};
}

// Window sums instead of means: the supervision target whose running sum
// samples the reference curve at the coarse spacing.
inline DropProfile sum_pool_drops(const DropProfile& d, std::size_t kernel = 4) {
  DropProfile p = avg_pool_drops(d, kernel);
  for (std::size_t w = 0; w < p.size(); ++w) {
    const std::size_t lo = w * kernel;
    const std::size_t hi = std::min(lo + kernel, d.size());
    p.drops[w] *= static_cast<double>(hi - lo);
  }
  return p;
}

inline DropProfile mask_distal(const DropProfile& d, std::size_t end_index) {
  if (end_index >= d.size()) {
    throw std::out_of_range("mask end index " + std::to_string(end_index) + " outside profile of " +
                            std::to_string(d.size()) + " points");
  }
  DropProfile out = d;
  std::fill(out.drops.begin() + static_cast<std::ptrdiff_t>(end_index) + 1, out.drops.end(), 0.0);
  return out;
}

inline double min_ffr(const PullbackCurve& c) {
  if (c.ffr.empty()) throw std::invalid_argument("min_ffr of empty curve");
  return *std::min_element(c.ffr.begin(), c.ffr.end());
}

// Linear interpolation at 0, s, 2s, ... up to the last position that fits in
// the curve; no extrapolation past the final sample.
inline PullbackCurve resample_linear(const PullbackCurve& c, double new_spacing_mm) {
  if (!(new_spacing_mm > 0.0)) throw std::invalid_argument("resample spacing must be positive");
  const double total = c.grid.length_mm();
  // Tolerance absorbs representation error in total/new_spacing for exact multiples.
  const double ratio = total / new_spacing_mm;
  if (ratio < 1.0 - 1e-9) {
    throw std::invalid_argument("curve of " + std::to_string(total) + " mm is shorter than one " +
                                std::to_string(new_spacing_mm) + " mm step");
  }
  const auto steps = static_cast<std::size_t>(std::floor(ratio + 1e-9));
  std::vector<double> out(steps + 1);
  const double h = c.grid.spacing_mm();
  const std::size_t last = c.size() - 1;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double u = std::min(static_cast<double>(k) * new_spacing_mm / h, static_cast<double>(last));
    auto i = static_cast<std::size_t>(std::floor(u));
    if (i >= last) {
      out[k] = c.ffr[last];
      continue;
    }
    const double t = u - static_cast<double>(i);
    out[k] = t == 0.0 ? c.ffr[i] : c.ffr[i] + t * (c.ffr[i + 1] - c.ffr[i]);
  }
  return {Grid(new_spacing_mm, out.size()), std::move(out)};
}

// Linear interpolation of `c` at every point of `g`; positions past the last
// sample take the final value.
inline PullbackCurve interpolate_onto(const PullbackCurve& c, const Grid& g) {
  std::vector<double> out(g.n_points());
  const double h = c.grid.spacing_mm();
  const std::size_t last = c.size() - 1;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double u = std::min(g.position_mm(k) / h, static_cast<double>(last));
    const auto i = static_cast<std::size_t>(std::floor(u));
    if (i >= last) {
      out[k] = c.ffr[last];
      continue;
    }
    const double t = u - static_cast<double>(i);
    out[k] = c.ffr[i] + t * (c.ffr[i + 1] - c.ffr[i]);
  }
  return {g, std::move(out)};
}

// First `n` points of a curve (n >= 2).
inline PullbackCurve truncate(const PullbackCurve& c, std::size_t n) {
  if (n < 2 || n > c.size()) throw std::out_of_range("truncate length out of range");
  return {Grid(c.grid.spacing_mm(), n), std::vector<double>(c.ffr.begin(), c.ffr.begin() + static_cast<std::ptrdiff_t>(n))};
}

}  // namespace ffr
