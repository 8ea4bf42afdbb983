#pragma once

// Curve-level evaluation: area under the pullback curve, the pullback
// pressure gradient (PPG) index, focal/diffuse classification and agreement
// statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ffr/artery.hpp"
#include "ffr/curve.hpp"

namespace ffr {

struct PPGConfig {
  double window_mm = 20.0;
  double disease_rate_per_mm = 0.0015;
  // Fixed threshold; unset means the median of the reference PPG values.
  std::optional<double> classification_threshold;
  double resample_mm = 1.0;

  void validate() const {
    if (!(window_mm > 0.0)) throw std::invalid_argument("ppg.window_mm must be positive");
    if (!(disease_rate_per_mm > 0.0)) throw std::invalid_argument("ppg.disease_rate_per_mm must be positive");
    if (classification_threshold && !(*classification_threshold > 0.0)) {
      throw std::invalid_argument("ppg.classification_threshold must be positive");
    }
    if (!(resample_mm > 0.0)) throw std::invalid_argument("ppg.resample_mm must be positive");
  }
  friend bool operator==(const PPGConfig&, const PPGConfig&) = default;
};

inline constexpr double kAupcSpacingMm = 10.0;

// Sum of the curve sampled every 10 mm, start point included.
inline double aupc(const PullbackCurve& c) {
  const PullbackCurve r = resample_linear(c, kAupcSpacingMm);
  double s = 0.0;
  for (double v : r.ffr) s += v;
  return s;
}

// PPG = (max 20 mm window drop / total drop + 1 - diseased length / total length) / 2
// on the curve resampled to cfg.resample_mm. Empty when the curve has no
// net drop (a healthy vessel has no PPG).
inline std::optional<double> ppg_index(const PullbackCurve& c, const PPGConfig& cfg = {}) {
  const PullbackCurve r = resample_linear(c, cfg.resample_mm);
  const std::vector<double>& f = r.ffr;
  const double total_drop = f.front() - *std::min_element(f.begin(), f.end());
  if (!(total_drop > 0.0)) return std::nullopt;

  const std::size_t segments = f.size() - 1;
  const auto w = static_cast<std::size_t>(std::llround(cfg.window_mm / cfg.resample_mm));
  double max_window = 0.0;
  if (w >= segments) {
    max_window = f.front() - f.back();
  } else {
    max_window = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s + w <= segments; ++s) max_window = std::max(max_window, f[s] - f[s + w]);
  }
  const double threshold = cfg.disease_rate_per_mm * cfg.resample_mm;
  std::size_t diseased = 0;
  for (std::size_t k = 0; k < segments; ++k) {
    if (f[k] - f[k + 1] >= threshold) ++diseased;
  }
  const double diseased_fraction = static_cast<double>(diseased) / static_cast<double>(segments);
  return 0.5 * (max_window / total_drop + (1.0 - diseased_fraction));
}

// Focal iff strictly above the threshold.
inline std::optional<LesionClass> classify_focal(std::optional<double> ppg, double threshold) {
  if (!ppg) return std::nullopt;
  return *ppg > threshold ? LesionClass::focal : LesionClass::diffuse;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct ConfusionStats {
  std::size_t true_pos = 0, false_neg = 0, true_neg = 0, false_pos = 0;
  double accuracy = 0.0;
  std::optional<double> sensitivity;  // focal is the positive class
  std::optional<double> specificity;
};

// pairs: (predicted, reference).
inline ConfusionStats confusion_stats(std::span<const std::pair<LesionClass, LesionClass>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("confusion_stats of an empty set");
  ConfusionStats s;
  for (const auto& [pred, ref] : pairs) {
    if (ref == LesionClass::focal) {
      (pred == LesionClass::focal ? s.true_pos : s.false_neg)++;
    } else {
      (pred == LesionClass::diffuse ? s.true_neg : s.false_pos)++;
    }
  }
  s.accuracy = static_cast<double>(s.true_pos + s.true_neg) / static_cast<double>(pairs.size());
  if (s.true_pos + s.false_neg > 0) s.sensitivity = static_cast<double>(s.true_pos) / static_cast<double>(s.true_pos + s.false_neg);
  if (s.true_neg + s.false_pos > 0) s.specificity = static_cast<double>(s.true_neg) / static_cast<double>(s.true_neg + s.false_pos);
  return s;
}

struct BlandAltman {
  double bias = 0.0;
  double lower_limit = 0.0;
  double upper_limit = 0.0;
  double sd = 0.0;
};

// bias = mean(pred - ref); limits = bias -/+ 1.96 sd with the sample sd.
inline BlandAltman bland_altman(std::span<const double> pred, std::span<const double> ref) {
  if (pred.size() != ref.size()) throw std::invalid_argument("bland_altman: sample counts differ");
  if (pred.size() < 2) throw std::invalid_argument("bland_altman needs at least two pairs");
  const double n = static_cast<double>(pred.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) mean += pred[i] - ref[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - ref[i] - mean;
    ss += d * d;
  }
  BlandAltman b;
  b.bias = mean;
  b.sd = std::sqrt(ss / (n - 1.0));
  b.lower_limit = mean - 1.96 * b.sd;
  b.upper_limit = mean + 1.96 * b.sd;
  return b;
}

// Sum over bins of min(p_b, q_b) for normalized hard histograms on [0, 1];
// values outside the range fall into the edge bins.
inline double histogram_overlap(std::span<const double> pred, std::span<const double> ref, double bin_width = 0.05) {
  if (pred.empty() || ref.empty()) throw std::invalid_argument("histogram_overlap needs nonempty samples");
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw std::invalid_argument("histogram_overlap: bad bin width");
  const auto bins = static_cast<std::size_t>(std::llround(std::ceil(1.0 / bin_width - 1e-9)));
  auto hist = [&](std::span<const double> v) {
    std::vector<double> h(bins, 0.0);
    for (double x : v) {
      const double t = std::clamp(x, 0.0, 1.0) / bin_width;
      const auto b = std::min(bins - 1, static_cast<std::size_t>(std::floor(t + 1e-9)));
      h[b] += 1.0 / static_cast<double>(v.size());
    }
    return h;
  };
  const auto p = hist(pred), q = hist(ref);
  double s = 0.0;
  for (std::size_t b = 0; b < bins; ++b) s += std::min(p[b], q[b]);
  return s;
}

// Predicted and reference curves of one artery over its measured extent.
struct ArteryCurves {
  std::string id;
  PullbackCurve pred;
  PullbackCurve ref;
  std::optional<LesionClass> label;
  int fold = -1;
};

struct ArteryMetrics {
  std::string id;
  int fold = -1;
  double aupc_pred = 0.0, aupc_ref = 0.0;
  double min_ffr_pred = 1.0, min_ffr_ref = 1.0;
  std::optional<double> ppg_pred, ppg_ref;
  std::optional<LesionClass> class_pred, class_ref;
  double threshold = 0.0;
  std::optional<LesionClass> label;
};

struct MetricsSummary {
  std::size_t n_arteries = 0;
  std::size_t n_classified = 0;
  std::size_t n_skipped = 0;
  double aupc_mad = 0.0;
  double min_ffr_mad = 0.0;
  ConfusionStats confusion;
  std::optional<BlandAltman> ppg_agreement;
  std::optional<BlandAltman> ffr_agreement;  // all measured points pooled
  double histogram_overlap = 0.0;
};

struct MetricsReport {
  std::vector<ArteryMetrics> rows;
  MetricsSummary summary;
  std::vector<std::string> skipped;  // ids without a usable reference
};

inline ArteryMetrics evaluate_curves(const ArteryCurves& c, const PPGConfig& cfg, double threshold) {
  ArteryMetrics m;
  m.id = c.id;
  m.fold = c.fold;
  m.label = c.label;
  m.aupc_pred = aupc(c.pred);
  m.aupc_ref = aupc(c.ref);
  m.min_ffr_pred = min_ffr(c.pred);
  m.min_ffr_ref = min_ffr(c.ref);
  m.ppg_pred = ppg_index(c.pred, cfg);
  m.ppg_ref = ppg_index(c.ref, cfg);
  m.threshold = threshold;
  m.class_pred = classify_focal(m.ppg_pred, threshold);
  m.class_ref = classify_focal(m.ppg_ref, threshold);
  return m;
}

// Median reference PPG over a set of curves (healthy curves excluded).
inline double reference_ppg_median(std::span<const PullbackCurve> refs, const PPGConfig& cfg) {
  std::vector<double> v;
  for (const auto& r : refs) {
    if (auto p = ppg_index(r, cfg)) v.push_back(*p);
  }
  if (v.empty()) throw std::invalid_argument("no reference curve has a defined PPG index");
  return median(std::move(v));
}

// Aggregates recomputed from per-artery rows plus the pooled point values.
inline MetricsSummary summarize(std::span<const ArteryMetrics> rows, std::span<const ArteryCurves> curves) {
  MetricsSummary s;
  s.n_arteries = rows.size();
  if (rows.empty()) return s;
  std::vector<std::pair<LesionClass, LesionClass>> pairs;
  std::vector<double> ppg_p, ppg_r;
  for (const auto& r : rows) {
    s.aupc_mad += std::abs(r.aupc_pred - r.aupc_ref);
    s.min_ffr_mad += std::abs(r.min_ffr_pred - r.min_ffr_ref);
    if (r.class_pred && r.class_ref) pairs.emplace_back(*r.class_pred, *r.class_ref);
    if (r.ppg_pred && r.ppg_ref) {
      ppg_p.push_back(*r.ppg_pred);
      ppg_r.push_back(*r.ppg_ref);
    }
  }
  s.aupc_mad /= static_cast<double>(rows.size());
  s.min_ffr_mad /= static_cast<double>(rows.size());
  s.n_classified = pairs.size();
  if (!pairs.empty()) s.confusion = confusion_stats(pairs);
  if (ppg_p.size() >= 2) s.ppg_agreement = bland_altman(ppg_p, ppg_r);
  std::vector<double> pts_p, pts_r;
  for (const auto& c : curves) {
    const std::size_t n = std::min(c.pred.size(), c.ref.size());
    pts_p.insert(pts_p.end(), c.pred.ffr.begin(), c.pred.ffr.begin() + static_cast<std::ptrdiff_t>(n));
    pts_r.insert(pts_r.end(), c.ref.ffr.begin(), c.ref.ffr.begin() + static_cast<std::ptrdiff_t>(n));
  }
  if (pts_p.size() >= 2) {
    s.ffr_agreement = bland_altman(pts_p, pts_r);
    s.histogram_overlap = histogram_overlap(pts_p, pts_r);
  }
  return s;
}

}  // namespace ffr
