#pragma once

// Training objectives on supervision-grid drop profiles. Each loss has a tape
// form (differentiable, used by the trainer) and a DropProfile convenience
// form that evaluates the same graph on a scratch tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffr/autodiff.hpp"
#include "ffr/curve.hpp"

namespace ffr {

struct HistogramConfig {
  std::size_t n_bins = 32;
  double sigma = 0.1;
  double range_min = -0.1;
  double range_max = 0.5;
  // Additive floor of the bin weight max(center, 0) + floor_weight.
  double floor_weight = 0.01;

  void validate() const {
    if (n_bins < 2) throw std::invalid_argument("histogram needs at least 2 bins");
    if (!(sigma > 0.0)) throw std::invalid_argument("histogram sigma must be positive");
    if (!(range_max > range_min)) throw std::invalid_argument("histogram range must be increasing");
    if (!(floor_weight >= 0.0)) throw std::invalid_argument("histogram floor weight must be >= 0");
    if (range_max <= 0.0 && floor_weight == 0.0) throw std::invalid_argument("histogram bin weights are all zero");
  }

  // Equidistant, both range ends included.
  std::vector<double> centers() const {
    std::vector<double> c(n_bins);
    const double step = (range_max - range_min) / static_cast<double>(n_bins - 1);
    for (std::size_t b = 0; b < n_bins; ++b) c[b] = range_min + step * static_cast<double>(b);
    return c;
  }

  std::vector<double> weights() const {
    std::vector<double> w = centers();
    for (double& x : w) x = std::max(x, 0.0) + floor_weight;
    return w;
  }

  friend bool operator==(const HistogramConfig&, const HistogramConfig&) = default;
};

struct LossWeights {
  double emd = 0.1;
  double hist = 5.0;
  double mono = 20.0;
  double mae = 1.0;

  void validate() const {
    if (emd < 0 || hist < 0 || mono < 0 || mae < 0) throw std::invalid_argument("loss weights must be >= 0");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Which terms enter total_loss (the ablation switches).
struct LossTerms {
  bool use_emd = true;
  bool use_mae = false;
  bool use_hist = true;
  bool use_mono = true;
  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

namespace detail {

inline void require_matching(const ad::Var& pred, const ad::Var& ref, const char* what) {
  if (pred.channels() != 1 || ref.channels() != 1 || pred.length() != ref.length()) {
    throw std::invalid_argument(std::string(what) + ": grid mismatch (" + ad::shape_string(pred.value()) + " vs " +
                                ad::shape_string(ref.value()) + ")");
  }
}

inline void require_matching(const DropProfile& p, const DropProfile& r, const char* what) {
  if (!(p.grid == r.grid)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

}  // namespace detail

// sum_j | sum_{i<=j} (pred_i - ref_i) |: the L1 distance between the two curves.
inline ad::Var emd_forward_loss(const ad::Var& pred, const ad::Var& ref) {
  detail::require_matching(pred, ref, "emd_forward_loss");
  return ad::sum(ad::abs(ad::cumsum(ad::sub(pred, ref))));
}

// Same accumulation, running from the distal end toward the ostium.
inline ad::Var emd_reverse_loss(const ad::Var& pred, const ad::Var& ref) {
  detail::require_matching(pred, ref, "emd_reverse_loss");
  return ad::sum(ad::abs(ad::cumsum(ad::reverse(ad::sub(pred, ref)))));
}

inline ad::Var emd_symmetric_loss(const ad::Var& pred, const ad::Var& ref) {
  detail::require_matching(pred, ref, "emd_symmetric_loss");
  const ad::Var diff = ad::sub(pred, ref);
  const ad::Var fwd = ad::sum(ad::abs(ad::cumsum(diff)));
  const ad::Var rev = ad::sum(ad::abs(ad::cumsum(ad::reverse(diff))));
  return ad::add(fwd, rev);
}

inline ad::Var soft_histogram(const ad::Var& drops, const HistogramConfig& cfg) {
  const std::vector<double> c = cfg.centers();
  return ad::soft_histogram(drops, c, cfg.sigma);
}

// sum_b w_b |h_pred(b) - h_ref(b)|
inline ad::Var histogram_loss(const ad::Var& pred, const ad::Var& ref, const HistogramConfig& cfg) {
  if (pred.channels() != 1 || ref.channels() != 1) throw std::invalid_argument("histogram_loss expects single-channel profiles");
  const ad::Var diff = ad::sub(soft_histogram(pred, cfg), soft_histogram(ref, cfg));
  return ad::sum(ad::mul_const(ad::abs(diff), ad::Tensor::row(cfg.weights())));
}

// |sum_i min(pred_i, 0)|
inline ad::Var monotonicity_penalty(const ad::Var& pred) { return ad::abs(ad::sum(ad::neg_part(pred))); }

inline ad::Var mae_loss(const ad::Var& pred, const ad::Var& ref) {
  detail::require_matching(pred, ref, "mae_loss");
  return ad::mean(ad::abs(ad::sub(pred, ref)));
}

struct LossComponents {
  double emd = 0.0;
  double mae = 0.0;
  double hist = 0.0;
  double mono = 0.0;
  double total = 0.0;
};

struct LossGraph {
  ad::Var total;
  LossComponents parts;  // unweighted values of the enabled terms
};

inline LossGraph total_loss(const ad::Var& pred, const ad::Var& ref, const LossWeights& w, const LossTerms& terms,
                            const HistogramConfig& cfg) {
  detail::require_matching(pred, ref, "total_loss");
  ad::Tape& tape = pred.tape();
  LossGraph g;
  g.total = tape.constant(ad::Tensor::scalar(0.0));
  auto add_term = [&](const ad::Var& term, double weight, double& slot) {
    slot = term.value().item();
    g.total = ad::add(g.total, ad::scale(term, weight));
  };
  if (terms.use_emd) add_term(emd_symmetric_loss(pred, ref), w.emd, g.parts.emd);
  if (terms.use_mae) add_term(mae_loss(pred, ref), w.mae, g.parts.mae);
  if (terms.use_hist) add_term(histogram_loss(pred, ref, cfg), w.hist, g.parts.hist);
  if (terms.use_mono) add_term(monotonicity_penalty(pred), w.mono, g.parts.mono);
  g.parts.total = g.total.value().item();
  return g;
}

// DropProfile conveniences (no gradients).
namespace eval {

template <typename LossFn>
double pairwise(const DropProfile& p, const DropProfile& r, const char* what, LossFn&& fn) {
  detail::require_matching(p, r, what);
  ad::Tape t;
  return fn(t.constant(ad::Tensor::row(p.drops)), t.constant(ad::Tensor::row(r.drops))).value().item();
}

inline double emd_forward(const DropProfile& p, const DropProfile& r) {
  return pairwise(p, r, "emd_forward_loss", [](auto a, auto b) { return emd_forward_loss(a, b); });
}
inline double emd_reverse(const DropProfile& p, const DropProfile& r) {
  return pairwise(p, r, "emd_reverse_loss", [](auto a, auto b) { return emd_reverse_loss(a, b); });
}
inline double emd_symmetric(const DropProfile& p, const DropProfile& r) {
  return pairwise(p, r, "emd_symmetric_loss", [](auto a, auto b) { return emd_symmetric_loss(a, b); });
}
inline double mae(const DropProfile& p, const DropProfile& r) {
  return pairwise(p, r, "mae_loss", [](auto a, auto b) { return mae_loss(a, b); });
}
inline double histogram(const DropProfile& p, const DropProfile& r, const HistogramConfig& cfg) {
  ad::Tape t;
  return histogram_loss(t.constant(ad::Tensor::row(p.drops)), t.constant(ad::Tensor::row(r.drops)), cfg).value().item();
}
inline std::vector<double> soft_histogram(const DropProfile& p, const HistogramConfig& cfg) {
  ad::Tape t;
  return ffr::soft_histogram(t.constant(ad::Tensor::row(p.drops)), cfg).value().data;
}
inline double monotonicity(const DropProfile& p) {
  ad::Tape t;
  return monotonicity_penalty(t.constant(ad::Tensor::row(p.drops))).value().item();
}
inline LossComponents total(const DropProfile& p, const DropProfile& r, const LossWeights& w, const LossTerms& terms,
                            const HistogramConfig& cfg) {
  detail::require_matching(p, r, "total_loss");
  ad::Tape t;
  return total_loss(t.constant(ad::Tensor::row(p.drops)), t.constant(ad::Tensor::row(r.drops)), w, terms, cfg).parts;
}

}  // namespace eval

}  // namespace ffr
