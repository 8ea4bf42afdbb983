#pragma once

// Self-contained verification suites: gradient checks of the network and the
// losses, and loss landscapes for a displaced single drop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ffr/gradcheck.hpp"
#include "ffr/losses.hpp"
#include "ffr/network.hpp"

namespace ffr {

struct CheckRow {
  std::string name;
  double value = 0.0;  // measured quantity
  double limit = 0.0;  // pass iff value < limit
  bool pass = false;
  std::string detail;
};

inline constexpr double kGradientTolerance = 1e-4;

struct GradientSuiteConfig {
  std::size_t seeds = 20;
  std::size_t n_points = 16;
  std::size_t n_latent = 3;
  std::size_t n_filters = 6;
  double h = 1e-6;
};

// Whole network (eval mode, every loss term on, non-zero output layer) and
// each loss separately, one row per seed.
inline std::vector<CheckRow> gradient_suite(const GradientSuiteConfig& g = {}) {
  std::vector<CheckRow> rows;
  auto add = [&](std::string name, const GradCheckResult& r) {
    rows.push_back({std::move(name), r.max_rel_error, kGradientTolerance, r.max_rel_error < kGradientTolerance,
                    r.worst + " analytic " + std::to_string(r.analytic) + " numeric " + std::to_string(r.numeric)});
  };
  LossSpec loss;
  loss.terms = {true, true, true, true};
  for (std::size_t s = 0; s < g.seeds; ++s) {
    NetworkConfig cfg;
    cfg.n_filters = g.n_filters;
    cfg.n_latent = g.n_latent;
    cfg.seed = s + 1;
    PullbackNet net(cfg, false);
    const GradCheckCase c = random_gradcheck_case(s + 1, g.n_points, g.n_latent, cfg.pool_kernel);
    add("network seed " + std::to_string(s + 1), check_network_gradients(net, c.artery, c.ref_2mm, loss, g.h));
  }

  const HistogramConfig hist;
  struct Named {
    const char* name;
    std::function<ad::Var(const ad::Var&, const ad::Var&)> f;
  };
  const std::vector<Named> losses{
      {"emd", [](const ad::Var& p, const ad::Var& r) { return emd_symmetric_loss(p, r); }},
      {"mae", [](const ad::Var& p, const ad::Var& r) { return mae_loss(p, r); }},
      {"hist", [&](const ad::Var& p, const ad::Var& r) { return histogram_loss(p, r, hist); }},
      {"mono", [](const ad::Var& p, const ad::Var&) { return monotonicity_penalty(p); }},
  };
  std::uniform_real_distribution<double> u(-0.1, 0.3);
  for (std::size_t s = 0; s < g.seeds; ++s) {
    std::mt19937_64 rng(1000 + s);
    ad::Tensor p(1, g.n_points), r(1, g.n_points);
    for (double& x : p.data) x = u(rng);
    for (double& x : r.data) x = u(rng);
    for (const auto& l : losses) {
      add(std::string(l.name) + " seed " + std::to_string(s + 1),
          check_gradients([&](ad::Tape&, std::span<const ad::Var> v) { return l.f(v[0], v[1]); }, {p, r}, g.h));
    }
  }
  return rows;
}

// A single drop at the ostium (reference) against the same drop moved k
// points distally, k = 0 .. n-1, on the supervision grid.
struct Landscape {
  double spacing_mm = 2.0;
  double drop = 0.3;
  std::vector<double> shift_mm, emd, mae, hist;
  double emd_no_drop = 0.0, mae_no_drop = 0.0;
};

inline Landscape loss_landscape(std::size_t n = 100, double drop = 0.3, double spacing_mm = 2.0,
                                const HistogramConfig& hist = {}) {
  const Grid g(spacing_mm, n);
  auto spike = [&](std::size_t at) {
    std::vector<double> d(n, 0.0);
    d[at] = drop;
    return DropProfile(g, std::move(d));
  };
  Landscape L;
  L.spacing_mm = spacing_mm;
  L.drop = drop;
  const DropProfile ref = spike(0);
  for (std::size_t k = 0; k < n; ++k) {
    const DropProfile p = spike(k);
    L.shift_mm.push_back(static_cast<double>(k) * spacing_mm);
    L.emd.push_back(eval::emd_symmetric(p, ref));
    L.mae.push_back(eval::mae(p, ref));
    L.hist.push_back(eval::histogram(p, ref, hist));
  }
  const DropProfile none(g, std::vector<double>(n, 0.0));
  L.emd_no_drop = eval::emd_symmetric(none, ref);
  L.mae_no_drop = eval::mae(none, ref);
  return L;
}

inline std::vector<CheckRow> landscape_checks(const Landscape& L, const HistogramConfig& hist = {}) {
  std::vector<CheckRow> rows;
  auto row = [&](std::string name, double value, double limit, std::string detail) {
    rows.push_back({std::move(name), value, limit, value < limit, std::move(detail)});
  };
  const std::size_t n = L.emd.size();

  std::size_t violations = 0;
  for (std::size_t k = 1; k < n; ++k) violations += !(L.emd[k] > L.emd[k - 1]);
  row("emd strictly increasing in shift", static_cast<double>(violations), 1.0, "non-increasing steps");

  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(L.emd[k] - 2.0 * L.drop * static_cast<double>(k)));
  row("emd equals 2 * drop * shift", worst, 1e-12, "max abs deviation");

  violations = 0;
  for (std::size_t k = 1; 2 * k < n + 1; ++k) violations += !(L.emd[k] < L.emd_no_drop);
  row("displaced drop beats no drop below half length", static_cast<double>(violations), 1.0, "violating shifts");

  double spread = 0.0;
  for (std::size_t k = 1; k < n; ++k) spread = std::max(spread, std::abs(L.mae[k] - L.mae[1]));
  row("mae flat for disjoint drops", spread, 1e-12, "max deviation from shift 1");
  row("mae prefers no drop over a displaced one", L.mae_no_drop - L.mae[1], 0.0, "mae(no drop) - mae(displaced)");

  spread = 0.0;
  for (double v : L.hist) spread = std::max(spread, std::abs(v - L.hist[0]));
  row("histogram loss flat in shift", spread, 1e-12, "max deviation from shift 0");

  // Same total drop, concentrated versus spread over the whole vessel.
  const Grid g(L.spacing_mm, n);
  std::vector<double> focal(n, 0.0), diffuse(n, L.drop / static_cast<double>(n));
  focal[n / 2] = L.drop;
  const double fd = eval::histogram(DropProfile(g, focal), DropProfile(g, diffuse), hist);
  row("histogram separates focal from diffuse", -fd, 0.0, "negated loss");
  return rows;
}

}  // namespace ffr
