#pragma once

// Central finite-difference checks of the reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ffr/artery.hpp"
#include "ffr/autodiff.hpp"
#include "ffr/losses.hpp"
#include "ffr/network.hpp"
#include "ffr/trainer.hpp"

namespace ffr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<name>[<flat index>]" of the worst entry
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;

  void merge(const GradCheckResult& o) {
    if (o.max_rel_error > max_rel_error || checked == 0) {
      max_rel_error = o.max_rel_error;
      worst = o.worst;
      analytic = o.analytic;
      numeric = o.numeric;
    }
    checked += o.checked;
  }
};

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Central differences of a loss L carry rounding noise proportional to |L|;
// gradients smaller than this floor are compared against it instead.
inline double gradient_floor(double loss, double scale = 1e-4) { return scale * std::max(1.0, std::abs(loss)); }

namespace detail {

inline void record(GradCheckResult& r, const std::string& name, std::size_t k, double a, double n, double floor) {
  const double e = relative_error(a, n, floor);
  if (e > r.max_rel_error || r.checked == 0) {
    r.max_rel_error = e;
    r.worst = name + "[" + std::to_string(k) + "]";
    r.analytic = a;
    r.numeric = n;
  }
  ++r.checked;
}

}  // namespace detail

// Scalar function of differentiable inputs recorded on a fresh tape.
using TapeFunction = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

inline GradCheckResult check_gradients(const TapeFunction& f, std::vector<ad::Tensor> inputs, double h = 1e-6,
                                       double floor_scale = 1e-4) {
  std::vector<ad::Tensor> analytic;
  double floor = 0.0;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    const ad::Var y = f(tape, vars);
    floor = gradient_floor(y.value().item(), floor_scale);
    tape.backward(y);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&] {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      double& x = inputs[i].data[k];
      const double x0 = x;
      x = x0 + h;
      const double up = eval();
      x = x0 - h;
      const double down = eval();
      x = x0;
      detail::record(r, "input" + std::to_string(i), k, analytic[i].data[k], (up - down) / (2.0 * h), floor);
    }
  }
  return r;
}

// Gradient of the training loss with respect to every network parameter, in
// eval mode (no dropout).
inline GradCheckResult check_network_gradients(PullbackNet& net, const NormalizedArtery& a, const ad::Tensor& ref_2mm,
                                               const LossSpec& loss, double h = 1e-6) {
  TrainingExample e;
  e.artery = &a;
  e.ref_2mm = ref_2mm;
  net.zero_grad();
  const double floor = gradient_floor(accumulate_artery(net, e, loss, Mode::eval, nullptr).total);
  auto eval = [&] {
    ad::Tape tape;
    const ad::Var pred = net.forward_drops(tape, a, Mode::eval);
    return total_loss(pred, tape.constant(ref_2mm), loss.weights, loss.terms, loss.histogram).parts.total;
  };
  GradCheckResult r;
  for (auto& p : net.parameters()) {
    const ad::Tensor grad = p.grad();
    for (std::size_t k = 0; k < p.value().size(); ++k) {
      double& x = p.value().data[k];
      const double x0 = x;
      x = x0 + h;
      const double up = eval();
      x = x0 - h;
      const double down = eval();
      x = x0;
      detail::record(r, p.name(), k, grad.data[k], (up - down) / (2.0 * h), floor);
    }
  }
  net.zero_grad();
  return r;
}

// Small random standardized artery for gradient checks. The reference drops
// are positive and sized like a mild lesion.
struct GradCheckCase {
  NormalizedArtery artery;
  ad::Tensor ref_2mm;
};

inline GradCheckCase random_gradcheck_case(std::uint64_t seed, std::size_t n_points, std::size_t n_latent,
                                           std::size_t pool_kernel = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GradCheckCase c;
  NormalizedArtery& a = c.artery;
  a.id = "gradcheck-" + std::to_string(seed);
  a.grid = Grid(0.5, n_points);
  a.lumen_pct.resize(n_points);
  for (double& x : a.lumen_pct) x = normal(rng);
  a.latent.assign(n_latent, std::vector<double>(n_points));
  for (auto& ch : a.latent) {
    for (double& x : ch) x = normal(rng);
  }
  a.bifurcation.resize(n_points);
  a.side_branch.resize(n_points);
  for (double& x : a.bifurcation) x = unit(rng) < 0.1 ? 1.0 : 0.0;
  for (double& x : a.side_branch) x = unit(rng) < 0.1 ? 1.0 : 0.0;
  a.measurement_end_index = n_points - 1;
  std::vector<double> ref(pooled_length(n_points, pool_kernel));
  for (double& x : ref) x = 0.05 * unit(rng);
  c.ref_2mm = ad::Tensor::row(std::move(ref));
  return c;
}

}  // namespace ffr
