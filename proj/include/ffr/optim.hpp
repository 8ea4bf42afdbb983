#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffr/autodiff.hpp"

namespace ffr {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

// AdamW with decoupled weight decay: parameters shrink by (1 - lr * wd)
// before the bias-corrected moment step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<ad::Parameter>& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value().size(), 0.0);
        v_.emplace_back(p.value().size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("AdamW state does not match the parameter set");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k].value().data;
      const auto& g = params[k].grad().data;
      auto& m = m_[k];
      auto& v = v_[k];
      if (w.size() != m.size() || g.size() != w.size()) {
        throw std::invalid_argument("AdamW: shape mismatch for parameter '" + params[k].name() + "'");
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= decay;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Triangular cyclic learning rate. Starting at the maximum, it falls
// linearly to the minimum at half a period and climbs back by the period end.
struct CyclicLR {
  double lr_max = 5e-4;
  double lr_min = 1e-5;
  double period_epochs = 40.0;
  bool start_at_max = true;

  void validate() const {
    if (!(lr_max >= lr_min && lr_min > 0.0)) throw std::invalid_argument("train.lr: need 0 < lr_min <= lr_max");
    if (!(period_epochs > 0.0)) throw std::invalid_argument("train.lr_period_epochs must be positive");
  }

  double at(double epoch) const {
    if (epoch < 0.0) throw std::invalid_argument("learning rate requested for a negative epoch");
    double phase = std::fmod(epoch, period_epochs) / period_epochs;
    if (!start_at_max) phase = std::fmod(phase + 0.5, 1.0);
    return lr_min + (lr_max - lr_min) * std::abs(1.0 - 2.0 * phase);
  }

  friend bool operator==(const CyclicLR&, const CyclicLR&) = default;
};

inline double lr_at(double epoch, const CyclicLR& schedule) { return schedule.at(epoch); }

}  // namespace ffr
