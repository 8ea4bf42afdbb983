#pragma once

// 1D convolutional FFR-drop regressor. The lumen-area channel (as relative
// area steps) and the latent channels are pre-encoded by separate
// convolution stacks, concatenated with the raw inputs, and fed to a small
// regression head. The per-point drops are mean-pooled to the supervision
// grid, masked past the measured extent and accumulated into an FFR curve.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffr/artery.hpp"
#include "ffr/autodiff.hpp"
#include "ffr/curve.hpp"

namespace ffr {

struct NetworkConfig {
  std::size_t n_filters = 16;
  double dropout_p = 0.5;
  bool channel_dropout = false;  // drop whole feature maps rather than single values
  std::vector<std::size_t> lumen_dilations{1, 2, 4, 8};
  std::size_t latent_depth = 2;
  std::size_t head_depth = 2;
  std::size_t pool_kernel = 4;
  // Number of latent input channels; 0 disables the latent branch.
  std::size_t n_latent = kDefaultLatentChannels;
  std::uint64_t seed = 1;

  static constexpr std::size_t kernel = 3;

  void validate() const {
    if (n_filters == 0) throw std::invalid_argument("network.n_filters must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("network.dropout_p must lie in [0, 1)");
    if (lumen_dilations.empty()) throw std::invalid_argument("network.lumen_dilations must not be empty");
    for (std::size_t i = 0; i < lumen_dilations.size(); ++i) {
      if (lumen_dilations[i] == 0) throw std::invalid_argument("network.lumen_dilations entries must be >= 1");
      if (i > 0 && lumen_dilations[i] <= lumen_dilations[i - 1]) {
        throw std::invalid_argument("network.lumen_dilations must be strictly increasing");
      }
    }
    if (latent_depth == 0) throw std::invalid_argument("network.latent_depth must be >= 1");
    if (head_depth == 0) throw std::invalid_argument("network.head_depth must be >= 1");
    if (pool_kernel == 0) throw std::invalid_argument("network.pool_kernel must be >= 1");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class Mode { train, eval };

// Prediction-time dropout averaging. Instance norm after a dropout layer
// sees a smaller variance once the masks are gone, so a plain eval-mode pass
// is not the mean of the train-mode outputs; averaging `dropout_samples`
// train-mode passes is. Zero samples means one eval-mode pass.
struct InferenceConfig {
  std::size_t dropout_samples = 32;
  std::uint64_t seed = 0;

  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

namespace detail {

// FNV-1a; a per-artery stream that does not depend on evaluation order.
inline std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

struct Prediction {
  DropProfile drops_2mm;  // masked, on the supervision grid
  PullbackCurve ffr_2mm;
  double min_ffr = 1.0;
  std::size_t end_index_2mm = 0;
};

class PullbackNet {
 public:
  // He-normal weights (std = sqrt(2 / fan_in)), zero biases. The output layer
  // starts at zero unless `zero_output_layer` is false, so an untrained net
  // predicts FFR == 1 everywhere.
  explicit PullbackNet(NetworkConfig cfg, bool zero_output_layer = true) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t f = cfg_.n_filters;
    params_.reserve(2 * (cfg_.lumen_dilations.size() + cfg_.latent_depth + cfg_.head_depth + 1));

    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg_.lumen_dilations.size(); ++i) {
      add_conv("lumen." + std::to_string(i), in, f, rng);
      in = f;
    }
    if (cfg_.n_latent > 0) {
      in = cfg_.n_latent;
      for (std::size_t i = 0; i < cfg_.latent_depth; ++i) {
        add_conv("latent." + std::to_string(i), in, f, rng);
        in = f;
      }
    }
    in = head_input_channels();
    for (std::size_t i = 0; i < cfg_.head_depth; ++i) {
      add_conv("head." + std::to_string(i), in, f, rng);
      in = f;
    }
    add_conv("out", f, 1, rng);
    if (zero_output_layer) {
      for (double& w : params_[params_.size() - 2].value().data) w = 0.0;
    }
  }

  const NetworkConfig& config() const { return cfg_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }

  ad::Parameter& parameter(const std::string& name) {
    for (auto& p : params_) {
      if (p.name() == name) return p;
    }
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  std::size_t head_input_channels() const { return cfg_.n_filters * (cfg_.n_latent > 0 ? 2 : 1) + 3; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // Records the forward pass on `tape` and returns the masked supervision-grid
  // drops (1 x ceil(n / pool_kernel)). `rng` is required in train mode.
  ad::Var forward_drops(ad::Tape& tape, const NormalizedArtery& a, Mode mode, std::mt19937_64* rng = nullptr) {
    const std::size_t n = a.grid.n_points();
    if (a.lumen_pct.size() != n || a.bifurcation.size() != n || a.side_branch.size() != n) {
      throw std::invalid_argument("artery '" + a.id + "': channel lengths do not match its grid");
    }
    if (a.latent.size() != cfg_.n_latent) {
      throw std::invalid_argument("artery '" + a.id + "' has " + std::to_string(a.latent.size()) +
                                  " latent channels, network expects " + std::to_string(cfg_.n_latent));
    }
    if (a.measurement_end_index >= n) throw std::invalid_argument("artery '" + a.id + "': measurement end outside grid");
    detail::require_finite(a.lumen_pct, "lumen channel");
    for (const auto& ch : a.latent) detail::require_finite(ch, "latent channel");
    const bool train = mode == Mode::train;
    if (train && rng == nullptr) throw std::invalid_argument("train-mode forward needs a random generator");
    std::mt19937_64 unused;
    std::mt19937_64& gen = rng ? *rng : unused;

    std::size_t pi = 0;
    auto block = [&](ad::Var x, std::size_t dilation) {
      ad::Var w = tape.parameter(params_[pi++]);
      ad::Var b = tape.parameter(params_[pi++]);
      ad::Var y = ad::conv1d(x, w, b, dilation);
      y = ad::relu(ad::instance_norm(y));
      return ad::dropout(y, cfg_.dropout_p, gen, train, cfg_.channel_dropout);
    };

    const ad::Var lumen = tape.constant(ad::Tensor::row(a.lumen_pct));
    ad::Var lumen_feat = lumen;
    for (std::size_t d : cfg_.lumen_dilations) lumen_feat = block(lumen_feat, d);

    std::vector<ad::Var> parts{lumen_feat};
    if (cfg_.n_latent > 0) {
      ad::Tensor lat(cfg_.n_latent, n);
      for (std::size_t c = 0; c < cfg_.n_latent; ++c) {
        if (a.latent[c].size() != n) throw std::invalid_argument("artery '" + a.id + "': latent channel length mismatch");
        std::copy(a.latent[c].begin(), a.latent[c].end(), lat.channel(c));
      }
      ad::Var latent_feat = tape.constant(std::move(lat));
      for (std::size_t i = 0; i < cfg_.latent_depth; ++i) latent_feat = block(latent_feat, 1);
      parts.push_back(latent_feat);
    }
    parts.push_back(lumen);
    parts.push_back(tape.constant(ad::Tensor::row(a.bifurcation)));
    parts.push_back(tape.constant(ad::Tensor::row(a.side_branch)));

    ad::Var h = ad::concat_channels(parts);
    for (std::size_t i = 0; i < cfg_.head_depth; ++i) h = block(h, 1);
    ad::Var w = tape.parameter(params_[pi++]);
    ad::Var b = tape.parameter(params_[pi++]);
    ad::Var drops = ad::conv1d(h, w, b, 1);
    drops = ad::avg_pool1d(drops, cfg_.pool_kernel);

    const std::size_t m = drops.length();
    const std::size_t end = supervision_end_index(a.measurement_end_index);
    ad::Tensor mask(1, m, 0.0);
    for (std::size_t j = 0; j <= end && j < m; ++j) mask.data[j] = 1.0;
    return ad::mul_const(drops, std::move(mask));
  }

  std::size_t supervision_end_index(std::size_t native_end) const { return native_end / cfg_.pool_kernel; }

  Prediction predict(const NormalizedArtery& a) {
    ad::Tape tape;
    const ad::Var d = forward_drops(tape, a, Mode::eval);
    return make_prediction(a, d.value().data);
  }

  Prediction predict(const NormalizedArtery& a, const InferenceConfig& inf) {
    if (inf.dropout_samples == 0 || cfg_.dropout_p == 0.0) return predict(a);
    const std::uint64_t h = detail::stable_hash(a.id);
    std::seed_seq seq{static_cast<std::uint32_t>(inf.seed), static_cast<std::uint32_t>(inf.seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<double> mean;
    for (std::size_t s = 0; s < inf.dropout_samples; ++s) {
      ad::Tape tape;
      const ad::Var d = forward_drops(tape, a, Mode::train, &rng);
      if (mean.empty()) mean.assign(d.value().size(), 0.0);
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += d.value().data[k];
    }
    for (double& x : mean) x /= static_cast<double>(inf.dropout_samples);
    return make_prediction(a, std::move(mean));
  }

  Prediction make_prediction(const NormalizedArtery& a, std::vector<double> pooled) const {
    Prediction p;
    const Grid g(a.grid.spacing_mm() * static_cast<double>(cfg_.pool_kernel), pooled.size());
    p.drops_2mm = DropProfile(g, std::move(pooled));
    p.ffr_2mm = drops_to_ffr(p.drops_2mm);
    p.min_ffr = min_ffr(p.ffr_2mm);
    p.end_index_2mm = supervision_end_index(a.measurement_end_index);
    return p;
  }

  double predict_artery_ffr(const NormalizedArtery& a, const InferenceConfig& inf = {}) { return predict(a, inf).min_ffr; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

 private:
  void add_conv(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(in * NetworkConfig::kernel);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    ad::Tensor w(out, in * NetworkConfig::kernel);
    for (double& x : w.data) x = normal(rng);
    params_.emplace_back(name + ".weight", std::move(w));
    params_.emplace_back(name + ".bias", ad::Tensor(out, 1, 0.0));
  }

  NetworkConfig cfg_;
  std::vector<ad::Parameter> params_;
};

// Reference drops on the supervision grid: masked to the measured extent,
// then summed per pooling window so the running sum samples the reference
// curve at the coarse spacing.
inline DropProfile supervision_reference(const DropProfile& ref, std::size_t end_index, std::size_t pool_kernel) {
  return sum_pool_drops(mask_distal(ref, end_index), pool_kernel);
}

}  // namespace ffr
