#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ffr/gradcheck.hpp"
#include "ffr/network.hpp"
#include "ffr/synthetic.hpp"

using namespace ffr;

namespace {

NetworkConfig small_net(std::size_t n_latent = 3) {
  NetworkConfig c;
  c.n_filters = 6;
  c.n_latent = n_latent;
  return c;
}

// Channels are zero outside [lo, hi) so the whole input is a translation of
// a compactly supported pattern.
NormalizedArtery padded_artery(std::size_t n, std::size_t lo, std::size_t hi, std::size_t n_latent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  NormalizedArtery a;
  a.id = "padded";
  a.grid = Grid(0.5, n);
  a.lumen_pct.assign(n, 0.0);
  a.bifurcation.assign(n, 0.0);
  a.side_branch.assign(n, 0.0);
  a.latent.assign(n_latent, std::vector<double>(n, 0.0));
  for (std::size_t i = lo; i < hi; ++i) {
    a.lumen_pct[i] = normal(rng);
    for (auto& ch : a.latent) ch[i] = normal(rng);
  }
  a.bifurcation[lo + 3] = 1.0;
  a.measurement_end_index = n - 1;
  return a;
}

NormalizedArtery shifted(const NormalizedArtery& a, std::size_t k) {
  NormalizedArtery s = a;
  auto shift = [k](std::vector<double>& v) {
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t i = 0; i + k < v.size(); ++i) out[i + k] = v[i];
    v = std::move(out);
  };
  shift(s.lumen_pct);
  shift(s.bifurcation);
  shift(s.side_branch);
  for (auto& ch : s.latent) shift(ch);
  return s;
}

}  // namespace

TEST(NetworkConfig, Validation) {
  NetworkConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lumen_dilations = {1, 4, 2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.dropout_p = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.head_depth = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.n_filters = 0;
  EXPECT_THROW(PullbackNet{c}, std::invalid_argument);
}

TEST(PullbackNet, ParameterLayout) {
  const NetworkConfig cfg;  // 16 filters, 32 latent channels
  PullbackNet net(cfg);
  EXPECT_EQ(net.parameters().size(), 2u * (4 + 2 + 2 + 1));
  EXPECT_EQ(net.parameter("lumen.0.weight").value().channels, 16u);
  EXPECT_EQ(net.parameter("lumen.0.weight").value().length, 3u);
  EXPECT_EQ(net.parameter("latent.0.weight").value().length, 32u * 3);
  EXPECT_EQ(net.parameter("head.0.weight").value().length, (16u + 16 + 3) * 3);
  EXPECT_EQ(net.parameter("out.weight").value().channels, 1u);
  EXPECT_THROW(net.parameter("nope"), std::out_of_range);

  NetworkConfig no_latent = cfg;
  no_latent.n_latent = 0;
  EXPECT_EQ(PullbackNet(no_latent).head_input_channels(), 19u);
}

TEST(PullbackNet, HeInitialization) {
  PullbackNet net(NetworkConfig{}, false);
  const auto& w = net.parameter("lumen.1.weight").value().data;  // fan_in 16 * 3
  double s = 0.0, ss = 0.0;
  for (double x : w) {
    s += x;
    ss += x * x;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(ss / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, std::sqrt(2.0 / 48.0), 0.1 * std::sqrt(2.0 / 48.0));
  for (double b : net.parameter("lumen.1.bias").value().data) EXPECT_EQ(b, 0.0);

  PullbackNet again(NetworkConfig{}, false);
  for (std::size_t k = 0; k < net.parameters().size(); ++k) {
    EXPECT_EQ(net.parameters()[k].value(), again.parameters()[k].value());
  }
}

TEST(PullbackNet, ZeroOutputLayerPredictsHealthyVessel) {
  PullbackNet net(small_net());
  const GradCheckCase c = random_gradcheck_case(1, 37, 3);
  const Prediction p = net.predict(c.artery);
  EXPECT_EQ(p.drops_2mm.size(), 10u);  // ceil(37 / 4)
  EXPECT_DOUBLE_EQ(p.drops_2mm.grid.spacing_mm(), 2.0);
  for (double d : p.drops_2mm.drops) EXPECT_EQ(d, 0.0);
  for (double f : p.ffr_2mm.ffr) EXPECT_EQ(f, 1.0);
  EXPECT_EQ(p.min_ffr, 1.0);
  EXPECT_EQ(net.predict_artery_ffr(c.artery), 1.0);
}

TEST(PullbackNet, OutputLengthIsCeilOfQuarter) {
  PullbackNet net(small_net(), false);
  for (std::size_t n : {2u, 4u, 5u, 16u, 33u, 281u}) {
    ad::Tape t;
    EXPECT_EQ(net.forward_drops(t, random_gradcheck_case(n, n, 3).artery, Mode::eval).length(), (n + 3) / 4) << n;
  }
}

TEST(PullbackNet, PredictionIsConsistent) {
  PullbackNet net(small_net(), false);
  GradCheckCase c = random_gradcheck_case(4, 60, 3);
  c.artery.measurement_end_index = 30;
  const Prediction p = net.predict(c.artery);
  EXPECT_EQ(p.end_index_2mm, 7u);
  for (std::size_t j = 8; j < p.drops_2mm.size(); ++j) EXPECT_EQ(p.drops_2mm.drops[j], 0.0);
  EXPECT_EQ(p.ffr_2mm, drops_to_ffr(p.drops_2mm));
  EXPECT_EQ(p.min_ffr, min_ffr(p.ffr_2mm));
  EXPECT_EQ(net.predict(c.artery).drops_2mm, p.drops_2mm);  // eval mode is deterministic
}

TEST(PullbackNet, InputErrors) {
  PullbackNet net(small_net());
  GradCheckCase c = random_gradcheck_case(2, 20, 2);
  ad::Tape t;
  EXPECT_THROW(net.forward_drops(t, c.artery, Mode::eval), std::invalid_argument);
  c = random_gradcheck_case(2, 20, 3);
  EXPECT_THROW(net.forward_drops(t, c.artery, Mode::train), std::invalid_argument);
  c.artery.lumen_pct.pop_back();
  EXPECT_THROW(net.forward_drops(t, c.artery, Mode::eval), std::invalid_argument);
  c = random_gradcheck_case(2, 20, 3);
  c.artery.measurement_end_index = 20;
  EXPECT_THROW(net.forward_drops(t, c.artery, Mode::eval), std::invalid_argument);
  c = random_gradcheck_case(2, 20, 3);
  c.artery.latent[1][4] = std::nan("");
  EXPECT_THROW(net.forward_drops(t, c.artery, Mode::eval), std::invalid_argument);
}

TEST(PullbackNet, LumenScaleDoesNotChangePrediction) {
  SyntheticConfig sc;
  sc.n_arteries = 4;
  sc.n_latent = 3;
  const SyntheticDataset ds = gen_dataset(sc);
  const NormalizationStats stats = compute_normalization_stats(ds.records);
  ArteryRecord scaled = ds.records[2];
  for (double& a : scaled.characteristics.lumen_area) a *= 3.7;
  PullbackNet net(small_net(), false);
  const Prediction p = net.predict(apply_normalization(ds.records[2], stats));
  const Prediction q = net.predict(apply_normalization(scaled, stats));
  for (std::size_t j = 0; j < p.drops_2mm.size(); ++j) EXPECT_NEAR(p.drops_2mm.drops[j], q.drops_2mm.drops[j], 1e-12);
}

TEST(PullbackNet, TranslationEquivariance) {
  NetworkConfig cfg = small_net();
  cfg.pool_kernel = 1;
  PullbackNet net(cfg, false);
  const NormalizedArtery a = padded_artery(120, 40, 60, 3, 8);
  for (std::size_t k : {1u, 5u, 12u}) {
    ad::Tape t;
    const auto y = net.forward_drops(t, a, Mode::eval).value().data;
    const auto z = net.forward_drops(t, shifted(a, k), Mode::eval).value().data;
    // Zero padding makes the outermost receptive field (about 20 points)
    // position dependent; everything between is a pure translation.
    for (std::size_t i = 24; i + k + 24 < y.size(); ++i) ASSERT_NEAR(z[i + k], y[i], 1e-9) << "shift " << k << " index " << i;
  }
}

TEST(PullbackNet, GradientsMatchFiniteDifferences) {
  NetworkConfig cfg = small_net();
  LossSpec loss;
  loss.terms.use_mae = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cfg.seed = seed;
    PullbackNet net(cfg, false);
    const GradCheckCase c = random_gradcheck_case(seed, 16, 3);
    const GradCheckResult r = check_network_gradients(net, c.artery, c.ref_2mm, loss);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst << " analytic " << r.analytic << " numeric " << r.numeric;
    EXPECT_EQ(r.checked, net.parameter_count());
  }
}

TEST(PullbackNet, TrainModeUsesDropout) {
  PullbackNet net(small_net(), false);
  const GradCheckCase c = random_gradcheck_case(5, 40, 3);
  std::mt19937_64 r1(1), r2(1), r3(2);
  ad::Tape t;
  const auto a = net.forward_drops(t, c.artery, Mode::train, &r1).value();
  const auto b = net.forward_drops(t, c.artery, Mode::train, &r2).value();
  const auto d = net.forward_drops(t, c.artery, Mode::train, &r3).value();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
}

TEST(Inference, DropoutAveragingIsSeededPerArtery) {
  PullbackNet net(small_net(), false);
  GradCheckCase c = random_gradcheck_case(6, 48, 3);
  const InferenceConfig inf{8, 3};
  const Prediction p = net.predict(c.artery, inf);
  EXPECT_EQ(net.predict(c.artery, inf).drops_2mm, p.drops_2mm);

  // Evaluating another artery first does not change the stream.
  net.predict(random_gradcheck_case(7, 30, 3).artery, inf);
  EXPECT_EQ(net.predict(c.artery, inf).drops_2mm, p.drops_2mm);

  EXPECT_NE(net.predict(c.artery, InferenceConfig{8, 4}).drops_2mm, p.drops_2mm);
  c.artery.id = "renamed";
  EXPECT_NE(net.predict(c.artery, inf).drops_2mm, p.drops_2mm);

  EXPECT_EQ(net.predict(c.artery, InferenceConfig{0, 3}).drops_2mm, net.predict(c.artery).drops_2mm);
}

TEST(Inference, AveragesTrainModePasses) {
  PullbackNet net(small_net(), false);
  const GradCheckCase c = random_gradcheck_case(9, 24, 3);
  const InferenceConfig inf{3, 11};
  const std::uint64_t h = detail::stable_hash(c.artery.id);
  std::seed_seq seq{11u, 0u, static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<double> mean(6, 0.0);
  for (int s = 0; s < 3; ++s) {
    ad::Tape t;
    const auto d = net.forward_drops(t, c.artery, Mode::train, &rng).value().data;
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += d[j] / 3.0;
  }
  const Prediction p = net.predict(c.artery, inf);
  for (std::size_t j = 0; j < mean.size(); ++j) EXPECT_NEAR(p.drops_2mm.drops[j], mean[j], 1e-15);
}

TEST(SupervisionReference, MaskedWindowSums) {
  const DropProfile ref(Grid(0.5, 10), {0.0, 0.1, 0.0, 0.0, 0.2, 0.0, 0.05, 0.0, 0.3, 0.0});
  const DropProfile s = supervision_reference(ref, 6, 4);
  EXPECT_EQ(s.grid, Grid(2.0, 3));
  EXPECT_NEAR(s.drops[0], 0.1, 1e-15);
  EXPECT_NEAR(s.drops[1], 0.25, 1e-15);
  EXPECT_EQ(s.drops[2], 0.0);
}
