#pragma once

// Training loop (per-artery forward passes, gradient accumulation, AdamW on a
// cyclic schedule), stratified folds, cross-validation and ablations.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ffr/artery.hpp"
#include "ffr/autodiff.hpp"
#include "ffr/losses.hpp"
#include "ffr/metrics.hpp"
#include "ffr/network.hpp"
#include "ffr/optim.hpp"
#include "ffr/synthetic.hpp"

namespace ffr {

struct LossSpec {
  LossWeights weights;
  LossTerms terms;
  HistogramConfig histogram;
  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t accumulation = 8;
  // Sum (default) or mean of the per-artery losses within one accumulation group.
  bool accumulate_mean = false;
  std::size_t folds = 8;
  std::uint64_t seed = 7;
  CyclicLR lr;
  AdamWConfig adamw;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("train.epochs must be >= 1");
    if (accumulation == 0) throw std::invalid_argument("train.accumulation must be >= 1");
    if (folds < 2) throw std::invalid_argument("train.folds must be >= 2");
    lr.validate();
    if (adamw.weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t epoch, std::string artery)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", artery '" + artery + "'"),
        epoch_(epoch),
        artery_(std::move(artery)) {}
  std::size_t epoch() const { return epoch_; }
  const std::string& artery() const { return artery_; }

 private:
  std::size_t epoch_;
  std::string artery_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossComponents mean;  // per-artery means of the unweighted terms and the weighted total
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Network input plus its supervision-grid reference.
struct TrainingExample {
  const NormalizedArtery* artery = nullptr;
  ad::Tensor ref_2mm;
  std::size_t index = 0;  // position in the full dataset, seeds dropout
};

inline std::vector<TrainingExample> make_examples(std::span<const NormalizedArtery> arteries, std::size_t pool_kernel,
                                                  std::span<const std::size_t> dataset_index = {}) {
  std::vector<TrainingExample> out;
  for (std::size_t k = 0; k < arteries.size(); ++k) {
    const auto& a = arteries[k];
    if (!a.ref_drops) continue;
    TrainingExample e;
    e.artery = &a;
    e.ref_2mm = ad::Tensor::row(supervision_reference(*a.ref_drops, a.measurement_end_index, pool_kernel).drops);
    e.index = dataset_index.empty() ? k : dataset_index[k];
    out.push_back(std::move(e));
  }
  return out;
}

namespace detail {

inline std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

// One forward/backward for one artery; gradients accumulate into the net's
// parameters scaled by `loss_scale`. Returns the unscaled loss parts.
inline LossComponents accumulate_artery(PullbackNet& net, const TrainingExample& e, const LossSpec& loss, Mode mode,
                                        std::mt19937_64* rng, double loss_scale = 1.0) {
  ad::Tape tape;
  const ad::Var pred = net.forward_drops(tape, *e.artery, mode, rng);
  const ad::Var ref = tape.constant(e.ref_2mm);
  LossGraph g = total_loss(pred, ref, loss.weights, loss.terms, loss.histogram);
  if (!std::isfinite(g.parts.total)) return g.parts;
  tape.backward(loss_scale == 1.0 ? g.total : ad::scale(g.total, loss_scale));
  return g.parts;
}

struct TrainResult {
  PullbackNet net;
  std::vector<EpochLog> log;
};

inline TrainResult train(std::span<const TrainingExample> examples, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                         const LossSpec& loss, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  loss.weights.validate();
  loss.histogram.validate();
  if (examples.empty()) throw std::invalid_argument("train: no arteries with a reference pullback");
  TrainResult res{PullbackNet(net_cfg), {}};
  PullbackNet& net = res.net;
  AdamW opt(cfg.adamw);
  std::vector<std::size_t> order(examples.size());
  const std::size_t groups = (examples.size() + cfg.accumulation - 1) / cfg.accumulation;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = detail::seeded(cfg.seed, epoch, 0x5u);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    log.lr = cfg.lr.at(static_cast<double>(epoch));
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const std::size_t lo = grp * cfg.accumulation;
      const std::size_t hi = std::min(lo + cfg.accumulation, order.size());
      net.zero_grad();
      const double scale = cfg.accumulate_mean ? 1.0 / static_cast<double>(hi - lo) : 1.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const TrainingExample& e = examples[order[k]];
        auto rng = detail::seeded(cfg.seed, epoch, 0x100000000ull + e.index);
        const LossComponents parts = accumulate_artery(net, e, loss, Mode::train, &rng, scale);
        if (!std::isfinite(parts.total)) throw NonFiniteLoss(epoch, e.artery->id);
        log.mean.emd += parts.emd;
        log.mean.mae += parts.mae;
        log.mean.hist += parts.hist;
        log.mean.mono += parts.mono;
        log.mean.total += parts.total;
      }
      const double epoch_pos = static_cast<double>(epoch) + static_cast<double>(grp) / static_cast<double>(groups);
      opt.step(net.parameters(), cfg.lr.at(epoch_pos));
    }
    const double n = static_cast<double>(examples.size());
    log.mean.emd /= n;
    log.mean.mae /= n;
    log.mean.hist /= n;
    log.mean.mono /= n;
    log.mean.total /= n;
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

inline LossComponents evaluate_loss(PullbackNet& net, std::span<const TrainingExample> examples, const LossSpec& loss) {
  LossComponents acc;
  for (const auto& e : examples) {
    ad::Tape tape;
    const ad::Var pred = net.forward_drops(tape, *e.artery, Mode::eval);
    const LossComponents p = total_loss(pred, tape.constant(e.ref_2mm), loss.weights, loss.terms, loss.histogram).parts;
    acc.emd += p.emd;
    acc.mae += p.mae;
    acc.hist += p.hist;
    acc.mono += p.mono;
    acc.total += p.total;
  }
  const double n = static_cast<double>(std::max<std::size_t>(examples.size(), 1));
  acc.emd /= n;
  acc.mae /= n;
  acc.hist /= n;
  acc.mono /= n;
  acc.total /= n;
  return acc;
}

// Predicted and reference curves on the supervision grid, cut to the
// measured extent. Empty when the artery has no reference.
inline std::optional<ArteryCurves> artery_curves(PullbackNet& net, const NormalizedArtery& a, const InferenceConfig& inf = {}) {
  if (!a.ref_drops) return std::nullopt;
  const Prediction p = net.predict(a, inf);
  const std::size_t k = net.config().pool_kernel;
  const PullbackCurve ref = drops_to_ffr(supervision_reference(*a.ref_drops, a.measurement_end_index, k));
  const std::size_t n = std::min(p.end_index_2mm + 1, p.ffr_2mm.size());
  if (n < 2) return std::nullopt;
  return ArteryCurves{a.id, truncate(p.ffr_2mm, n), truncate(ref, n), a.label, -1};
}

inline PullbackCurve reference_curve_2mm(const NormalizedArtery& a, std::size_t pool_kernel) {
  const PullbackCurve ref = drops_to_ffr(supervision_reference(*a.ref_drops, a.measurement_end_index, pool_kernel));
  const std::size_t n = std::min(a.measurement_end_index / pool_kernel + 1, ref.size());
  return truncate(ref, n);
}

// Threshold for classification: the configured value, else the median
// reference PPG over `arteries` (the training split under cross-validation).
inline double classification_threshold(std::span<const NormalizedArtery> arteries, const PPGConfig& ppg, std::size_t pool_kernel) {
  if (ppg.classification_threshold) return *ppg.classification_threshold;
  std::vector<PullbackCurve> refs;
  for (const auto& a : arteries) {
    if (a.ref_drops && a.measurement_end_index / pool_kernel >= 1) refs.push_back(reference_curve_2mm(a, pool_kernel));
  }
  return reference_ppg_median(refs, ppg);
}

// ---------------------------------------------------------------------------
// Folds

struct FoldPlan {
  std::size_t k = 8;
  std::vector<std::size_t> fold_of;  // per dataset index

  std::vector<std::size_t> members(std::size_t f) const {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == f) v.push_back(i);
    }
    return v;
  }
  std::vector<std::size_t> complement(std::size_t f) const {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != f) v.push_back(i);
    }
    return v;
  }
};

// Stratified by label: each stratum is shuffled and dealt round-robin, the
// deal continuing across strata so fold sizes also differ by at most one.
inline FoldPlan make_folds(std::span<const ArteryRecord> records, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("need at least 2 folds");
  if (records.size() < k) throw std::invalid_argument("fewer arteries than folds");
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(records.size(), 0);
  std::vector<std::vector<std::size_t>> strata(3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& l = records[i].label;
    strata[!l ? 2 : (*l == LesionClass::focal ? 0 : 1)].push_back(i);
  }
  std::size_t deal = 0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto rng = detail::seeded(seed, s, 0xf01du);
    std::shuffle(strata[s].begin(), strata[s].end(), rng);
    for (std::size_t i : strata[s]) plan.fold_of[i] = deal++ % k;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Normalization leakage probe

// Shifting every held-out latent value by a constant must move its
// normalized value by exactly shift / sd: statistics come from the training
// split only. Also re-derives the statistics from the training split.
inline bool leakage_probe(std::span<const ArteryRecord> train_split, std::span<const ArteryRecord> held_out,
                          const NormalizationStats& stats, double shift = 3.0) {
  if (!(compute_normalization_stats(train_split) == stats)) return false;
  if (held_out.empty() || stats.n_latent() == 0) return true;
  std::vector<ArteryRecord> shifted(held_out.begin(), held_out.end());
  for (auto& r : shifted) {
    for (auto& ch : r.characteristics.latent) {
      for (double& x : ch) x += shift;
    }
  }
  for (std::size_t a = 0; a < held_out.size(); ++a) {
    const NormalizedArtery base = apply_normalization(held_out[a], stats);
    const NormalizedArtery moved = apply_normalization(shifted[a], stats);
    for (std::size_t c = 0; c < base.latent.size(); ++c) {
      const double expect = shift / stats.stddev[c + 1];
      for (std::size_t i = 0; i < base.latent[c].size(); ++i) {
        if (std::abs(moved.latent[c][i] - base.latent[c][i] - expect) > 1e-9 * (1.0 + std::abs(expect))) return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldModel {
  PullbackNet net;
  NormalizationStats stats;
};

struct FoldOutcome {
  std::size_t fold = 0;
  FoldModel model;
  std::vector<EpochLog> log;
  bool resumed = false;
  double threshold = 0.0;
  std::vector<std::size_t> held_out;  // dataset indices
  std::vector<ArteryCurves> curves;
  std::vector<ArteryMetrics> rows;
};

struct CvResult {
  FoldPlan plan;
  std::vector<FoldOutcome> folds;
  MetricsReport report;
};

struct CvOptions {
  std::size_t threads = 1;
  // Returns a previously saved model for the fold, if any.
  std::function<std::optional<FoldModel>(std::size_t)> load;
  // Called after a fold has been trained (not when resumed).
  std::function<void(const FoldOutcome&)> save;
  std::function<void(std::size_t fold, const EpochLog&)> on_epoch;
};

class LeakageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig train;
  LossSpec loss;
  PPGConfig ppg;
  InferenceConfig inference;
};

inline FoldOutcome run_fold(std::span<const ArteryRecord> records, const FoldPlan& plan, std::size_t f,
                            const ExperimentConfig& cfg, const CvOptions& opt) {
  FoldOutcome out{f, FoldModel{PullbackNet(cfg.network), {}}, {}, false, 0.0, plan.members(f), {}, {}};
  const std::vector<std::size_t> train_idx = plan.complement(f);
  std::vector<ArteryRecord> train_split, test_split;
  for (std::size_t i : train_idx) train_split.push_back(records[i]);
  for (std::size_t i : out.held_out) test_split.push_back(records[i]);

  const NormalizationResult train_norm = normalize_characteristics(train_split);
  if (!leakage_probe(train_split, test_split, train_norm.stats)) {
    throw LeakageError("normalization leakage probe failed on fold " + std::to_string(f));
  }
  const NormalizationResult test_norm = normalize_characteristics(test_split, train_norm.stats);
  const std::size_t kernel = cfg.network.pool_kernel;
  out.threshold = classification_threshold(train_norm.arteries, cfg.ppg, kernel);

  std::optional<FoldModel> loaded = opt.load ? opt.load(f) : std::nullopt;
  if (loaded) {
    if (!(loaded->stats == train_norm.stats)) {
      throw LeakageError("saved model for fold " + std::to_string(f) + " was normalized with different statistics");
    }
    out.model = std::move(*loaded);
    out.resumed = true;
  } else {
    const auto examples = make_examples(train_norm.arteries, kernel, train_idx);
    EpochCallback cb;
    if (opt.on_epoch) cb = [&](const EpochLog& l) { opt.on_epoch(f, l); };
    TrainResult tr = train(examples, cfg.network, cfg.train, cfg.loss, cb);
    out.model = FoldModel{std::move(tr.net), train_norm.stats};
    out.log = std::move(tr.log);
  }

  for (const auto& a : test_norm.arteries) {
    auto c = artery_curves(out.model.net, a, cfg.inference);
    if (!c) continue;
    c->fold = static_cast<int>(f);
    out.rows.push_back(evaluate_curves(*c, cfg.ppg, out.threshold));
    out.curves.push_back(std::move(*c));
  }
  if (!out.resumed && opt.save) opt.save(out);
  return out;
}

// Runs `n` independent jobs on up to `threads` workers; job i writes slot i.
template <typename Job>
void parallel_for(std::size_t n, std::size_t threads, Job&& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline MetricsReport pooled_report(std::span<const FoldOutcome> folds, std::span<const ArteryRecord> records) {
  // Rows ordered by dataset index so the report does not depend on fold order.
  std::map<std::size_t, std::pair<ArteryMetrics, ArteryCurves>> by_index;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < records.size(); ++i) index_of[records[i].id] = i;
  for (const auto& f : folds) {
    for (std::size_t k = 0; k < f.rows.size(); ++k) by_index.emplace(index_of.at(f.rows[k].id), std::pair{f.rows[k], f.curves[k]});
  }
  MetricsReport rep;
  std::vector<ArteryCurves> curves;
  for (auto& [idx, rc] : by_index) {
    rep.rows.push_back(rc.first);
    curves.push_back(rc.second);
  }
  for (const auto& r : records) {
    if (!r.ref_drops) rep.skipped.push_back(r.id);
  }
  rep.summary = summarize(rep.rows, curves);
  rep.summary.n_skipped = rep.skipped.size();
  return rep;
}

inline CvResult run_cross_validation(std::span<const ArteryRecord> records, const ExperimentConfig& cfg, const CvOptions& opt = {}) {
  cfg.network.validate();
  cfg.train.validate();
  CvResult res;
  res.plan = make_folds(records, cfg.train.folds, cfg.train.seed);
  std::vector<std::optional<FoldOutcome>> slots(cfg.train.folds);
  parallel_for(cfg.train.folds, opt.threads, [&](std::size_t f) { slots[f] = run_fold(records, res.plan, f, cfg, opt); });
  for (auto& s : slots) res.folds.push_back(std::move(*s));
  res.report = pooled_report(res.folds, records);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationSetting {
  std::string name;
  LossTerms terms;
  bool no_latent = false;                   // drop the latent branch entirely
  std::size_t extra_background_latent = 0;  // append noise channels to the latent set
};

inline std::vector<AblationSetting> ablation_settings() {
  return {
      {"Proposed", {true, false, true, true}, false, 0},
      {"MAE instead of EMD", {false, true, true, true}, false, 0},
      {"Only EMD", {true, false, false, false}, false, 0},
      {"Only MAE", {false, true, false, false}, false, 0},
      {"Only Hist", {false, false, true, false}, false, 0},
      {"No latent features", {true, false, true, true}, true, 0},
      {"All latent features", {true, false, true, true}, false, 16},
  };
}

struct AblationRow {
  AblationSetting setting;
  MetricsSummary summary;
};

inline std::vector<AblationRow> run_ablation(std::span<const ArteryRecord> records, const ExperimentConfig& base,
                                             const CvOptions& opt = {}, std::span<const AblationSetting> settings = {},
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  const std::vector<AblationSetting> all = ablation_settings();
  if (settings.empty()) settings = all;
  std::vector<AblationRow> rows;
  for (const auto& s : settings) {
    ExperimentConfig cfg = base;
    cfg.loss.terms = s.terms;
    std::vector<ArteryRecord> data(records.begin(), records.end());
    if (s.no_latent) {
      // The network ignores latent channels; normalization needs none either.
      for (auto& r : data) r.characteristics.latent.clear();
      cfg.network.n_latent = 0;
    } else if (s.extra_background_latent > 0) {
      data = append_background_latent(records, s.extra_background_latent, 5, cfg.train.seed);
      cfg.network.n_latent = data.front().characteristics.latent.size();
    } else if (!data.empty()) {
      cfg.network.n_latent = data.front().characteristics.latent.size();
    }
    CvOptions o = opt;
    o.load = {};
    o.save = {};
    const CvResult cv = run_cross_validation(data, cfg, o);
    rows.push_back({s, cv.report.summary});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

}  // namespace ffr
