// ffr_pullback: dataset generation, training, cross-validation, ablation,
// evaluation and self-checks.
//
// Exit codes: 0 success, 1 unexpected error, 2 configuration or usage error,
// 3 I/O error, 4 non-finite loss, 5 checkpoint/config mismatch, 6 failed
// checks (including the normalization leakage probe).

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ffr/checks.hpp"
#include "ffr/config.hpp"
#include "ffr/io.hpp"
#include "ffr/svg.hpp"
#include "ffr/trainer.hpp"

namespace fs = std::filesystem;
using namespace ffr;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kIo = 3,
  kNonFinite = 4,
  kMismatch = 5,
  kChecksFailed = 6,
};

class ChecksFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::vector<std::string> set;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::size_t threads = 1;
  bool resume = false;
  bool quiet = false;
};

std::string sha256_hex(const std::string& s) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(s.data(), s.size(), md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

struct ResolvedConfig {
  RunConfig config;
  ojson json;
  std::string hash;
};

ResolvedConfig resolve_config(const Options& o) {
  RunConfig base;
  if (!o.config.empty()) base = parse_run_config(read_text(o.config));
  ojson j = to_json(base);
  for (const auto& s : o.set) apply_override(j, s);
  ResolvedConfig r{run_config_from_json(j), {}, {}};
  r.json = to_json(r.config);
  r.hash = sha256_hex(r.json.dump());
  return r;
}

// Output directory: --out, resolved against FFR_RUN_DIR when relative and the
// variable is set; otherwise <root>/<command>-<config hash prefix>.
fs::path output_dir(const Options& o, const std::string& command, const std::string& hash) {
  const char* env = std::getenv("FFR_RUN_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  if (o.out.empty()) return root / (command + "-" + hash.substr(0, 12));
  const fs::path out(o.out);
  return env && *env && out.is_relative() ? root / out : out;
}

// Writes files under one directory and records their hashes for the
// manifest. Safe to use from several threads.
class RunDir {
 public:
  RunDir(fs::path dir, std::string command, const ResolvedConfig& cfg) : dir_(std::move(dir)), command_(std::move(command)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create '" + dir_.string() + "': " + ec.message());
    config_hash_ = cfg.hash;
    write("config.json", cfg.json.dump(2) + "\n");
  }

  const fs::path& path() const { return dir_; }

  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    write_text(p, text);
    std::lock_guard lock(mutex_);
    files_[name] = sha256_hex(text);
    return p;
  }

  // Records a file left by an earlier run.
  void adopt(const std::string& name) {
    const fs::path p = dir_ / name;
    if (!fs::exists(p)) return;
    const std::string text = read_text(p);
    std::lock_guard lock(mutex_);
    files_[name] = sha256_hex(text);
  }

  void finish() {
    ojson m;
    m["command"] = command_;
    m["config_sha256"] = config_hash_;
    ojson files = ojson::object();
    for (const auto& [name, hash] : files_) files[name] = hash;
    m["files"] = files;
    write_text(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string command_;
  std::string config_hash_;
  std::map<std::string, std::string> files_;
  std::mutex mutex_;
};

std::mutex g_print;

void print_epoch(const std::string& prefix, const EpochLog& l, std::size_t epochs) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%sepoch %4zu/%zu  lr %.3e  total %.5f  emd %.5f  hist %.5f  mono %.5f  mae %.5f", prefix.c_str(),
                l.epoch + 1, epochs, l.lr, l.mean.total, l.mean.emd, l.mean.hist, l.mean.mono, l.mean.mae);
  std::lock_guard lock(g_print);
  std::cout << buf << std::endl;
}

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt(const std::optional<double>& v, int digits = 3) { return v ? fmt(*v, digits) : "n/a"; }

void print_summary(const std::string& prefix, const MetricsSummary& s) {
  std::lock_guard lock(g_print);
  std::cout << prefix << "arteries " << s.n_arteries << "  classified " << s.n_classified << "  skipped " << s.n_skipped
            << "  accuracy " << fmt(s.confusion.accuracy) << "  sensitivity " << fmt(s.confusion.sensitivity) << "  specificity "
            << fmt(s.confusion.specificity) << "  aupc_mad " << fmt(s.aupc_mad) << std::endl;
}

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
  return out.empty() ? "artery" : out;
}

// Matches the dataset's latent channels to the network: drops them for a
// network without a latent branch, otherwise requires equal counts.
std::vector<ArteryRecord> prepare_records(std::vector<ArteryRecord> records, const NetworkConfig& net, const std::string& source) {
  for (auto& r : records) {
    if (net.n_latent == 0) {
      r.characteristics.latent.clear();
    } else if (r.characteristics.latent.size() != net.n_latent) {
      throw ConfigError("network.n_latent: is " + std::to_string(net.n_latent) + " but artery '" + r.id + "' in " + source +
                        " carries " + std::to_string(r.characteristics.latent.size()) + " latent channels");
    }
  }
  return records;
}

std::vector<ArteryRecord> load_records(const Options& o, const NetworkConfig& net) {
  if (o.data.empty()) throw ConfigError("--data is required");
  return prepare_records(load_dataset(o.data).records, net, o.data);
}

// Reference PPG on the native measurement grid, resampled to the configured
// spacing and to 0.5 mm. Predicted curves live on the supervision grid and are
// piecewise linear, so their PPG does not change under finer resampling.
ojson ppg_resolution_json(std::span<const ArteryMetrics> rows, std::span<const ArteryRecord> records, const PPGConfig& ppg) {
  PPGConfig fine = ppg;
  fine.resample_mm = 0.5;
  std::map<std::string, const ArteryRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::vector<double> coarse_v, fine_v;
  std::size_t same_class = 0, classified = 0;
  for (const auto& m : rows) {
    const ArteryRecord* r = by_id.at(m.id);
    if (!r->ref_drops || r->measurement_end_index < 1) continue;
    const PullbackCurve ref = truncate(drops_to_ffr(*r->ref_drops), r->measurement_end_index + 1);
    const auto a = ppg_index(ref, ppg), b = ppg_index(ref, fine);
    if (!a || !b) continue;
    coarse_v.push_back(*a);
    fine_v.push_back(*b);
    ++classified;
    same_class += classify_focal(a, m.threshold) == classify_focal(b, m.threshold);
  }
  ojson j;
  j["resample_mm"] = {ppg.resample_mm, fine.resample_mm};
  j["n_arteries"] = classified;
  j["reference_ppg_agreement"] = fine_v.size() >= 2 ? detail::bland_altman_json(bland_altman(fine_v, coarse_v)) : ojson(nullptr);
  j["reference_class_agreement"] =
      classified ? ojson(static_cast<double>(same_class) / static_cast<double>(classified)) : ojson(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen_data(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  const SyntheticDataset ds = gen_dataset(cfg.config.synthetic);
  RunDir run(output_dir(o, "gen-data", cfg.hash), "gen-data", cfg);
  const fs::path p = run.write("dataset.jsonl", dataset_to_jsonl(dataset_from_synthetic(ds)));
  run.finish();
  std::cout << "wrote " << ds.records.size() << " arteries to " << p.string() << " (oracle alpha " << ds.oracle.alpha << ")"
            << std::endl;
  return kOk;
}

int cmd_train(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  const ExperimentConfig e = cfg.config.experiment();
  const std::vector<ArteryRecord> records = load_records(o, e.network);
  RunDir run(output_dir(o, "train", cfg.hash), "train", cfg);
  const NormalizationResult norm = normalize_characteristics(records);
  const auto examples = make_examples(norm.arteries, e.network.pool_kernel);
  std::string log_text;
  const TrainResult tr = train(examples, e.network, e.train, e.loss, [&](const EpochLog& l) {
    if (!o.quiet) print_epoch("", l, e.train.epochs);
  });
  run.write("checkpoint.json", checkpoint_to_string(tr.net, norm.stats));
  run.write("training_log.jsonl", training_log_jsonl(tr.log));
  run.finish();
  std::cout << "trained on " << examples.size() << " arteries; checkpoint in " << run.path().string() << std::endl;
  return kOk;
}

int cmd_cv(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  const ExperimentConfig e = cfg.config.experiment();
  const std::vector<ArteryRecord> records = load_records(o, e.network);
  RunDir run(output_dir(o, "cv", cfg.hash), "cv", cfg);
  auto fold_dir = [](std::size_t f) { return "fold_" + std::to_string(f); };

  CvOptions opt;
  opt.threads = o.threads;
  if (o.resume) {
    opt.load = [&](std::size_t f) -> std::optional<FoldModel> {
      const fs::path p = run.path() / fold_dir(f) / "checkpoint.json";
      if (!fs::exists(p)) return std::nullopt;
      Checkpoint c = load_checkpoint(p, e.network);
      std::lock_guard lock(g_print);
      std::cout << "fold " << f << ": resumed from " << p.string() << std::endl;
      return FoldModel{std::move(c.net), std::move(c.stats)};
    };
  }
  opt.save = [&](const FoldOutcome& out) {
    run.write(fold_dir(out.fold) + "/checkpoint.json", checkpoint_to_string(out.model.net, out.model.stats));
    run.write(fold_dir(out.fold) + "/training_log.jsonl", training_log_jsonl(out.log));
  };
  opt.on_epoch = [&](std::size_t f, const EpochLog& l) {
    if (!o.quiet) print_epoch("fold " + std::to_string(f) + "  ", l, e.train.epochs);
  };
  const CvResult cv = run_cross_validation(records, e, opt);

  ojson folds = ojson::array();
  for (const auto& f : cv.folds) {
    if (f.resumed) {
      run.adopt(fold_dir(f.fold) + "/checkpoint.json");
      run.adopt(fold_dir(f.fold) + "/training_log.jsonl");
    }
    folds.push_back(ojson{{"fold", f.fold}, {"held_out", f.held_out.size()}, {"threshold", f.threshold}});
  }
  ojson rep = report_to_json(cv.report);
  rep["folds"] = folds;
  rep["ppg_resolution"] = ppg_resolution_json(cv.report.rows, records, e.ppg);
  run.write("report.json", rep.dump(2) + "\n");
  run.write("report.csv", report_csv(cv.report));
  run.finish();
  print_summary("cv  ", cv.report.summary);
  std::cout << "report in " << run.path().string() << std::endl;
  return kOk;
}

int cmd_ablate(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  const ExperimentConfig e = cfg.config.experiment();
  if (o.data.empty()) throw ConfigError("--data is required");
  // Each configuration decides its own latent set.
  const std::vector<ArteryRecord> records = load_dataset(o.data).records;
  RunDir run(output_dir(o, "ablate", cfg.hash), "ablate", cfg);
  std::string log_text;
  std::mutex log_mutex;
  std::string current;
  CvOptions opt;
  opt.threads = o.threads;
  opt.on_epoch = [&](std::size_t f, const EpochLog& l) {
    ojson j = epoch_log_to_json(l);
    j["configuration"] = current;
    j["fold"] = f;
    std::lock_guard lock(log_mutex);
    log_text += j.dump() + "\n";
  };
  const auto settings = ablation_settings();
  std::vector<AblationRow> rows;
  for (const auto& s : settings) {
    current = s.name;
    const AblationSetting one[] = {s};
    const auto r = run_ablation(records, e, opt, one);
    rows.push_back(r.front());
    print_summary(s.name + ": ", r.front().summary);
  }
  run.write("ablation_log.jsonl", log_text);
  run.write("ablation.json", ablation_to_json(rows).dump(2) + "\n");
  run.write("ablation.csv", ablation_csv(rows));
  run.finish();
  std::cout << "ablation table in " << run.path().string() << std::endl;
  return kOk;
}

int cmd_eval(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  const ExperimentConfig e = cfg.config.experiment();
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(o.checkpoint, e.network);
  const std::vector<ArteryRecord> records = load_records(o, e.network);
  RunDir run(output_dir(o, "eval", cfg.hash), "eval", cfg);
  const NormalizationResult norm = normalize_characteristics(records, ck.stats);
  const std::size_t kernel = e.network.pool_kernel;
  const double threshold = classification_threshold(norm.arteries, e.ppg, kernel);

  MetricsReport rep;
  std::vector<ArteryCurves> curves;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ArteryRecord& r = records[i];
    const NormalizedArtery& a = norm.arteries[i];
    std::optional<ArteryCurves> c = artery_curves(ck.net, a, e.inference);
    if (!c) {
      std::cerr << "warning: artery '" << r.id << "' has no usable reference pullback; skipped" << std::endl;
      rep.skipped.push_back(r.id);
      continue;
    }
    rep.rows.push_back(evaluate_curves(*c, e.ppg, threshold));
    const Prediction p = ck.net.predict(a, e.inference);
    run.write("curves/" + safe_name(r.id) + ".csv", curve_csv(r, interpolate_onto(p.ffr_2mm, r.grid())));
    curves.push_back(std::move(*c));
  }
  rep.summary = summarize(rep.rows, curves);
  rep.summary.n_skipped = rep.skipped.size();

  const auto examples = make_examples(norm.arteries, kernel);
  ojson j = report_to_json(rep);
  j["threshold"] = threshold;
  if (!examples.empty()) {
    const LossComponents l = evaluate_loss(ck.net, examples, e.loss);
    j["loss"] = ojson{{"total", l.total}, {"emd", l.emd}, {"hist", l.hist}, {"mono", l.mono}, {"mae", l.mae}};
  }
  j["ppg_resolution"] = ppg_resolution_json(rep.rows, records, e.ppg);
  run.write("report.json", j.dump(2) + "\n");
  run.write("report.csv", report_csv(rep));
  run.finish();
  print_summary("eval  ", rep.summary);
  std::cout << "report in " << run.path().string() << std::endl;
  return kOk;
}

std::string checks_csv(std::span<const CheckRow> rows) {
  std::string out = "check,value,limit,pass,detail\n";
  for (const auto& r : rows) {
    out += "\"" + r.name + "\"," + detail::csv_number(r.value) + "," + detail::csv_number(r.limit) + "," + (r.pass ? "1" : "0") +
           ",\"" + r.detail + "\"\n";
  }
  return out;
}

void report_checks(std::span<const CheckRow> rows) {
  std::vector<std::string> failed;
  for (const auto& r : rows) {
    std::cout << (r.pass ? "ok    " : "FAIL  ") << r.name << "  " << r.value << " < " << r.limit << "  (" << r.detail << ")"
              << std::endl;
    if (!r.pass) failed.push_back(r.name);
  }
  if (!failed.empty()) {
    std::string msg = std::to_string(failed.size()) + " check(s) failed:";
    for (const auto& f : failed) msg += "\n  " + f;
    throw ChecksFailed(msg);
  }
}

int cmd_gradcheck(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  RunDir run(output_dir(o, "gradcheck", cfg.hash), "gradcheck", cfg);
  const auto rows = gradient_suite();
  run.write("gradcheck.csv", checks_csv(rows));
  run.finish();
  report_checks(rows);
  return kOk;
}

int cmd_losscheck(const Options& o) {
  const ResolvedConfig cfg = resolve_config(o);
  const HistogramConfig& hist = cfg.config.loss.histogram;
  RunDir run(output_dir(o, "losscheck", cfg.hash), "losscheck", cfg);
  const Landscape L = loss_landscape(100, 0.3, 2.0, hist);
  std::string csv = "shift_mm,emd,mae,hist\n";
  for (std::size_t k = 0; k < L.shift_mm.size(); ++k) {
    csv += detail::csv_number(L.shift_mm[k]) + "," + detail::csv_number(L.emd[k]) + "," + detail::csv_number(L.mae[k]) + "," +
           detail::csv_number(L.hist[k]) + "\n";
  }
  run.write("landscape.csv", csv);
  auto chart = [&](const std::string& title, const std::vector<double>& y, std::optional<double> no_drop) {
    svg::Chart c{title, "shift (mm)", "loss", {}};
    c.series.push_back({"displaced drop", L.shift_mm, y, svg::palette()[0]});
    if (no_drop) c.series.push_back({"no drop", L.shift_mm, std::vector<double>(y.size(), *no_drop), svg::palette()[1]});
    return svg::render(c);
  };
  run.write("landscape_emd.svg", chart("EMD vs shift of a 0.3 drop", L.emd, L.emd_no_drop));
  run.write("landscape_mae.svg", chart("MAE vs shift of a 0.3 drop", L.mae, L.mae_no_drop));
  run.write("landscape_hist.svg", chart("Histogram loss vs shift of a 0.3 drop", L.hist, std::nullopt));
  const auto rows = landscape_checks(L, hist);
  run.write("losscheck.csv", checks_csv(rows));
  run.finish();
  report_checks(rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FFR pullback prediction: data generation, training, evaluation and checks"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON run configuration");
    c->add_option("--set", o.set, "Override a scalar field, e.g. train.epochs=20 (repeatable)");
    c->add_option("--out", o.out, "Output directory");
  };
  auto threads = [&](CLI::App* c) { c->add_option("--threads", o.threads, "Worker threads for folds (0 = all cores)"); };
  auto quiet = [&](CLI::App* c) { c->add_flag("--quiet", o.quiet, "Do not print per-epoch progress"); };

  std::map<std::string, int (*)(const Options&)> handlers;
  auto sub = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* c = app.add_subcommand(name, help);
    common(c);
    handlers[name] = fn;
    return c;
  };
  sub("gen-data", "Generate a synthetic dataset", cmd_gen_data);
  CLI::App* train = sub("train", "Train one model on a whole dataset", cmd_train);
  train->add_option("--data", o.data, "Dataset JSONL")->required();
  quiet(train);
  CLI::App* cv = sub("cv", "Cross-validate on a dataset", cmd_cv);
  cv->add_option("--data", o.data, "Dataset JSONL")->required();
  cv->add_flag("--resume", o.resume, "Reuse fold checkpoints already in the output directory");
  threads(cv);
  quiet(cv);
  CLI::App* ablate = sub("ablate", "Cross-validate every ablation configuration", cmd_ablate);
  ablate->add_option("--data", o.data, "Dataset JSONL")->required();
  threads(ablate);
  CLI::App* ev = sub("eval", "Evaluate a checkpoint on a dataset", cmd_eval);
  ev->add_option("--data", o.data, "Dataset JSONL")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
  sub("gradcheck", "Compare analytic gradients with finite differences", cmd_gradcheck);
  sub("losscheck", "Loss landscapes of a displaced drop", cmd_losscheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (o.threads == 0) o.threads = std::max(1u, std::thread::hardware_concurrency());

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return handlers.at(name)(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kConfig;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << std::endl;
    return kMismatch;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << std::endl;
    return kIo;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kNonFinite;
  } catch (const LeakageError& e) {
    std::cerr << "check failed: " << e.what() << std::endl;
    return kChecksFailed;
  } catch (const ChecksFailed& e) {
    std::cerr << e.what() << std::endl;
    return kChecksFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kInternal;
  }
}
