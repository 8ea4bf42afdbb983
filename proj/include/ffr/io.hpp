#pragma once

// File formats: JSON-lines artery datasets, parameter checkpoints, metric
// reports (JSON + CSV), per-artery curve tables and training logs.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ffr/artery.hpp"
#include "ffr/config.hpp"
#include "ffr/metrics.hpp"
#include "ffr/network.hpp"
#include "ffr/synthetic.hpp"
#include "ffr/trainer.hpp"

namespace ffr {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint does not fit the requested network.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ojson = nlohmann::ordered_json;

inline constexpr const char* kDatasetFormat = "ffr-pullback-dataset/1";
inline constexpr const char* kCheckpointFormat = "ffr-pullback-checkpoint/1";

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read error on '" + p.string() + "'");
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write error on '" + p.string() + "'");
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetHeader {
  std::optional<std::uint64_t> seed;
  std::optional<OracleConfig> oracle;
  std::size_t n_arteries = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<ArteryRecord> records;
};

inline ojson artery_to_json(const ArteryRecord& r) {
  const CharacteristicSet& c = r.characteristics;
  ojson j;
  j["id"] = r.id;
  j["spacing_mm"] = c.grid.spacing_mm();
  j["lumen_area"] = c.lumen_area;
  j["bifurcation"] = c.bifurcation;
  j["side_branch"] = c.side_branch;
  j["latent"] = c.latent;
  j["ref_ffr"] = r.ref_drops ? ojson(drops_to_ffr(*r.ref_drops).ffr) : ojson(nullptr);
  j["measurement_end_index"] = r.measurement_end_index;
  if (r.label) j["label"] = to_string(*r.label);
  j["misregistration_mm"] = r.misregistration_mm;
  return j;
}

namespace detail {

inline std::vector<double> number_array(const ojson& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw IoError(where + ": missing field '" + key + "'");
  if (!it->is_array()) throw IoError(where + ": field '" + std::string(key) + "' must be an array");
  std::vector<double> v;
  v.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number()) throw IoError(where + ": field '" + std::string(key) + "' must hold numbers only");
    v.push_back(x.get<double>());
  }
  return v;
}

}  // namespace detail

// A reference curve shorter than the grid is extended with its last value
// (no drop past the measured extent).
inline ArteryRecord artery_from_json(const ojson& j, const std::string& where) {
  if (!j.is_object()) throw IoError(where + ": expected an object");
  static const std::vector<std::string> known{"id",     "spacing_mm", "lumen_area",           "bifurcation", "side_branch",
                                              "latent", "ref_ffr",    "measurement_end_index", "label",       "misregistration_mm"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) throw IoError(where + ": unknown field '" + it.key() + "'");
  }
  try {
    ArteryRecord r;
    if (!j.contains("id") || !j["id"].is_string()) throw IoError(where + ": 'id' must be a string");
    r.id = j["id"].get<std::string>();
    const std::string at = where + " ('" + r.id + "')";
    if (!j.contains("spacing_mm") || !j["spacing_mm"].is_number()) throw IoError(at + ": 'spacing_mm' must be a number");
    std::vector<double> lumen = detail::number_array(j, "lumen_area", at);
    const Grid g(j["spacing_mm"].get<double>(), lumen.size());
    CharacteristicSet& c = r.characteristics;
    c.grid = g;
    c.lumen_area = std::move(lumen);
    c.bifurcation = detail::number_array(j, "bifurcation", at);
    c.side_branch = detail::number_array(j, "side_branch", at);
    if (!j.contains("latent") || !j["latent"].is_array()) throw IoError(at + ": 'latent' must be an array of arrays");
    for (const auto& ch : j["latent"]) {
      if (!ch.is_array()) throw IoError(at + ": 'latent' must be an array of arrays");
      std::vector<double> v;
      for (const auto& x : ch) {
        if (!x.is_number()) throw IoError(at + ": 'latent' must hold numbers only");
        v.push_back(x.get<double>());
      }
      c.latent.push_back(std::move(v));
    }
    if (!j.contains("measurement_end_index") || !j["measurement_end_index"].is_number_unsigned()) {
      throw IoError(at + ": 'measurement_end_index' must be a non-negative integer");
    }
    r.measurement_end_index = j["measurement_end_index"].get<std::size_t>();
    if (j.contains("ref_ffr") && !j["ref_ffr"].is_null()) {
      std::vector<double> f = detail::number_array(j, "ref_ffr", at);
      if (f.size() < 2 || f.size() > g.n_points()) throw IoError(at + ": 'ref_ffr' length must lie in [2, n_points]");
      f.resize(g.n_points(), f.back());
      r.ref_drops = reference_drops_from_curve(PullbackCurve(g, std::move(f)));
    }
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_string()) throw IoError(at + ": 'label' must be \"focal\" or \"diffuse\"");
      r.label = lesion_class_from_string(j["label"].get<std::string>());
    }
    if (j.contains("misregistration_mm")) {
      if (!j["misregistration_mm"].is_number()) throw IoError(at + ": 'misregistration_mm' must be a number");
      r.misregistration_mm = j["misregistration_mm"].get<double>();
    }
    r.validate();
    return r;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(where + ": " + e.what());
  }
}

inline std::string dataset_to_jsonl(const Dataset& d) {
  std::string out;
  ojson h;
  h["format"] = kDatasetFormat;
  h["n_arteries"] = d.records.size();
  if (d.header.seed) h["seed"] = *d.header.seed;
  if (d.header.oracle) {
    h["oracle"] = {{"alpha", d.header.oracle->alpha},
                   {"beta", d.header.oracle->beta},
                   {"healthy_distal_ffr", d.header.oracle->healthy_distal_ffr}};
  }
  out += ojson{{"header", h}}.dump() + "\n";
  for (const auto& r : d.records) out += artery_to_json(r).dump() + "\n";
  return out;
}

inline Dataset dataset_from_synthetic(const SyntheticDataset& s) {
  Dataset d;
  d.header.seed = s.seed;
  d.header.oracle = s.oracle;
  d.header.n_arteries = s.records.size();
  d.records = s.records;
  return d;
}

// The header line is optional so plain one-artery-per-line files also load.
inline Dataset parse_dataset_jsonl(const std::string& text, const std::string& name = "dataset") {
  Dataset d;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(where + ": invalid JSON: " + e.what());
    }
    if (j.is_object() && j.contains("header")) {
      if (header_seen || !d.records.empty()) throw IoError(where + ": header must be the first line");
      header_seen = true;
      const ojson& h = j["header"];
      if (h.value("format", std::string()) != kDatasetFormat) throw IoError(where + ": unsupported dataset format");
      if (h.contains("seed")) d.header.seed = h["seed"].get<std::uint64_t>();
      if (h.contains("oracle")) {
        OracleConfig o;
        o.alpha = h["oracle"].at("alpha").get<double>();
        o.beta = h["oracle"].at("beta").get<double>();
        o.healthy_distal_ffr = h["oracle"].at("healthy_distal_ffr").get<double>();
        d.header.oracle = o;
      }
      d.header.n_arteries = h.value("n_arteries", std::size_t{0});
      continue;
    }
    d.records.push_back(artery_from_json(j, where));
  }
  if (header_seen && d.header.n_arteries != d.records.size()) {
    throw IoError(name + ": header announces " + std::to_string(d.header.n_arteries) + " arteries, file holds " +
                  std::to_string(d.records.size()));
  }
  if (d.records.empty()) throw IoError(name + ": no arteries");
  d.header.n_arteries = d.records.size();
  return d;
}

inline void save_dataset(const std::filesystem::path& p, const Dataset& d) { write_text(p, dataset_to_jsonl(d)); }

inline Dataset load_dataset(const std::filesystem::path& p) { return parse_dataset_jsonl(read_text(p), p.string()); }

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  PullbackNet net;
  NormalizationStats stats;
};

inline ojson checkpoint_to_json(const PullbackNet& net, const NormalizationStats& stats) {
  ojson h;
  h["format"] = kCheckpointFormat;
  h["network"] = detail::write_section(net.config(), [](auto& v, auto& x) { detail::visit_network(v, x); });
  h["normalization"] = {{"mean", stats.mean}, {"stddev", stats.stddev}};
  ojson params = ojson::object();
  for (const auto& p : net.parameters()) {
    ojson rows = ojson::array();
    const ad::Tensor& t = p.value();
    for (std::size_t r = 0; r < t.channels; ++r) {
      rows.push_back(std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(r * t.length),
                                         t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.length)));
    }
    params[p.name()] = std::move(rows);
  }
  return ojson{{"header", h}, {"parameters", params}};
}

inline std::string checkpoint_to_string(const PullbackNet& net, const NormalizationStats& stats) {
  return checkpoint_to_json(net, stats).dump() + "\n";
}

// `expected`, when given, must equal the stored network config.
inline Checkpoint checkpoint_from_json(const ojson& j, const std::optional<NetworkConfig>& expected = std::nullopt,
                                       const std::string& name = "checkpoint") {
  if (!j.is_object() || !j.contains("header") || !j.contains("parameters")) {
    throw CheckpointMismatch(name + ": not a checkpoint (missing header or parameters)");
  }
  const ojson& h = j["header"];
  if (h.value("format", std::string()) != kCheckpointFormat) throw CheckpointMismatch(name + ": unsupported checkpoint format");
  NetworkConfig cfg;
  try {
    detail::read_section(h, "network", cfg, [](auto& v, auto& x) { detail::visit_network(v, x); });
  } catch (const ConfigError& e) {
    throw CheckpointMismatch(name + ": " + e.what());
  }
  if (expected && !(*expected == cfg)) throw CheckpointMismatch(name + ": network configuration differs from the requested one");
  NormalizationStats stats;
  stats.mean = h.at("normalization").at("mean").get<std::vector<double>>();
  stats.stddev = h.at("normalization").at("stddev").get<std::vector<double>>();
  if (stats.mean.size() != stats.stddev.size() || stats.n_latent() != cfg.n_latent) {
    throw CheckpointMismatch(name + ": normalization statistics do not fit the network");
  }
  PullbackNet net(cfg);
  const ojson& params = j["parameters"];
  if (params.size() != net.parameters().size()) throw CheckpointMismatch(name + ": parameter count differs from the network");
  for (auto& p : net.parameters()) {
    if (!params.contains(p.name())) throw CheckpointMismatch(name + ": missing parameter '" + p.name() + "'");
    const ojson& rows = params[p.name()];
    ad::Tensor& t = p.value();
    if (!rows.is_array() || rows.size() != t.channels) throw CheckpointMismatch(name + ": shape mismatch for '" + p.name() + "'");
    for (std::size_t r = 0; r < t.channels; ++r) {
      if (!rows[r].is_array() || rows[r].size() != t.length) throw CheckpointMismatch(name + ": shape mismatch for '" + p.name() + "'");
      for (std::size_t c = 0; c < t.length; ++c) t.data[r * t.length + c] = rows[r][c].get<double>();
    }
  }
  return {std::move(net), std::move(stats)};
}

inline void save_checkpoint(const std::filesystem::path& p, const PullbackNet& net, const NormalizationStats& stats) {
  write_text(p, checkpoint_to_string(net, stats));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p, const std::optional<NetworkConfig>& expected = std::nullopt) {
  ojson j;
  try {
    j = ojson::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(p.string() + ": invalid JSON: " + e.what());
  }
  return checkpoint_from_json(j, expected, p.string());
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline ojson opt_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }
inline ojson opt_class(const std::optional<LesionClass>& c) { return c ? ojson(to_string(*c)) : ojson(nullptr); }

inline ojson bland_altman_json(const std::optional<BlandAltman>& b) {
  if (!b) return nullptr;
  return {{"bias", b->bias}, {"lower_limit", b->lower_limit}, {"upper_limit", b->upper_limit}, {"sd", b->sd}};
}

inline std::string csv_number(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

inline std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }
inline std::string csv_class(const std::optional<LesionClass>& c) { return c ? to_string(*c) : std::string(); }

}  // namespace detail

inline ojson summary_to_json(const MetricsSummary& s) {
  ojson j;
  j["n_arteries"] = s.n_arteries;
  j["n_classified"] = s.n_classified;
  j["n_skipped"] = s.n_skipped;
  j["aupc_mad"] = s.aupc_mad;
  j["min_ffr_mad"] = s.min_ffr_mad;
  j["accuracy"] = s.confusion.accuracy;
  j["sensitivity"] = detail::opt_number(s.confusion.sensitivity);
  j["specificity"] = detail::opt_number(s.confusion.specificity);
  j["confusion"] = {{"true_focal", s.confusion.true_pos},
                    {"false_diffuse", s.confusion.false_neg},
                    {"true_diffuse", s.confusion.true_neg},
                    {"false_focal", s.confusion.false_pos}};
  j["ppg_bland_altman"] = detail::bland_altman_json(s.ppg_agreement);
  j["ffr_bland_altman"] = detail::bland_altman_json(s.ffr_agreement);
  j["histogram_overlap"] = s.histogram_overlap;
  return j;
}

inline ojson report_to_json(const MetricsReport& r) {
  ojson rows = ojson::array();
  for (const auto& m : r.rows) {
    ojson row;
    row["id"] = m.id;
    row["fold"] = m.fold;
    row["aupc_pred"] = m.aupc_pred;
    row["aupc_ref"] = m.aupc_ref;
    row["min_ffr_pred"] = m.min_ffr_pred;
    row["min_ffr_ref"] = m.min_ffr_ref;
    row["ppg_pred"] = detail::opt_number(m.ppg_pred);
    row["ppg_ref"] = detail::opt_number(m.ppg_ref);
    row["class_pred"] = detail::opt_class(m.class_pred);
    row["class_ref"] = detail::opt_class(m.class_ref);
    row["threshold"] = m.threshold;
    row["label"] = detail::opt_class(m.label);
    rows.push_back(std::move(row));
  }
  return ojson{{"summary", summary_to_json(r.summary)}, {"skipped", r.skipped}, {"arteries", rows}};
}

inline std::string report_csv(const MetricsReport& r) {
  std::string out = "id,aupc_pred,aupc_ref,ppg_pred,ppg_ref,class_pred,class_ref\n";
  for (const auto& m : r.rows) {
    out += m.id + "," + detail::csv_number(m.aupc_pred) + "," + detail::csv_number(m.aupc_ref) + "," +
           detail::csv_number(m.ppg_pred) + "," + detail::csv_number(m.ppg_ref) + "," + detail::csv_class(m.class_pred) + "," +
           detail::csv_class(m.class_ref) + "\n";
  }
  return out;
}

// One row per grid point of the artery: the supervision-grid prediction is
// interpolated onto the native grid.
inline std::string curve_csv(const ArteryRecord& r, const PullbackCurve& pred_native) {
  std::string out = "position_mm,ffr_pred,ffr_ref,lumen_area\n";
  const Grid& g = r.grid();
  std::optional<PullbackCurve> ref;
  if (r.ref_drops) ref = drops_to_ffr(*r.ref_drops);
  for (std::size_t i = 0; i < g.n_points(); ++i) {
    out += detail::csv_number(g.position_mm(i)) + "," + detail::csv_number(pred_native.ffr[i]) + "," +
           (ref ? detail::csv_number(ref->ffr[i]) : std::string()) + "," + detail::csv_number(r.characteristics.lumen_area[i]) +
           "\n";
  }
  return out;
}

inline ojson epoch_log_to_json(const EpochLog& l) {
  return ojson{{"epoch", l.epoch},     {"lr", l.lr},           {"total", l.mean.total}, {"emd", l.mean.emd},
               {"hist", l.mean.hist},  {"mono", l.mean.mono},  {"mae", l.mean.mae}};
}

inline std::string training_log_jsonl(std::span<const EpochLog> log) {
  std::string out;
  for (const auto& l : log) out += epoch_log_to_json(l).dump() + "\n";
  return out;
}

inline ojson ablation_to_json(std::span<const AblationRow> rows) {
  ojson out = ojson::array();
  for (const auto& r : rows) {
    ojson j;
    j["configuration"] = r.setting.name;
    j["use_emd"] = r.setting.terms.use_emd;
    j["use_mae"] = r.setting.terms.use_mae;
    j["use_hist"] = r.setting.terms.use_hist;
    j["use_mono"] = r.setting.terms.use_mono;
    j["accuracy"] = r.summary.confusion.accuracy;
    j["sensitivity"] = detail::opt_number(r.summary.confusion.sensitivity);
    j["specificity"] = detail::opt_number(r.summary.confusion.specificity);
    j["aupc_mad"] = r.summary.aupc_mad;
    out.push_back(std::move(j));
  }
  return out;
}

inline std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "configuration,emd,mae,hist,accuracy,sensitivity,specificity,aupc_mad\n";
  auto mark = [](bool b) { return std::string(b ? "x" : ""); };
  for (const auto& r : rows) {
    out += r.setting.name + "," + mark(r.setting.terms.use_emd) + "," + mark(r.setting.terms.use_mae) + "," +
           mark(r.setting.terms.use_hist) + "," + detail::csv_number(r.summary.confusion.accuracy) + "," +
           detail::csv_number(r.summary.confusion.sensitivity) + "," + detail::csv_number(r.summary.confusion.specificity) + "," +
           detail::csv_number(r.summary.aupc_mad) + "\n";
  }
  return out;
}

}  // namespace ffr
