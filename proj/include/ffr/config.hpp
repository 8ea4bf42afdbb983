#pragma once

// Unified run configuration: one JSON document holding every section.
// Unknown keys and mistyped values are rejected with the offending field path.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ffr/losses.hpp"
#include "ffr/metrics.hpp"
#include "ffr/network.hpp"
#include "ffr/synthetic.hpp"
#include "ffr/trainer.hpp"

namespace ffr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  SyntheticConfig synthetic;
  NetworkConfig network;
  TrainConfig train;
  LossSpec loss;
  PPGConfig ppg;
  InferenceConfig inference;

  ExperimentConfig experiment() const { return {network, train, loss, ppg, inference}; }

  // Rethrows section validation failures as ConfigError.
  void validate() const {
    auto run = [](const char* section, auto&& fn) {
      try {
        fn();
      } catch (const std::invalid_argument& e) {
        const std::string what = e.what();
        throw ConfigError(what.rfind(section, 0) == 0 ? what : std::string(section) + ": " + what);
      }
    };
    run("synthetic", [&] { synthetic.validate(); });
    run("network", [&] { network.validate(); });
    run("train", [&] { train.validate(); });
    run("loss_weights", [&] { loss.weights.validate(); });
    run("histogram", [&] { loss.histogram.validate(); });
    run("ppg", [&] { ppg.validate(); });
    if (network.n_latent != 0 && network.n_latent != synthetic.n_latent) {
      throw ConfigError("network.n_latent: must be 0 or equal to synthetic.n_latent (" + std::to_string(synthetic.n_latent) + ")");
    }
    if (!loss.terms.use_emd && !loss.terms.use_mae && !loss.terms.use_hist && !loss.terms.use_mono) {
      throw ConfigError("loss_terms: at least one term must be enabled");
    }
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

using json = nlohmann::ordered_json;

// Reads fields out of one JSON object, remembering which keys were consumed.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, value, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
    }
  }

 private:
  static void read(const json& v, double& out, const std::string& p) {
    if (!v.is_number()) throw ConfigError(p + ": expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, bool& out, const std::string& p) {
    if (!v.is_boolean()) throw ConfigError(p + ": expected true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, std::size_t& out, const std::string& p) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(p + ": expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }
  static void read(const json& v, Range& out, const std::string& p) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(p + ": expected [lo, hi]");
    }
    out = {v[0].get<double>(), v[1].get<double>()};
  }
  static void read(const json& v, std::vector<std::size_t>& out, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array of integers");
    std::vector<std::size_t> tmp(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) read(v[i], tmp[i], p + "[" + std::to_string(i) + "]");
    out = std::move(tmp);
  }
  static void read(const json& v, std::optional<double>& out, const std::string& p) {
    if (v.is_string() && v.get<std::string>() == "auto") {
      out.reset();
      return;
    }
    if (!v.is_number()) throw ConfigError(p + ": expected a number or \"auto\"");
    out = v.get<double>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class SectionWriter {
 public:
  template <typename T>
  void operator()(const char* key, const T& value) {
    write(j[key], value);
  }
  json j = json::object();

 private:
  template <typename T>
  static void write(json& dst, const T& v) {
    dst = v;
  }
  static void write(json& dst, const Range& r) { dst = json::array({r.lo, r.hi}); }
  static void write(json& dst, const std::optional<double>& v) {
    if (v) {
      dst = *v;
    } else {
      dst = "auto";
    }
  }
};

template <typename V, typename C>
void visit_synthetic(V& v, C& c) {
  v("n_arteries", c.n_arteries);
  v("spacing_mm", c.spacing_mm);
  v("length_mm", c.length_mm);
  v("proximal_area_mm2", c.proximal_area_mm2);
  v("taper_fraction", c.taper_fraction);
  v("focal_fraction", c.focal_fraction);
  v("min_lesions", c.min_lesions);
  v("max_lesions", c.max_lesions);
  v("two_lesion_probability", c.two_lesion_probability);
  v("focal_extent_mm", c.focal_extent_mm);
  v("focal_severity", c.focal_severity);
  v("diffuse_extent_fraction", c.diffuse_extent_fraction);
  v("diffuse_severity", c.diffuse_severity);
  v("measurement_margin_mm", c.measurement_margin_mm);
  v("n_latent", c.n_latent);
  v("latent_noise", c.latent_noise);
  v("latent_smoothing", c.latent_smoothing);
  v("bifurcation_rate_per_mm", c.bifurcation_rate_per_mm);
  v("side_branch_rate_per_mm", c.side_branch_rate_per_mm);
  v("misregistration_max_mm", c.misregistration_max_mm);
  v("beta", c.beta);
  v("healthy_distal_ffr", c.healthy_distal_ffr);
  v("seed", c.seed);
}

template <typename V, typename C>
void visit_network(V& v, C& c) {
  v("n_filters", c.n_filters);
  v("dropout_p", c.dropout_p);
  v("channel_dropout", c.channel_dropout);
  v("lumen_dilations", c.lumen_dilations);
  v("latent_depth", c.latent_depth);
  v("head_depth", c.head_depth);
  v("pool_kernel", c.pool_kernel);
  v("n_latent", c.n_latent);
  v("seed", c.seed);
}

template <typename V, typename C>
void visit_train(V& v, C& c) {
  v("epochs", c.epochs);
  v("accumulation", c.accumulation);
  v("accumulate_mean", c.accumulate_mean);
  v("folds", c.folds);
  v("seed", c.seed);
  v("lr_max", c.lr.lr_max);
  v("lr_min", c.lr.lr_min);
  v("lr_period_epochs", c.lr.period_epochs);
  v("lr_start_at_max", c.lr.start_at_max);
  v("adam_beta1", c.adamw.beta1);
  v("adam_beta2", c.adamw.beta2);
  v("adam_eps", c.adamw.eps);
  v("weight_decay", c.adamw.weight_decay);
}

template <typename V, typename C>
void visit_weights(V& v, C& c) {
  v("emd", c.emd);
  v("hist", c.hist);
  v("mono", c.mono);
  v("mae", c.mae);
}

template <typename V, typename C>
void visit_histogram(V& v, C& c) {
  v("n_bins", c.n_bins);
  v("sigma", c.sigma);
  v("range_min", c.range_min);
  v("range_max", c.range_max);
  v("floor_weight", c.floor_weight);
}

template <typename V, typename C>
void visit_terms(V& v, C& c) {
  v("use_emd", c.use_emd);
  v("use_mae", c.use_mae);
  v("use_hist", c.use_hist);
  v("use_mono", c.use_mono);
}

template <typename V, typename C>
void visit_ppg(V& v, C& c) {
  v("window_mm", c.window_mm);
  v("disease_rate_per_mm", c.disease_rate_per_mm);
  v("classification_threshold", c.classification_threshold);
  v("resample_mm", c.resample_mm);
}

template <typename V, typename C>
void visit_inference(V& v, C& c) {
  v("dropout_samples", c.dropout_samples);
  v("seed", c.seed);
}

template <typename C, typename Visit>
void read_section(const json& root, const char* name, C& c, Visit visit) {
  auto it = root.find(name);
  if (it == root.end()) return;
  SectionReader r(*it, name);
  visit(r, c);
  r.finish();
}

template <typename C, typename Visit>
json write_section(const C& c, Visit visit) {
  SectionWriter w;
  visit(w, c);
  return w.j;
}

inline const std::vector<std::string>& section_names() {
  static const std::vector<std::string> names{"synthetic", "network", "train", "loss_weights", "histogram", "loss_terms", "ppg", "inference"};
  return names;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  using namespace detail;
  json j = json::object();
  j["synthetic"] = write_section(c.synthetic, [](auto& v, auto& x) { visit_synthetic(v, x); });
  j["network"] = write_section(c.network, [](auto& v, auto& x) { visit_network(v, x); });
  j["train"] = write_section(c.train, [](auto& v, auto& x) { visit_train(v, x); });
  j["loss_weights"] = write_section(c.loss.weights, [](auto& v, auto& x) { visit_weights(v, x); });
  j["histogram"] = write_section(c.loss.histogram, [](auto& v, auto& x) { visit_histogram(v, x); });
  j["loss_terms"] = write_section(c.loss.terms, [](auto& v, auto& x) { visit_terms(v, x); });
  j["ppg"] = write_section(c.ppg, [](auto& v, auto& x) { visit_ppg(v, x); });
  j["inference"] = write_section(c.inference, [](auto& v, auto& x) { visit_inference(v, x); });
  return j;
}

// Missing sections and fields keep their defaults. Validates the result.
inline RunConfig run_config_from_json(const nlohmann::ordered_json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& names = section_names();
    if (std::find(names.begin(), names.end(), it.key()) == names.end()) throw ConfigError(it.key() + ": unknown section");
  }
  RunConfig c;
  read_section(j, "synthetic", c.synthetic, [](auto& v, auto& x) { visit_synthetic(v, x); });
  read_section(j, "network", c.network, [](auto& v, auto& x) { visit_network(v, x); });
  read_section(j, "train", c.train, [](auto& v, auto& x) { visit_train(v, x); });
  read_section(j, "loss_weights", c.loss.weights, [](auto& v, auto& x) { visit_weights(v, x); });
  read_section(j, "histogram", c.loss.histogram, [](auto& v, auto& x) { visit_histogram(v, x); });
  read_section(j, "loss_terms", c.loss.terms, [](auto& v, auto& x) { visit_terms(v, x); });
  read_section(j, "ppg", c.ppg, [](auto& v, auto& x) { visit_ppg(v, x); });
  read_section(j, "inference", c.inference, [](auto& v, auto& x) { visit_inference(v, x); });
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// Applies "section.field=value" to a config document. The value is parsed as
// JSON when possible (numbers, booleans, "auto" as a bare word is kept as a
// string). Only existing scalar fields may be overridden.
inline void apply_override(nlohmann::ordered_json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "': expected section.field=value");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string field = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  const std::string path = section + "." + field;
  if (!j.contains(section) || !j[section].is_object() || !j[section].contains(field)) {
    throw ConfigError(path + ": unknown key");
  }
  auto& slot = j[section][field];
  if (slot.is_array() || slot.is_object()) throw ConfigError(path + ": only scalar fields can be overridden");
  nlohmann::ordered_json value;
  try {
    value = nlohmann::ordered_json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  if (value.is_array() || value.is_object()) throw ConfigError(path + ": override value must be a scalar");
  slot = value;
}

}  // namespace ffr
