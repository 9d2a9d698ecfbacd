/*
 * Copyright 2026 The noisylab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Experiment runner: flat key=value configuration, presets, the (variant,
// seed) grid, and the CSV/text outputs.
//
// Output directory layout:
//   runs/<variant>_seed<s>.csv          per-epoch report (deterministic)
//   runs/<variant>_seed<s>.timing.csv   wall-clock seconds per epoch
//   summary.csv, summary.txt            final accuracy mean/std per variant
//   noise_matrix.csv                    initial empirical noise matrix, full precision
//   noise_matrix_display.csv            same, 2 decimals
//   curves.csv                          variant,seed,epoch,accuracy,label_accuracy,flip_rate

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "noisylab/dataset.hpp"
#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/synth.hpp"
#include "noisylab/trainer.hpp"

namespace noisylab {

// ---------------------------------------------------------------------------
// Flat configuration

/// Ordered key=value store. Lines are `key = value`; `#` starts a comment.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "config") {
    Config c;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const std::string_view t = io::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
      }
      c.set(std::string(io::trim(t.substr(0, eq))), std::string(io::trim(t.substr(eq + 1))));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in, path);
  }

  /// Applies "key=value".
  void apply_override(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "' is not key=value");
    set(std::string(io::trim(kv.substr(0, eq))), std::string(io::trim(kv.substr(eq + 1))));
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("empty config key");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Every key must be consumed by the reader; leftovers are typos.
  void require_known(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return io::parse_double(it->second, 0);
    } catch (const FormatError&) {
      throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
    }
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    try {
      v = io::parse_int(it->second, 0);
    } catch (const FormatError&) {
      throw ConfigError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false");
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    auto it = values_.find(key);
    if (it == values_.end() || io::trim(it->second).empty()) return out;
    for (auto cell : io::split(it->second)) {
      try {
        out.push_back(io::parse_double(cell, 0));
      } catch (const FormatError&) {
        throw ConfigError("config key '" + key + "': '" + std::string(cell) + "' is not a number");
      }
    }
    return out;
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = values_.find(key);
    if (it == values_.end()) return out;
    for (auto cell : io::split(it->second)) {
      if (!io::trim(cell).empty()) out.emplace_back(io::trim(cell));
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "preset",         "data",           "output",           "seeds",           "variants",
      "threads",        "synth.classes",  "synth.per_class",  "synth.dim",       "synth.separation",
      "synth.std",      "synth.seed",     "noise.accuracy",   "noise.confuse_to", "noise.confuse_share",
      "noise.pairs",    "noise.confidence", "noise.seed",     "data.features",   "data.labels",
      "data.truth",     "train.epochs",   "train.batch_size", "train.lr_backbone", "train.lr_head",
      "train.momentum", "loss.temperature", "loss.lambda",    "loss.kl_direction", "loss.denominator",
      "loss.kl_on_aug", "label.tau",      "augment.sigma",    "augment.dropout", "model.hidden",
      "model.bn_momentum", "model.bn_eps"};
  return keys;
}

// ---------------------------------------------------------------------------
// Presets

inline constexpr std::string_view kPaperRegimeAccuracy = "0.6,0.5,0.45,0.7,0.3,0.01,0.55,0.95,0.8,0.64";

/// Built-in settings. Values set in a config file or by overrides win.
inline Config preset(std::string_view name) {
  Config c;
  if (name == "paper-regime" || name == "clean") {
    c.set("data", "synthetic");
    c.set("synth.classes", "10");
    c.set("synth.per_class", "500");
    c.set("synth.dim", "16");
    c.set("synth.separation", "4");
    c.set("synth.std", "1");
    c.set("noise.confidence", "0.9");
    c.set("augment.sigma", "0.8");
    c.set("augment.dropout", "0.3");
    c.set("train.epochs", "50");
    c.set("seeds", "1,2,3,4,5");
    if (name == "paper-regime") {
      // Each class leaks most of its error mass into one other class.
      c.set("noise.accuracy", std::string(kPaperRegimeAccuracy));
      c.set("noise.confuse_to", "1,4,7,0,3,6,9,2,5,8");
      c.set("noise.confuse_share", "0.8");
      c.set("variants", "c3l+ensemble,c3l+pseudo,kl_only+clip");
    } else {
      c.set("noise.accuracy", "1,1,1,1,1,1,1,1,1,1");
      c.set("variants", "kl_only+clip");
    }
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: paper-regime, clean)");
}

/// Preset (if named) overlaid with the file's keys, then the overrides.
inline Config resolve_config(const Config& file, const std::vector<std::string>& overrides) {
  Config merged = file;
  for (const auto& kv : overrides) merged.apply_override(kv);
  Config out;
  const std::string name = merged.get("preset", "");
  if (!name.empty()) out = preset(name);
  for (const auto& [k, v] : merged.values()) out.set(k, v);
  out.require_known(known_config_keys());
  return out;
}

// ---------------------------------------------------------------------------
// Experiment specification

struct Variant {
  LossKind loss = LossKind::c3l;
  UpdateStrategy strategy = UpdateStrategy::ensemble;

  std::string name() const { return std::string(to_string(loss)) + "+" + std::string(to_string(strategy)); }
  bool operator==(const Variant&) const = default;
};

/// "c3l+ensemble", "kl_only+clip", ...; a bare loss means ensemble labels.
inline Variant parse_variant(std::string_view s) {
  const auto plus = s.find('+');
  Variant v;
  v.loss = parse_loss_kind(io::trim(s.substr(0, plus)));
  if (plus != std::string_view::npos) v.strategy = parse_update_strategy(io::trim(s.substr(plus + 1)));
  return v;
}

struct SyntheticSource {
  SynthConfig synth;
  NoiseSpec noise;
  double confidence = 0.9;
  std::uint64_t noise_seed = 7;
};

struct ExternalSource {
  std::string features;
  std::string labels;
  std::optional<std::string> truth;
};

struct ExperimentSpec {
  std::variant<SyntheticSource, ExternalSource> source;
  TrainConfig train;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::size_t threads = 1;

  void validate() const {
    if (variants.empty()) throw ConfigError("experiment needs at least one variant");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j]) throw ConfigError("seeds must be distinct");
    for (std::size_t i = 0; i < variants.size(); ++i)
      for (std::size_t j = i + 1; j < variants.size(); ++j)
        if (variants[i] == variants[j]) throw ConfigError("variant " + variants[i].name() + " listed twice");
    if (output_dir.empty()) throw ConfigError("experiment needs an output directory");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    train.validate();
    if (const auto* s = std::get_if<SyntheticSource>(&source)) {
      s->synth.validate();
      try {
        (void)induced_matrix(s->noise, s->synth.num_classes);
      } catch (const DimensionError& e) {
        throw ConfigError(e.what());
      }
      if (!(s->confidence > 0.0 && s->confidence <= 1.0)) throw ConfigError("noise.confidence must lie in (0, 1]");
    }
  }
};

/// Accuracy vector with an optional per-class confusion target: class j keeps
/// accuracy[j], sends share * (1 - accuracy[j]) to confuse_to[j] and spreads
/// the rest uniformly over the remaining classes.
inline NoiseMatrix targeted_noise_matrix(std::span<const double> accuracy, std::span<const double> confuse_to,
                                         double share) {
  const std::size_t c = accuracy.size();
  NoiseMatrix nm = noise_matrix_from_accuracy(accuracy);
  if (confuse_to.empty()) return nm;
  if (confuse_to.size() != c) throw ConfigError("noise.confuse_to needs one entry per class");
  if (!(share >= 0.0 && share <= 1.0)) throw ConfigError("noise.confuse_share must lie in [0, 1]");
  if (c < 3 && share < 1.0) share = 1.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double t = confuse_to[j];
    if (t < 0 || t >= static_cast<double>(c) || t != std::floor(t) || static_cast<std::size_t>(t) == j) {
      throw ConfigError("noise.confuse_to entry " + std::to_string(j) + " must name another class");
    }
    const auto target = static_cast<std::size_t>(t);
    const double off = 1.0 - accuracy[j];
    for (std::size_t k = 0; k < c; ++k) {
      if (k == j) continue;
      nm.probs(j, k) = k == target ? off * share : off * (1.0 - share) / static_cast<double>(c - 2);
    }
  }
  return nm;
}

inline ConfusionPairs parse_pairs(const std::string& text) {
  ConfusionPairs cp;
  std::string_view rest = text;
  while (!io::trim(rest).empty()) {
    const auto semi = rest.find(';');
    const std::string_view item = io::trim(rest.substr(0, semi));
    rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
    if (item.empty()) continue;
    const auto parts = io::split(item, ':');
    if (parts.size() != 3) throw ConfigError("noise.pairs entries look like from:to:mass");
    try {
      const long long from = io::parse_int(parts[0], 0);
      const long long to = io::parse_int(parts[1], 0);
      if (from < 0 || to < 0) throw ConfigError("noise.pairs classes must be non-negative");
      cp.pairs.push_back({static_cast<std::size_t>(from), static_cast<std::size_t>(to), io::parse_double(parts[2], 0)});
    } catch (const FormatError&) {
      throw ConfigError("noise.pairs: cannot parse '" + std::string(item) + "'");
    }
  }
  return cp;
}

/// Builds a spec from a resolved config.
inline ExperimentSpec spec_from_config(const Config& c) {
  c.require_known(known_config_keys());
  ExperimentSpec spec;

  const std::string data = c.get("data", "synthetic");
  if (data == "synthetic") {
    SyntheticSource s;
    s.synth.num_classes = c.get_uint("synth.classes", s.synth.num_classes);
    s.synth.per_class_count = c.get_uint("synth.per_class", s.synth.per_class_count);
    s.synth.feature_dim = c.get_uint("synth.dim", s.synth.feature_dim);
    s.synth.class_center_separation = c.get_double("synth.separation", s.synth.class_center_separation);
    s.synth.intra_class_std = c.get_double("synth.std", s.synth.intra_class_std);
    s.synth.seed = c.get_uint("synth.seed", 100);
    s.confidence = c.get_double("noise.confidence", s.confidence);
    s.noise_seed = c.get_uint("noise.seed", s.noise_seed);
    if (c.has("noise.pairs")) {
      if (c.has("noise.accuracy")) throw ConfigError("give either noise.accuracy or noise.pairs, not both");
      s.noise = parse_pairs(c.get("noise.pairs", ""));
    } else {
      std::vector<double> acc = c.get_doubles("noise.accuracy");
      if (acc.empty()) acc.assign(s.synth.num_classes, 1.0);
      s.noise = targeted_noise_matrix(acc, c.get_doubles("noise.confuse_to"), c.get_double("noise.confuse_share", 0.0));
    }
    spec.source = std::move(s);
  } else if (data == "external") {
    ExternalSource e;
    e.features = c.get("data.features", "");
    e.labels = c.get("data.labels", "");
    if (e.features.empty() || e.labels.empty()) throw ConfigError("external data needs data.features and data.labels");
    if (c.has("data.truth")) e.truth = c.get("data.truth", "");
    spec.source = std::move(e);
  } else {
    throw ConfigError("data must be 'synthetic' or 'external', got '" + data + "'");
  }

  TrainConfig& t = spec.train;
  t.epochs = c.get_uint("train.epochs", t.epochs);
  t.batch_size = c.get_uint("train.batch_size", t.batch_size);
  t.lr_backbone = c.get_double("train.lr_backbone", t.lr_backbone);
  t.lr_head = c.get_double("train.lr_head", t.lr_head);
  t.momentum = c.get_double("train.momentum", t.momentum);
  t.loss_cfg.temperature = c.get_double("loss.temperature", t.loss_cfg.temperature);
  t.loss_cfg.lambda = c.get_double("loss.lambda", t.loss_cfg.lambda);
  if (c.has("loss.kl_direction")) t.loss_cfg.kl_direction = parse_kl_direction(c.get("loss.kl_direction", ""));
  if (c.has("loss.denominator")) t.loss_cfg.denominator = parse_denominator(c.get("loss.denominator", ""));
  t.kl_on_aug = c.get_bool("loss.kl_on_aug", t.kl_on_aug);
  t.rescale.tau = c.get_double("label.tau", t.rescale.tau);
  t.augment.gaussian_sigma = c.get_double("augment.sigma", t.augment.gaussian_sigma);
  t.augment.dropout_prob = c.get_double("augment.dropout", t.augment.dropout_prob);
  t.model.hidden = c.get_uint("model.hidden", t.model.hidden);
  t.model.bn_momentum = c.get_double("model.bn_momentum", t.model.bn_momentum);
  t.model.bn_eps = c.get_double("model.bn_eps", t.model.bn_eps);

  for (const auto& v : c.get_list("variants")) spec.variants.push_back(parse_variant(v));
  if (!c.has("variants")) spec.variants.push_back(Variant{});
  for (const auto& s : c.get_list("seeds")) {
    try {
      const long long v = io::parse_int(s, 0);
      if (v < 0) throw ConfigError("seeds must be non-negative");
      spec.seeds.push_back(static_cast<std::uint64_t>(v));
    } catch (const FormatError&) {
      throw ConfigError("seeds: '" + s + "' is not an integer");
    }
  }
  if (!c.has("seeds")) spec.seeds.push_back(1);
  spec.output_dir = c.get("output", "noisylab_out");
  spec.threads = c.get_uint("threads", 1);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Report files

inline std::string format_optional(const std::optional<double>& v) { return v ? io::format_double(*v) : ""; }

/// One row per epoch; empty cells for metrics that need ground truth.
inline void write_run_report(std::ostream& out, const RunReport& r, std::size_t num_classes) {
  out << "epoch,accuracy,label_accuracy,mean_kl,mean_cc,flip_rate";
  for (std::size_t k = 0; k < num_classes; ++k) out << ",class_" << k;
  out << '\n';
  for (const EpochRecord& e : r.epochs) {
    out << e.epoch << ',' << format_optional(e.accuracy) << ',' << format_optional(e.label_accuracy) << ','
        << io::format_double(e.mean_kl) << ',' << io::format_double(e.mean_cc) << ',' << io::format_double(e.flip_rate);
    for (std::size_t k = 0; k < num_classes; ++k) {
      out << ',';
      if (k < e.per_class_accuracy.size()) out << io::format_double(e.per_class_accuracy[k]);
    }
    out << '\n';
  }
}

inline RunReport read_run_report(std::istream& in) {
  const auto lines = io::read_lines(in);
  if (lines.empty()) throw FormatError("run report is empty");
  const auto header = io::split(lines[0].text);
  if (header.size() < 6 || header[0] != "epoch") throw FormatError("run report: bad header");
  const std::size_t c = header.size() - 6;
  auto opt = [](std::string_view cell, std::size_t line) -> std::optional<double> {
    if (io::trim(cell).empty()) return std::nullopt;
    return io::parse_double(cell, line);
  };
  RunReport r;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = io::split(lines[i].text);
    if (cells.size() != header.size()) throw ParseError("run report: wrong cell count", lines[i].number);
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(io::parse_int(cells[0], lines[i].number));
    e.accuracy = opt(cells[1], lines[i].number);
    e.label_accuracy = opt(cells[2], lines[i].number);
    e.mean_kl = io::parse_double(cells[3], lines[i].number);
    e.mean_cc = io::parse_double(cells[4], lines[i].number);
    e.flip_rate = io::parse_double(cells[5], lines[i].number);
    for (std::size_t k = 0; k < c; ++k) {
      if (const auto v = opt(cells[6 + k], lines[i].number)) e.per_class_accuracy.push_back(*v);
    }
    r.append(std::move(e));
  }
  return r;
}

inline void write_timing(std::ostream& out, const RunReport& r) {
  out << "epoch,seconds\n";
  for (const EpochRecord& e : r.epochs) out << e.epoch << ',' << io::format_double(e.seconds) << '\n';
}

inline std::vector<std::string> default_class_names(std::size_t c) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < c; ++k) out.push_back("class_" + std::to_string(k));
  return out;
}

struct HeatmapCsv {
  std::string data;     // full precision
  std::string display;  // 2 decimals
};

/// Noise matrix as CSV with a header row and a leading column of class
/// names; row j is the true class, column k the assigned label.
inline HeatmapCsv emit_noise_heatmap_data(const NoiseMatrix& nm, std::span<const std::string> names) {
  nm.validate();
  const std::size_t c = nm.num_classes();
  if (names.size() != c) {
    throw FormatError("heatmap: " + std::to_string(names.size()) + " class names for " + std::to_string(c) +
                      " classes");
  }
  for (const auto& n : names) {
    if (n.find_first_of(",\n") != std::string::npos) throw FormatError("heatmap: class name '" + n + "' has a comma");
  }
  std::ostringstream data, display;
  for (std::ostringstream* s : {&data, &display}) {
    *s << "true\\label";
    for (const auto& n : names) *s << ',' << n;
    *s << '\n';
  }
  for (std::size_t j = 0; j < c; ++j) {
    data << names[j];
    display << names[j];
    for (std::size_t k = 0; k < c; ++k) {
      data << ',' << io::format_double(nm.probs(j, k));
      display << ',' << io::format_fixed(nm.probs(j, k), 2);
    }
    data << '\n';
    display << '\n';
  }
  return {data.str(), display.str()};
}

struct Heatmap {
  Matrix probs;
  std::vector<std::string> names;
};

inline Heatmap read_noise_heatmap(std::istream& in) {
  const auto lines = io::read_lines(in);
  if (lines.empty()) throw FormatError("heatmap file is empty");
  Heatmap h;
  const auto header = io::split(lines[0].text);
  for (std::size_t k = 1; k < header.size(); ++k) h.names.emplace_back(io::trim(header[k]));
  const std::size_t c = h.names.size();
  if (c == 0 || lines.size() != c + 1) throw FormatError("heatmap: expected a square matrix with a header");
  h.probs = Matrix(c, c);
  for (std::size_t j = 0; j < c; ++j) {
    const auto cells = io::split(lines[j + 1].text);
    if (cells.size() != c + 1) throw ParseError("heatmap: wrong cell count", lines[j + 1].number);
    if (io::trim(cells[0]) != h.names[j]) throw ParseError("heatmap: row name does not match header", lines[j + 1].number);
    for (std::size_t k = 0; k < c; ++k) h.probs(j, k) = io::parse_double(cells[k + 1], lines[j + 1].number);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Running

struct RunOutcome {
  Variant variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunReport report;
};

struct VariantSummary {
  std::string variant;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double mean_accuracy = NAN;
  double std_accuracy = NAN;
  double mean_flip_last10 = NAN;
};

/// Mean flip rate over the last (up to) 10 epochs.
inline double last10_flip_rate(const RunReport& r) {
  if (r.epochs.empty()) return NAN;
  const std::size_t n = r.epochs.size();
  const std::size_t from = n > 10 ? n - 10 : 0;
  double s = 0.0;
  for (std::size_t k = from; k < n; ++k) s += r.epochs[k].flip_rate;
  return s / static_cast<double>(n - from);
}

/// Sample standard deviation (n - 1); 0 for a single value.
inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline std::vector<VariantSummary> summarize(const std::vector<Variant>& variants,
                                             const std::vector<RunOutcome>& outcomes) {
  std::vector<VariantSummary> out;
  for (const Variant& v : variants) {
    VariantSummary s;
    s.variant = v.name();
    std::vector<double> acc, flips;
    for (const RunOutcome& o : outcomes) {
      if (!(o.variant == v)) continue;
      ++s.runs;
      if (!o.ok || o.report.empty()) {
        ++s.failed;
        continue;
      }
      flips.push_back(last10_flip_rate(o.report));
      if (o.report.last().accuracy) acc.push_back(*o.report.last().accuracy);
    }
    if (!acc.empty()) {
      double sum = 0.0;
      for (double a : acc) sum += a;
      s.mean_accuracy = sum / static_cast<double>(acc.size());
      s.std_accuracy = sample_std(acc);
    }
    if (!flips.empty()) {
      double sum = 0.0;
      for (double f : flips) sum += f;
      s.mean_flip_last10 = sum / static_cast<double>(flips.size());
    }
    out.push_back(s);
  }
  return out;
}

inline void write_summary_csv(std::ostream& out, const std::vector<VariantSummary>& rows) {
  out << "variant,runs,failed,mean_accuracy,std_accuracy,mean_flip_last10\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.runs << ',' << r.failed << ',' << io::format_double(r.mean_accuracy) << ','
        << io::format_double(r.std_accuracy) << ',' << io::format_double(r.mean_flip_last10) << '\n';
  }
}

inline void write_summary_text(std::ostream& out, const std::vector<VariantSummary>& rows,
                               const std::vector<RunOutcome>& outcomes) {
  out << "variant                      runs  failed  accuracy (mean +- std)   flip rate (last 10)\n";
  for (const auto& r : rows) {
    std::string name = r.variant;
    name.resize(std::max<std::size_t>(name.size(), 28), ' ');
    out << name << ' ' << r.runs << "     " << r.failed << "       ";
    if (std::isnan(r.mean_accuracy)) {
      out << "n/a                      ";
    } else {
      out << io::format_fixed(100.0 * r.mean_accuracy, 2) << " +- " << io::format_fixed(100.0 * r.std_accuracy, 2)
          << "           ";
    }
    out << (std::isnan(r.mean_flip_last10) ? std::string("n/a") : io::format_fixed(r.mean_flip_last10, 4)) << '\n';
  }
  for (const auto& o : outcomes) {
    if (!o.ok) out << "failed: " << o.variant.name() << " seed " << o.seed << ": " << o.error << '\n';
  }
}

/// Data and initial labels for one replicate seed. Synthetic sources offset
/// their data and noise seeds by the replicate seed; external data is the
/// same for every seed.
struct Replicate {
  Dataset dataset;
  LabelMatrix labels;
};

inline Replicate make_replicate(const ExperimentSpec& spec, std::uint64_t seed) {
  if (const auto* s = std::get_if<SyntheticSource>(&spec.source)) {
    SynthConfig sc = s->synth;
    sc.seed += seed;
    Dataset ds = generate_gaussian_mixture(sc);
    LabelMatrix lm = inject_noise(ds, s->noise, s->confidence, s->noise_seed + seed);
    return {std::move(ds), std::move(lm)};
  }
  const auto& e = std::get<ExternalSource>(spec.source);
  ExternalData ext = load_external(e.features, e.labels, e.truth);
  return {std::move(ext.dataset), std::move(ext.labels)};
}

inline std::string run_file_stem(const Variant& v, std::uint64_t seed) {
  return v.name() + "_seed" + std::to_string(seed);
}

struct ExperimentResult {
  std::vector<RunOutcome> outcomes;  // variant-major, then seed
  std::vector<VariantSummary> summary;
  int exit_code = 0;
};

/// Runs every (variant, seed) cell and writes the output directory. Exit code
/// 0 if any run succeeded, 1 if all failed.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, std::ostream* log = nullptr) {
  spec.validate();
  namespace fs = std::filesystem;
  const fs::path root(spec.output_dir);
  fs::create_directories(root / "runs");

  // Replicates are shared by all variants of a seed.
  std::vector<std::optional<Replicate>> replicates(spec.seeds.size());
  std::vector<std::string> replicate_errors(spec.seeds.size());
  for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
    try {
      replicates[s] = make_replicate(spec, spec.seeds[s]);
    } catch (const Error& e) {
      replicate_errors[s] = e.what();
    }
  }

  if (replicates[0] && replicates[0]->dataset.has_truth()) {
    const Replicate& r = *replicates[0];
    const NoiseMatrix nm = empirical_noise_matrix(argmax_rows(r.labels.initial_labels()), *r.dataset.true_labels,
                                                  r.dataset.num_classes);
    const auto names =
        r.dataset.class_names.empty() ? default_class_names(r.dataset.num_classes) : r.dataset.class_names;
    const HeatmapCsv h = emit_noise_heatmap_data(nm, names);
    io::open_out((root / "noise_matrix.csv").string()) << h.data;
    io::open_out((root / "noise_matrix_display.csv").string()) << h.display;
  }

  ExperimentResult result;
  for (const Variant& v : spec.variants)
    for (std::uint64_t seed : spec.seeds) result.outcomes.push_back(RunOutcome{v, seed, false, {}, {}});

  std::mutex log_mutex;
  auto run_cell = [&](std::size_t idx) {
    RunOutcome& o = result.outcomes[idx];
    const std::size_t s = idx % spec.seeds.size();
    if (!replicates[s]) {
      o.error = replicate_errors[s];
    } else {
      TrainConfig tc = spec.train;
      tc.loss = o.variant.loss;
      tc.strategy = o.variant.strategy;
      tc.seed = o.seed;
      try {
        o.report = run_training(replicates[s]->dataset, replicates[s]->labels, tc).report;
        o.ok = true;
      } catch (const TrainingDivergedError& e) {
        o.error = e.what();
        o.report = e.partial_report();
      } catch (const Error& e) {
        o.error = e.what();
      }
    }
    const std::size_t c = replicates[s] ? replicates[s]->dataset.num_classes : 0;
    const std::string stem = run_file_stem(o.variant, o.seed);
    io::open_out((root / "runs" / (stem + ".csv")).string()) << [&] {
      std::ostringstream ss;
      write_run_report(ss, o.report, c);
      return ss.str();
    }();
    io::open_out((root / "runs" / (stem + ".timing.csv")).string()) << [&] {
      std::ostringstream ss;
      write_timing(ss, o.report);
      return ss.str();
    }();
    if (log) {
      std::lock_guard lock(log_mutex);
      *log << stem << ": ";
      if (o.ok && o.report.last().accuracy) {
        *log << "final accuracy " << io::format_fixed(100.0 * *o.report.last().accuracy, 2) << "%\n";
      } else if (o.ok) {
        *log << "done\n";
      } else {
        *log << "FAILED: " << o.error << '\n';
      }
    }
  };

  const std::size_t workers = std::min(spec.threads, result.outcomes.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < result.outcomes.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < result.outcomes.size(); i = next++) run_cell(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  {
    auto curves = io::open_out((root / "curves.csv").string());
    curves << "variant,seed,epoch,accuracy,label_accuracy,flip_rate\n";
    for (const RunOutcome& o : result.outcomes) {
      for (const EpochRecord& e : o.report.epochs) {
        curves << o.variant.name() << ',' << o.seed << ',' << e.epoch << ',' << format_optional(e.accuracy) << ','
               << format_optional(e.label_accuracy) << ',' << io::format_double(e.flip_rate) << '\n';
      }
    }
  }
  result.summary = summarize(spec.variants, result.outcomes);
  {
    auto csv = io::open_out((root / "summary.csv").string());
    write_summary_csv(csv, result.summary);
    auto txt = io::open_out((root / "summary.txt").string());
    write_summary_text(txt, result.summary, result.outcomes);
  }
  const bool any_ok = std::any_of(result.outcomes.begin(), result.outcomes.end(), [](const RunOutcome& o) { return o.ok; });
  result.exit_code = any_ok ? 0 : 1;
  return result;
}

}  // namespace noisylab
