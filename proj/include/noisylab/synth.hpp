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

// Synthetic benchmarks with class-conditional label noise, and the on-disk
// feature/label/truth formats.
//
// The zero-shot labeler is not run here. Its output is modeled as an initial
// row-stochastic label matrix: a corrupted hard label drawn from a noise
// matrix row, softened by a confidence parameter. Real labeler outputs can
// be ingested through load_external instead.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "noisylab/dataset.hpp"
#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/matrix.hpp"

namespace noisylab {

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t per_class_count = 100;
  std::size_t feature_dim = 16;
  double class_center_separation = 4.0;
  double intra_class_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (per_class_count < 1) throw ConfigError("synth: per_class_count must be >= 1");
    if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
    if (!(class_center_separation > 0.0)) throw ConfigError("synth: separation must be positive");
    if (!(intra_class_std > 0.0)) throw ConfigError("synth: intra_class_std must be positive");
    if (feature_dim < num_classes) {
      throw ConfigError("synth: orthogonal class centers need feature_dim >= num_classes (" +
                        std::to_string(feature_dim) + " < " + std::to_string(num_classes) + ")");
    }
  }
};

/// Class centers: `separation` times C random orthonormal directions.
inline Matrix class_centers(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t c = cfg.num_classes;
  const std::size_t d = cfg.feature_dim;
  Matrix basis(c, d);
  for (std::size_t k = 0; k < c; ++k) {
    // Gram-Schmidt; redraw in the (measure-zero) event of a dependent draw.
    while (true) {
      auto v = basis.row(k);
      for (double& x : v) x = normal(rng);
      for (std::size_t prev = 0; prev < k; ++prev) {
        const double proj = dot(v, basis.row(prev));
        for (std::size_t j = 0; j < d; ++j) v[j] -= proj * basis(prev, j);
      }
      const double nrm = l2_norm(v);
      if (nrm < 1e-8) continue;
      for (double& x : v) x /= nrm;
      break;
    }
  }
  return scale(basis, cfg.class_center_separation);
}

/// Isotropic Gaussian clusters, class-major order, truth attached.
inline Dataset generate_gaussian_mixture(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const Matrix centers = class_centers(cfg, rng);
  std::normal_distribution<double> normal(0.0, cfg.intra_class_std);
  const std::size_t n = cfg.num_classes * cfg.per_class_count;
  Dataset ds;
  ds.features = Matrix(n, cfg.feature_dim);
  ds.true_labels = std::vector<std::size_t>(n);
  ds.num_classes = cfg.num_classes;
  std::size_t i = 0;
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    for (std::size_t r = 0; r < cfg.per_class_count; ++r, ++i) {
      for (std::size_t j = 0; j < cfg.feature_dim; ++j) ds.features(i, j) = centers(k, j) + normal(rng);
      (*ds.true_labels)[i] = k;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Noise specifications

/// Diagonal = per-class accuracy; remaining mass spread uniformly.
struct PerClassAccuracy {
  std::vector<double> accuracy;
};

/// Identity with `mass` moved from (from, from) to (from, to) for each pair.
struct ConfusionPairs {
  struct Pair {
    std::size_t from;
    std::size_t to;
    double mass;
  };
  std::vector<Pair> pairs;
};

using NoiseSpec = std::variant<NoiseMatrix, PerClassAccuracy, ConfusionPairs>;

inline NoiseMatrix noise_matrix_from_accuracy(std::span<const double> acc) {
  const std::size_t c = acc.size();
  if (c < 2) throw ConfigError("noise spec: need at least 2 classes");
  NoiseMatrix nm{Matrix(c, c), std::vector<bool>(c, false)};
  for (std::size_t j = 0; j < c; ++j) {
    if (!(acc[j] >= 0.0 && acc[j] <= 1.0)) throw ConfigError("noise spec: accuracy outside [0, 1]");
    const double off = (1.0 - acc[j]) / static_cast<double>(c - 1);
    for (std::size_t k = 0; k < c; ++k) nm.probs(j, k) = j == k ? acc[j] : off;
  }
  return nm;
}

/// The row-stochastic matrix a spec induces for `num_classes` classes.
inline NoiseMatrix induced_matrix(const NoiseSpec& spec, std::size_t num_classes) {
  NoiseMatrix nm;
  if (const auto* m = std::get_if<NoiseMatrix>(&spec)) {
    nm = *m;
    if (nm.zero_support.size() != nm.num_classes()) nm.zero_support.assign(nm.num_classes(), false);
  } else if (const auto* a = std::get_if<PerClassAccuracy>(&spec)) {
    nm = noise_matrix_from_accuracy(a->accuracy);
  } else {
    const auto& cp = std::get<ConfusionPairs>(spec);
    nm = NoiseMatrix{Matrix::identity(num_classes), std::vector<bool>(num_classes, false)};
    for (const auto& p : cp.pairs) {
      if (p.from >= num_classes || p.to >= num_classes) throw ConfigError("noise spec: confusion pair out of range");
      if (!(p.mass >= 0.0)) throw ConfigError("noise spec: confusion mass must be non-negative");
      nm.probs(p.from, p.from) -= p.mass;
      nm.probs(p.from, p.to) += p.mass;
    }
  }
  if (nm.num_classes() != num_classes) {
    throw DimensionError("noise spec covers " + std::to_string(nm.num_classes()) + " classes, dataset has " +
                         std::to_string(num_classes));
  }
  try {
    nm.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("noise spec does not induce a row-stochastic matrix: ") + e.what());
  }
  return nm;
}

/// Draws one corrupted hard label per instance from its true class's row.
inline std::vector<std::size_t> sample_noisy_labels(std::span<const std::size_t> truth, const NoiseMatrix& nm,
                                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t c = nm.num_classes();
  std::vector<std::size_t> out(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto row = nm.probs.row(truth[i]);
    const double u = unif(rng);
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < c; ++k) {
      acc += row[k];
      if (u < acc) break;
    }
    // Rounding can leave u above the last partial sum; skip trailing zeros.
    while (row[k] == 0.0 && k > 0) --k;
    out[i] = k;
  }
  return out;
}

/// Soft label with `confidence` on `label` and the rest spread uniformly.
inline void fill_soft_row(std::span<double> row, std::size_t label, double confidence) {
  const double rest = (1.0 - confidence) / static_cast<double>(row.size() - 1);
  for (std::size_t k = 0; k < row.size(); ++k) row[k] = k == label ? confidence : rest;
}

inline LabelMatrix inject_noise(const Dataset& ds, const NoiseSpec& spec, double confidence, std::uint64_t seed) {
  if (!ds.has_truth()) throw PreconditionError("inject_noise: dataset has no true labels");
  if (!(confidence > 0.0 && confidence <= 1.0)) throw ConfigError("inject_noise: confidence must lie in (0, 1]");
  const NoiseMatrix nm = induced_matrix(spec, ds.num_classes);
  const auto hard = sample_noisy_labels(*ds.true_labels, nm, seed);
  Matrix soft(ds.size(), ds.num_classes);
  for (std::size_t i = 0; i < hard.size(); ++i) fill_soft_row(soft.row(i), hard[i], confidence);
  return LabelMatrix(std::move(soft));
}

// ---------------------------------------------------------------------------
// File formats
//
//   features:  "d=<int>" then one row of d comma-separated numbers per instance
//   labels:    "C=<int>[,name...]" then one row of C non-negative numbers per
//              instance (renormalized on load)
//   truth:     one integer class index per line

struct ExternalData {
  Dataset dataset;
  LabelMatrix labels;
};

namespace detail {

inline std::size_t parse_header(const io::Line& line, char key, std::vector<std::string>* names) {
  const auto cells = io::split(line.text);
  const std::string_view head = io::trim(cells[0]);
  if (head.size() < 3 || head[0] != key || head[1] != '=') {
    throw FormatError(std::string("expected header '") + key + "=<int>' at line " + std::to_string(line.number));
  }
  const long long v = io::parse_int(head.substr(2), line.number);
  if (v < 1) throw FormatError(std::string("header ") + key + " must be positive");
  if (names) {
    for (std::size_t i = 1; i < cells.size(); ++i) names->emplace_back(io::trim(cells[i]));
  } else if (cells.size() > 1) {
    throw FormatError("unexpected cells after header at line " + std::to_string(line.number));
  }
  return static_cast<std::size_t>(v);
}

inline Matrix parse_body(const std::vector<io::Line>& lines, std::size_t width, const std::string& what) {
  Matrix m(lines.size() - 1, width);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto vals = io::parse_row(lines[r].text, lines[r].number);
    if (vals.size() != width) {
      throw FormatError(what + ": expected " + std::to_string(width) + " values, got " + std::to_string(vals.size()) +
                        " at line " + std::to_string(lines[r].number));
    }
    std::copy(vals.begin(), vals.end(), m.row(r - 1).begin());
  }
  return m;
}

}  // namespace detail

inline Matrix read_features(std::istream& in) {
  const auto lines = io::read_lines(in);
  if (lines.empty()) throw FormatError("feature file is empty");
  const std::size_t d = detail::parse_header(lines[0], 'd', nullptr);
  return detail::parse_body(lines, d, "feature file");
}

/// Rows are projected onto the simplex.
inline Matrix read_labels(std::istream& in, std::vector<std::string>* class_names) {
  const auto lines = io::read_lines(in);
  if (lines.empty()) throw FormatError("label file is empty");
  std::vector<std::string> names;
  const std::size_t c = detail::parse_header(lines[0], 'C', &names);
  if (!names.empty() && names.size() != c) {
    throw FormatError("label file names " + std::to_string(names.size()) + " classes but C=" + std::to_string(c));
  }
  Matrix m = detail::parse_body(lines, c, "label file");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    try {
      const auto p = simplex_project(m.row(i));
      std::copy(p.begin(), p.end(), m.row(i).begin());
    } catch (const DegenerateInputError& e) {
      throw ParseError(e.what(), lines[i + 1].number);
    }
  }
  if (class_names) *class_names = std::move(names);
  return m;
}

inline std::vector<std::size_t> read_truth(std::istream& in) {
  std::vector<std::size_t> out;
  for (const auto& line : io::read_lines(in)) {
    const long long v = io::parse_int(line.text, line.number);
    if (v < 0) throw ParseError("negative class index", line.number);
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline void write_features(std::ostream& out, const Matrix& features) {
  out << "d=" << features.cols() << '\n';
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < features.cols(); ++j) out << (j ? "," : "") << io::format_double(features(i, j));
    out << '\n';
  }
}

inline void write_labels(std::ostream& out, const Matrix& labels, std::span<const std::string> class_names = {}) {
  out << "C=" << labels.cols();
  for (const auto& n : class_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    for (std::size_t j = 0; j < labels.cols(); ++j) out << (j ? "," : "") << io::format_double(labels(i, j));
    out << '\n';
  }
}

inline void write_truth(std::ostream& out, std::span<const std::size_t> truth) {
  for (std::size_t y : truth) out << y << '\n';
}

/// Loads a feature file, a label file and optionally a truth file, and
/// cross-checks their row counts.
inline ExternalData load_external(const std::string& features_path, const std::string& labels_path,
                                  const std::optional<std::string>& truth_path = std::nullopt) {
  auto fin = io::open_in(features_path);
  Matrix features = read_features(fin);
  auto lin = io::open_in(labels_path);
  std::vector<std::string> names;
  Matrix labels = read_labels(lin, &names);
  if (features.rows() != labels.rows()) {
    throw FormatError("row count mismatch: " + std::to_string(features.rows()) + " feature rows vs " +
                      std::to_string(labels.rows()) + " label rows");
  }
  Dataset ds;
  ds.features = std::move(features);
  ds.num_classes = labels.cols();
  ds.class_names = std::move(names);
  if (truth_path) {
    auto tin = io::open_in(*truth_path);
    auto truth = read_truth(tin);
    if (truth.size() != ds.size()) {
      throw FormatError("row count mismatch: " + std::to_string(ds.size()) + " instances vs " +
                        std::to_string(truth.size()) + " truth lines");
    }
    ds.true_labels = std::move(truth);
  }
  ds.validate();
  return {std::move(ds), LabelMatrix(std::move(labels))};
}

/// Writes the files load_external reads. The label file carries the initial
/// labels.
inline void write_external(const Dataset& ds, const LabelMatrix& labels, const std::string& features_path,
                           const std::string& labels_path, const std::optional<std::string>& truth_path = std::nullopt) {
  auto fout = io::open_out(features_path);
  write_features(fout, ds.features);
  auto lout = io::open_out(labels_path);
  write_labels(lout, labels.initial_labels(), ds.class_names);
  if (truth_path) {
    if (!ds.true_labels) throw PreconditionError("write_external: dataset has no truth to write");
    auto tout = io::open_out(*truth_path);
    write_truth(tout, *ds.true_labels);
  }
}

}  // namespace noisylab
