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

// Containers shared across the engine: the unlabeled dataset, the evolving
// soft-label store, class-conditional noise matrices and per-epoch reports.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/matrix.hpp"

namespace noisylab {

inline constexpr double kSimplexTol = 1e-9;

inline bool on_simplex(std::span<const double> row, double tol = kSimplexTol) {
  double s = 0.0;
  for (double v : row) {
    if (!std::isfinite(v) || v < -tol) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

inline bool rows_on_simplex(const Matrix& m, double tol = kSimplexTol) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (!on_simplex(m.row(i), tol)) return false;
  return true;
}

/// Clamps negatives to zero and renormalizes to sum one. An all-zero row
/// becomes uniform.
inline std::vector<double> simplex_project(std::span<const double> row) {
  if (row.empty()) throw DimensionError("simplex_project: empty row");
  std::vector<double> out(row.begin(), row.end());
  double s = 0.0;
  for (double& v : out) {
    if (!std::isfinite(v)) throw DegenerateInputError("simplex_project: non-finite entry");
    v = std::max(v, 0.0);
    s += v;
  }
  if (s == 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (double& v : out) v /= s;
  return out;
}

struct Dataset {
  Matrix features;                                      // n x d
  std::optional<std::vector<std::size_t>> true_labels;  // evaluation only
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // empty, or one per class

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  bool has_truth() const noexcept { return true_labels.has_value(); }

  void validate() const {
    if (features.rows() < 1 || features.cols() < 1) throw EmptyDatasetError("dataset has no instances or no features");
    if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (!class_names.empty() && class_names.size() != num_classes) {
      throw FormatError("dataset has " + std::to_string(class_names.size()) + " class names for " +
                        std::to_string(num_classes) + " classes");
    }
    if (true_labels) {
      if (true_labels->size() != size()) {
        throw DimensionError("true_labels has " + std::to_string(true_labels->size()) + " entries for " +
                             std::to_string(size()) + " instances");
      }
      for (std::size_t y : *true_labels)
        if (y >= num_classes) throw PreconditionError("true label " + std::to_string(y) + " out of range");
    }
  }
};

/// Soft training labels together with the frozen initial labels and the
/// running sum of per-epoch model predictions.
class LabelMatrix {
 public:
  LabelMatrix() = default;

  explicit LabelMatrix(Matrix initial)
      : soft_(initial), initial_(std::move(initial)), prediction_sum_(initial_.rows(), initial_.cols()) {
    if (initial_.rows() < 1) throw EmptyDatasetError("label matrix has no rows");
    if (initial_.cols() < 2) throw ConfigError("label matrix needs at least 2 classes");
    if (!rows_on_simplex(initial_)) throw PreconditionError("initial labels are not row-stochastic");
  }

  const Matrix& soft_labels() const noexcept { return soft_; }
  const Matrix& initial_labels() const noexcept { return initial_; }
  const Matrix& prediction_sum() const noexcept { return prediction_sum_; }
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t size() const noexcept { return initial_.rows(); }
  std::size_t num_classes() const noexcept { return initial_.cols(); }

  /// Records one epoch of predictions and installs the new soft labels.
  void advance(const Matrix& epoch_predictions, Matrix new_soft) {
    if (!epoch_predictions.same_shape(initial_)) {
      throw DimensionError("epoch predictions " + epoch_predictions.shape() + " do not match labels " +
                           initial_.shape());
    }
    if (!new_soft.same_shape(initial_)) throw DimensionError("new soft labels have shape " + new_soft.shape());
    axpy(prediction_sum_, 1.0, epoch_predictions);
    soft_ = std::move(new_soft);
    ++epoch_;
#ifndef NDEBUG
    if (!rows_on_simplex(soft_)) throw PreconditionError("label update left the probability simplex");
#endif
  }

 private:
  Matrix soft_;
  Matrix initial_;
  Matrix prediction_sum_;
  std::size_t epoch_ = 0;
};

struct NoiseMatrix {
  Matrix probs;                    // C x C, row j = distribution of labels given true class j
  std::vector<bool> zero_support;  // rows with no instances, reported as uniform

  std::size_t num_classes() const noexcept { return probs.rows(); }

  void validate() const {
    if (probs.rows() != probs.cols()) throw DimensionError("noise matrix must be square, got " + probs.shape());
    for (std::size_t j = 0; j < probs.rows(); ++j) {
      for (double v : probs.row(j))
        if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError("noise matrix entry outside [0,1] in row " + std::to_string(j));
      if (!on_simplex(probs.row(j))) throw PreconditionError("noise matrix row " + std::to_string(j) + " does not sum to 1");
    }
  }
};

inline NoiseMatrix empirical_noise_matrix(std::span<const std::size_t> pred_labels,
                                          std::span<const std::size_t> true_labels, std::size_t num_classes) {
  if (pred_labels.empty()) throw EmptyDatasetError("empirical_noise_matrix: no labels");
  if (pred_labels.size() != true_labels.size()) {
    throw DimensionError("empirical_noise_matrix: " + std::to_string(pred_labels.size()) + " predictions vs " +
                         std::to_string(true_labels.size()) + " truths");
  }
  NoiseMatrix nm{Matrix(num_classes, num_classes), std::vector<bool>(num_classes, false)};
  std::vector<std::size_t> support(num_classes, 0);
  for (std::size_t i = 0; i < pred_labels.size(); ++i) {
    if (pred_labels[i] >= num_classes || true_labels[i] >= num_classes) {
      throw PreconditionError("empirical_noise_matrix: label out of range at index " + std::to_string(i));
    }
    nm.probs(true_labels[i], pred_labels[i]) += 1.0;
    ++support[true_labels[i]];
  }
  for (std::size_t j = 0; j < num_classes; ++j) {
    auto r = nm.probs.row(j);
    if (support[j] == 0) {
      nm.zero_support[j] = true;
      std::fill(r.begin(), r.end(), 1.0 / static_cast<double>(num_classes));
      continue;
    }
    for (double& v : r) v /= static_cast<double>(support[j]);
  }
  return nm;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::optional<double> accuracy;          // model argmax vs truth
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the truth
  std::optional<double> label_accuracy;    // argmax of stored soft labels vs truth
  double mean_kl = 0.0;                    // per-sample mean over the epoch
  double mean_cc = 0.0;                    // per-sample mean of the active contrastive term
  double flip_rate = 0.0;                  // argmax changes vs previous predictions
  double seconds = 0.0;                    // wall clock
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  /// How batch losses were scaled before differentiation.
  std::string loss_scaling = "sum/m";

  void append(EpochRecord rec) {
    if (!epochs.empty() && rec.epoch <= epochs.back().epoch) {
      throw PreconditionError("run report epochs must increase");
    }
    epochs.push_back(std::move(rec));
  }
  bool empty() const noexcept { return epochs.empty(); }
  const EpochRecord& last() const { return epochs.back(); }
};

}  // namespace noisylab
