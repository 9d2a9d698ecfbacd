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

// Training-label lifecycle: temperature rescaling applied when labels are
// consumed, and the per-epoch label update strategies.

#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "noisylab/dataset.hpp"
#include "noisylab/errors.hpp"
#include "noisylab/matrix.hpp"

namespace noisylab {

struct RescaleConfig {
  double tau = 2.0;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("rescale: tau must be positive, got " + std::to_string(tau));
  }
};

enum class UpdateStrategy { ensemble, pseudo, clip };

inline std::string_view to_string(UpdateStrategy s) {
  switch (s) {
    case UpdateStrategy::ensemble: return "ensemble";
    case UpdateStrategy::pseudo: return "pseudo";
    case UpdateStrategy::clip: return "clip";
  }
  return "?";
}

inline UpdateStrategy parse_update_strategy(std::string_view s) {
  if (s == "ensemble") return UpdateStrategy::ensemble;
  if (s == "pseudo") return UpdateStrategy::pseudo;
  if (s == "clip") return UpdateStrategy::clip;
  throw ConfigError("unknown label update strategy '" + std::string(s) + "' (ensemble|pseudo|clip)");
}

/// Raises every entry to the power tau and renormalizes each row. Returns a
/// new matrix; the stored labels are never sharpened in place.
inline Matrix rescale(const Matrix& labels, const RescaleConfig& cfg) {
  cfg.validate();
  Matrix out(labels.rows(), labels.cols());
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    auto in = labels.row(i);
    auto o = out.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::pow(in[j], cfg.tau);
      s += o[j];
    }
    if (s == 0.0) throw DegenerateInputError("rescale: row " + std::to_string(i) + " vanished under tau");
    for (double& v : o) v /= s;
  }
  return out;
}

/// Running mean of the initial labels and every epoch prediction so far, each
/// weighted equally.
inline void update_ensemble(LabelMatrix& store, const Matrix& epoch_predictions) {
  if (!epoch_predictions.same_shape(store.initial_labels())) {
    throw DimensionError("update_ensemble: predictions " + epoch_predictions.shape() + " vs labels " +
                         store.initial_labels().shape());
  }
  Matrix total = add(store.prediction_sum(), epoch_predictions);
  axpy(total, 1.0, store.initial_labels());
  const double count = static_cast<double>(store.epoch() + 2);
  for (double& v : total.data()) v /= count;
  store.advance(epoch_predictions, std::move(total));
}

/// Labels become the latest predictions; no memory of earlier epochs.
inline void update_pseudo(LabelMatrix& store, const Matrix& epoch_predictions) {
  if (!epoch_predictions.same_shape(store.initial_labels())) {
    throw DimensionError("update_pseudo: predictions " + epoch_predictions.shape() + " vs labels " +
                         store.initial_labels().shape());
  }
  store.advance(epoch_predictions, epoch_predictions);
}

/// Labels stay at their initial values.
inline void update_clip(LabelMatrix& store, const Matrix& epoch_predictions) {
  store.advance(epoch_predictions, store.soft_labels());
}

inline void apply_update(UpdateStrategy s, LabelMatrix& store, const Matrix& epoch_predictions) {
  switch (s) {
    case UpdateStrategy::ensemble: update_ensemble(store, epoch_predictions); return;
    case UpdateStrategy::pseudo: update_pseudo(store, epoch_predictions); return;
    case UpdateStrategy::clip: update_clip(store, epoch_predictions); return;
  }
}

}  // namespace noisylab
