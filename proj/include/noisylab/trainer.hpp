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

// The training loop.
//
// Each epoch: shuffle, then per minibatch sharpen the stored labels, run the
// clean and augmented views through the model in train mode, take the
// selected objective scaled by 1/m, backpropagate and apply one momentum SGD
// step. After the last minibatch the whole dataset is predicted in infer mode
// and those predictions drive the label update.
//
// Random stream, all from one std::mt19937_64 seeded with TrainConfig::seed:
//   draw 1    parameter init seed
//   draw 2    augmentation seed (augment() is keyed by a running counter)
//   then      one std::shuffle of the index vector per epoch

#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "noisylab/dataset.hpp"
#include "noisylab/errors.hpp"
#include "noisylab/labels.hpp"
#include "noisylab/losses.hpp"
#include "noisylab/matrix.hpp"
#include "noisylab/model.hpp"
#include "noisylab/tape.hpp"

namespace noisylab {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double lr_backbone = 0.001;  // W1, b1
  double lr_head = 0.01;       // gamma, beta, W2, b2
  double momentum = 0.9;
  UpdateStrategy strategy = UpdateStrategy::ensemble;
  LossKind loss = LossKind::c3l;
  LossConfig loss_cfg;
  RescaleConfig rescale;
  AugmentConfig augment;
  ModelConfig model;
  bool kl_on_aug = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(lr_backbone >= 0.0) || !(lr_head >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (model.hidden < 1) throw ConfigError("hidden width must be >= 1");
    if (!(model.bn_momentum >= 0.0 && model.bn_momentum <= 1.0)) throw ConfigError("bn momentum must lie in [0, 1]");
    loss_cfg.validate();
    rescale.validate();
    augment.validate();
  }
};

/// Raised when a gradient or parameter stops being finite. Carries the
/// epochs completed before the failure.
class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, RunReport partial = {})
      : Error(what), partial_(std::move(partial)) {}
  const RunReport& partial_report() const noexcept { return partial_; }

 private:
  RunReport partial_;
};

using Gradients = std::array<Matrix, ClassifierParams::kNumTrainable>;

struct OptimizerState {
  Gradients velocity;

  static OptimizerState zeros_like(const ClassifierParams& p) {
    OptimizerState s;
    const auto t = p.trainable();
    for (std::size_t k = 0; k < t.size(); ++k) s.velocity[k] = Matrix(t[k]->rows(), t[k]->cols());
    return s;
  }
};

struct LearningRates {
  double backbone = 0.001;
  double head = 0.01;

  /// Learning rate of trainable tensor `k` (ClassifierParams order).
  double for_tensor(std::size_t k) const { return k < 2 ? backbone : head; }
};

/// v <- momentum * v + g;  p <- p - lr * v.
inline void sgd_step(ClassifierParams& params, const Gradients& grads, OptimizerState& state, const LearningRates& lr,
                     double momentum) {
  auto t = params.trainable();
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!grads[k].same_shape(*t[k]) || !state.velocity[k].same_shape(*t[k])) {
      throw DimensionError("sgd_step: shape mismatch for tensor " + std::string(ClassifierParams::kTrainableNames[k]));
    }
    if (!grads[k].all_finite()) {
      throw TrainingDivergedError("non-finite gradient in tensor " + std::string(ClassifierParams::kTrainableNames[k]));
    }
  }
  for (std::size_t k = 0; k < t.size(); ++k) {
    Matrix& v = state.velocity[k];
    Matrix& p = *t[k];
    const double rate = lr.for_tensor(k);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + grads[k][i];
      p[i] -= rate * v[i];
    }
  }
}

/// Everything the loop mutates between steps.
struct TrainerState {
  ClassifierParams params;
  OptimizerState optimizer;
  std::mt19937_64 rng;
  std::uint64_t augment_seed = 0;
  std::uint64_t augment_draws = 0;
  Matrix feature_std;  // 1 x d, scales the augmentation noise

  static TrainerState create(const Dataset& ds, const TrainConfig& cfg) {
    TrainerState s;
    s.rng.seed(cfg.seed);
    const std::uint64_t init_seed = s.rng();
    s.augment_seed = s.rng();
    s.params = init_params(ds.dim(), cfg.model.hidden, ds.num_classes, init_seed);
    s.optimizer = OptimizerState::zeros_like(s.params);
    s.feature_std = column_std(ds.features);
    return s;
  }
};

struct EpochStats {
  double mean_kl = 0.0;
  double mean_cc = 0.0;
  std::size_t steps = 0;
  std::size_t samples = 0;
};

struct EpochResult {
  Matrix predictions;  // n x C, infer mode, after the epoch's updates
  EpochStats stats;
};

/// Minibatch boundaries for n instances; a trailing batch of one is dropped.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t m) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < n; start += m) {
    const std::size_t end = std::min(n, start + m);
    if (end - start >= 2) out.emplace_back(start, end);
  }
  return out;
}

inline Matrix predict(const ClassifierParams& params, const Matrix& features, const ModelConfig& cfg = {}) {
  return forward(params, features, Mode::infer, cfg).probs;
}

inline EpochResult run_epoch(const Dataset& ds, const LabelMatrix& store, TrainerState& st, const TrainConfig& cfg,
                             std::size_t epoch = 0) {
  if (store.size() != ds.size() || store.num_classes() != ds.num_classes) {
    throw DimensionError("run_epoch: labels " + store.soft_labels().shape() + " do not match dataset of " +
                         std::to_string(ds.size()) + " instances, " + std::to_string(ds.num_classes) + " classes");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), st.rng);

  AugmentConfig aug = cfg.augment;
  aug.seed = st.augment_seed;
  const LearningRates lr{cfg.lr_backbone, cfg.lr_head};

  EpochResult result;
  double kl_total = 0.0;
  double cc_total = 0.0;
  for (auto [start, end] : batch_ranges(ds.size(), cfg.batch_size)) {
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const double m = static_cast<double>(idx.size());
    const Matrix xb = ds.features.gather_rows(idx);
    const Matrix targets = rescale(store.soft_labels().gather_rows(idx), cfg.rescale);
    // The draw counter advances whether or not the view is used.
    const std::uint64_t draw = st.augment_draws++;
    const bool need_view = uses_augmented_view(cfg.loss, cfg.kl_on_aug);

    if (!xb.all_finite()) throw DegenerateInputError("run_epoch: non-finite features in the dataset");
    GradTape tape;
    const ParamVars pv = bind_params(tape, st.params);
    std::optional<ForwardVars> clean;
    std::optional<Objective> obj;
    try {
      clean = forward(tape, pv, st.params, tape.constant(xb), Mode::train, cfg.model);
      const ForwardVars view =
          need_view ? forward(tape, pv, st.params, tape.constant(augment(xb, aug, st.feature_std.data(), draw)),
                              Mode::train, cfg.model)
                    : *clean;
      obj = build_objective(cfg.loss, clean->probs, view.probs, clean->feats, view.feats, targets, cfg.loss_cfg,
                            cfg.kl_on_aug);
      tape.backward(scale(obj->total, 1.0 / m));
    } catch (const DegenerateInputError& e) {
      // Inputs are finite, so the parameters have blown up.
      throw TrainingDivergedError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(result.stats.steps + 1));
    }

    Gradients grads;
    const auto vars = pv.as_array();
    for (std::size_t k = 0; k < vars.size(); ++k) grads[k] = tape.grad(vars[k]);
    try {
      sgd_step(st.params, grads, st.optimizer, lr, cfg.momentum);
    } catch (const TrainingDivergedError& e) {
      throw TrainingDivergedError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(result.stats.steps + 1));
    }
    update_running_stats(st.params, clean->batch_mean, clean->batch_var, cfg.model.bn_momentum);

    kl_total += obj->kl.value()[0];
    if (obj->contrastive) cc_total += obj->contrastive->value()[0];
    result.stats.samples += idx.size();
    ++result.stats.steps;
  }
  if (!st.params.all_finite()) {
    throw TrainingDivergedError("parameters became non-finite at epoch " + std::to_string(epoch));
  }
  if (result.stats.samples > 0) {
    result.stats.mean_kl = kl_total / static_cast<double>(result.stats.samples);
    result.stats.mean_cc = cc_total / static_cast<double>(result.stats.samples);
  }
  result.predictions = predict(st.params, ds.features, cfg.model);
  return result;
}

inline double accuracy_of(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Per-class recall; NaN for classes with no instances.
inline std::vector<double> per_class_accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                                              std::size_t num_classes) {
  std::vector<double> hit(num_classes, 0.0);
  std::vector<double> count(num_classes, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    count[truth[i]] += 1.0;
    hit[truth[i]] += pred[i] == truth[i];
  }
  std::vector<double> out(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) out[k] = count[k] > 0 ? hit[k] / count[k] : std::nan("");
  return out;
}

inline double flip_rate(std::span<const std::size_t> prev, std::span<const std::size_t> cur) {
  std::size_t flips = 0;
  for (std::size_t i = 0; i < cur.size(); ++i) flips += prev[i] != cur[i];
  return static_cast<double>(flips) / static_cast<double>(cur.size());
}

struct TrainingResult {
  ClassifierParams params;
  RunReport report;
  LabelMatrix labels;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full run: epochs of training, each followed by the configured label
/// update. `on_epoch` sees every record as soon as it is complete. The flip
/// rate of epoch 1 is measured against the argmax of the initial labels.
inline TrainingResult run_training(const Dataset& ds, const LabelMatrix& initial, const TrainConfig& cfg,
                                   const EpochCallback& on_epoch = {}) {
  cfg.validate();
  ds.validate();
  TrainerState st = TrainerState::create(ds, cfg);
  TrainingResult out{{}, {}, initial};
  std::vector<std::size_t> prev = argmax_rows(initial.initial_labels());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochResult er;
    try {
      er = run_epoch(ds, out.labels, st, cfg, e);
    } catch (const TrainingDivergedError& err) {
      throw TrainingDivergedError(err.what(), out.report);
    }
    apply_update(cfg.strategy, out.labels, er.predictions);

    EpochRecord rec;
    rec.epoch = e;
    const auto cur = argmax_rows(er.predictions);
    rec.flip_rate = flip_rate(prev, cur);
    rec.mean_kl = er.stats.mean_kl;
    rec.mean_cc = er.stats.mean_cc;
    if (ds.true_labels) {
      const auto& truth = *ds.true_labels;
      rec.accuracy = accuracy_of(cur, truth);
      rec.per_class_accuracy = per_class_accuracy(cur, truth, ds.num_classes);
      rec.label_accuracy = accuracy_of(argmax_rows(out.labels.soft_labels()), truth);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    prev = cur;
    out.report.append(rec);
    if (on_epoch) on_epoch(rec);
  }
  out.params = std::move(st.params);
  return out;
}

}  // namespace noisylab
