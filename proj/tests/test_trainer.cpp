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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "noisylab/synth.hpp"
#include "noisylab/trainer.hpp"
#include "test_util.hpp"

namespace noisylab {
namespace {

Dataset mixture(std::size_t classes, std::size_t per_class, std::size_t dim, double sep, std::uint64_t seed) {
  SynthConfig sc;
  sc.num_classes = classes;
  sc.per_class_count = per_class;
  sc.feature_dim = dim;
  sc.class_center_separation = sep;
  sc.seed = seed;
  return generate_gaussian_mixture(sc);
}

TrainConfig small_config(std::size_t epochs, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 32;
  tc.model.hidden = 16;
  tc.seed = seed;
  return tc;
}

void expect_reports_equal(const RunReport& a, const RunReport& b) {
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_EQ(a.epochs[e].accuracy, b.epochs[e].accuracy);
    EXPECT_EQ(a.epochs[e].label_accuracy, b.epochs[e].label_accuracy);
    EXPECT_EQ(a.epochs[e].mean_kl, b.epochs[e].mean_kl);
    EXPECT_EQ(a.epochs[e].mean_cc, b.epochs[e].mean_cc);
    EXPECT_EQ(a.epochs[e].flip_rate, b.epochs[e].flip_rate);
  }
}

// ---------------------------------------------------------------------------
// sgd_step

ClassifierParams tiny_params() { return init_params(2, 3, 2, 1); }

Gradients constant_grads(const ClassifierParams& p, double g) {
  Gradients out;
  const auto t = p.trainable();
  for (std::size_t k = 0; k < t.size(); ++k) out[k] = Matrix(t[k]->rows(), t[k]->cols(), g);
  return out;
}

TEST(SgdStep, PlainGradientDescentWithoutMomentum) {
  ClassifierParams p = tiny_params();
  const ClassifierParams start = p;
  OptimizerState st = OptimizerState::zeros_like(p);
  const LearningRates lr{0.1, 0.5};
  for (int step = 1; step <= 3; ++step) {
    sgd_step(p, constant_grads(p, 2.0), st, lr, 0.0);
    for (std::size_t k = 0; k < ClassifierParams::kNumTrainable; ++k) {
      const auto& now = *p.trainable()[k];
      const auto& then = *start.trainable()[k];
      for (std::size_t i = 0; i < now.size(); ++i) EXPECT_NEAR(now[i], then[i] - step * lr.for_tensor(k) * 2.0, 1e-12);
    }
  }
}

TEST(SgdStep, VelocityApproachesGeometricLimit) {
  ClassifierParams p = tiny_params();
  OptimizerState st = OptimizerState::zeros_like(p);
  const Gradients g = constant_grads(p, 0.3);
  for (int step = 0; step < 200; ++step) sgd_step(p, g, st, LearningRates{1e-6, 1e-6}, 0.9);
  for (const Matrix& v : st.velocity)
    for (double x : v.data()) EXPECT_NEAR(x, 3.0, 0.03);
}

TEST(SgdStep, ZeroGradientIsAFixedPoint) {
  ClassifierParams p = tiny_params();
  const ClassifierParams start = p;
  OptimizerState st = OptimizerState::zeros_like(p);
  sgd_step(p, constant_grads(p, 0.0), st, LearningRates{}, 0.9);
  EXPECT_EQ(p, start);
}

TEST(SgdStep, NonFiniteGradientAborts) {
  ClassifierParams p = tiny_params();
  const ClassifierParams start = p;
  OptimizerState st = OptimizerState::zeros_like(p);
  Gradients g = constant_grads(p, 0.0);
  g[4][0] = NAN;
  EXPECT_THROW(sgd_step(p, g, st, LearningRates{}, 0.9), TrainingDivergedError);
  EXPECT_EQ(p, start);
}

TEST(LearningRates, BackboneIsFirstLayer) {
  const LearningRates lr{0.001, 0.01};
  EXPECT_EQ(lr.for_tensor(0), 0.001);  // W1
  EXPECT_EQ(lr.for_tensor(1), 0.001);  // b1
  for (std::size_t k = 2; k < 6; ++k) EXPECT_EQ(lr.for_tensor(k), 0.01);
}

TEST(BatchRanges, DropsOnlyATrailingSingleton) {
  EXPECT_EQ(batch_ranges(10, 4), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 4}, {4, 8}, {8, 10}}));
  EXPECT_EQ(batch_ranges(9, 4), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 4}, {4, 8}}));
  EXPECT_EQ(batch_ranges(8, 8), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 8}}));
}

// ---------------------------------------------------------------------------
// Hand-stepped single-batch oracle: KL on fixed sharpened labels, train-mode
// batchnorm, explicit backprop, momentum SGD.

struct OracleState {
  Matrix w1, b1, gamma, beta, w2, b2;
  std::array<Matrix, 6> vel;
};

double oracle_step(OracleState& s, const Matrix& x, const Matrix& q, const TrainConfig& cfg) {
  const std::size_t m = x.rows(), d = x.cols(), h = s.w1.cols(), c = s.w2.cols();
  const double md = static_cast<double>(m);
  const double eps = cfg.model.bn_eps;

  Matrix z(m, h);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      double acc = s.b1[j];
      for (std::size_t k = 0; k < d; ++k) acc += x(i, k) * s.w1(k, j);
      z(i, j) = acc;
    }
  std::vector<double> mu(h, 0.0), var(h, 0.0), inv(h);
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i < m; ++i) mu[j] += z(i, j) / md;
    for (std::size_t i = 0; i < m; ++i) var[j] += (z(i, j) - mu[j]) * (z(i, j) - mu[j]) / md;
    inv[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  Matrix xhat(m, h), a(m, h), r(m, h);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      xhat(i, j) = (z(i, j) - mu[j]) * inv[j];
      a(i, j) = s.gamma[j] * xhat(i, j) + s.beta[j];
      r(i, j) = std::max(0.0, a(i, j));
    }
  Matrix p(m, c);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      double l = s.b2[k];
      for (std::size_t j = 0; j < h; ++j) l += r(i, j) * s.w2(j, k);
      p(i, k) = l;
      mx = std::max(mx, l);
    }
    double tot = 0.0;
    for (std::size_t k = 0; k < c; ++k) tot += (p(i, k) = std::exp(p(i, k) - mx));
    for (std::size_t k = 0; k < c; ++k) p(i, k) /= tot;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) loss += p[i] * (std::log(p[i]) - std::log(q[i]));

  // Backward of loss / m.
  Matrix dlogit(m, c);
  for (std::size_t i = 0; i < m; ++i) {
    double dotp = 0.0;
    std::vector<double> g(c);
    for (std::size_t k = 0; k < c; ++k) {
      g[k] = (std::log(p(i, k)) - std::log(q(i, k)) + 1.0) / md;
      dotp += p(i, k) * g[k];
    }
    for (std::size_t k = 0; k < c; ++k) dlogit(i, k) = p(i, k) * (g[k] - dotp);
  }
  Matrix dw2(h, c), db2(1, c), dgamma(1, h), dbeta(1, h), dw1(d, h), db1(1, h), da(m, h);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      db2[k] += dlogit(i, k);
      for (std::size_t j = 0; j < h; ++j) dw2(j, k) += r(i, j) * dlogit(i, k);
    }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      double dr = 0.0;
      for (std::size_t k = 0; k < c; ++k) dr += dlogit(i, k) * s.w2(j, k);
      da(i, j) = a(i, j) > 0.0 ? dr : 0.0;
      dgamma[j] += da(i, j) * xhat(i, j);
      dbeta[j] += da(i, j);
    }
  for (std::size_t j = 0; j < h; ++j) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dx = da(i, j) * s.gamma[j];
      mean_dxhat += dx / md;
      mean_dxhat_xhat += dx * xhat(i, j) / md;
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double dz = inv[j] * (da(i, j) * s.gamma[j] - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
      db1[j] += dz;
      for (std::size_t k = 0; k < d; ++k) dw1(k, j) += x(i, k) * dz;
    }
  }

  std::array<Matrix*, 6> params{&s.w1, &s.b1, &s.gamma, &s.beta, &s.w2, &s.b2};
  std::array<const Matrix*, 6> grads{&dw1, &db1, &dgamma, &dbeta, &dw2, &db2};
  for (std::size_t t = 0; t < 6; ++t) {
    const double lr = t < 2 ? cfg.lr_backbone : cfg.lr_head;
    for (std::size_t i = 0; i < params[t]->size(); ++i) {
      s.vel[t][i] = cfg.momentum * s.vel[t][i] + (*grads[t])[i];
      (*params[t])[i] -= lr * s.vel[t][i];
    }
  }
  return loss / md;
}

TEST(RunEpoch, SingleBatchMatchesHandSteppedOracle) {
  const Dataset ds = mixture(3, 4, 5, 2.0, 50);  // n = 12 = m
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.7, 0.5, 0.9}}, 0.8, 3);
  TrainConfig cfg = small_config(3, 51);
  cfg.batch_size = 12;
  cfg.model.hidden = 4;
  cfg.loss = LossKind::kl_only;
  cfg.strategy = UpdateStrategy::clip;
  cfg.lr_backbone = 0.05;
  cfg.lr_head = 0.2;

  TrainerState st = TrainerState::create(ds, cfg);
  OracleState os{st.params.w1, st.params.b1, st.params.gamma, st.params.beta, st.params.w2, st.params.b2, {}};
  for (std::size_t t = 0; t < 6; ++t) os.vel[t] = Matrix(st.params.trainable()[t]->rows(), st.params.trainable()[t]->cols());
  const Matrix q = rescale(labels.soft_labels(), cfg.rescale);

  double prev = INFINITY;
  for (std::size_t step = 1; step <= 3; ++step) {
    const EpochResult er = run_epoch(ds, labels, st, cfg, step);
    ASSERT_EQ(er.stats.steps, 1u);
    const double expected = oracle_step(os, ds.features, q, cfg);
    EXPECT_NEAR(er.stats.mean_kl, expected, 1e-12) << "step " << step;
    EXPECT_NE(er.stats.mean_kl, prev);
    prev = er.stats.mean_kl;
    EXPECT_LE(max_abs_diff(st.params.w1, os.w1), 1e-12);
    EXPECT_LE(max_abs_diff(st.params.w2, os.w2), 1e-12);
    EXPECT_LE(max_abs_diff(st.params.gamma, os.gamma), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// run_epoch / run_training contracts

TEST(RunEpoch, ZeroLearningRateFreezesTrainableParams) {
  const Dataset ds = mixture(3, 20, 4, 3.0, 52);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.8, 0.8, 0.8}}, 0.9, 1);
  TrainConfig cfg = small_config(1, 53);
  cfg.lr_backbone = 0.0;
  cfg.lr_head = 0.0;
  TrainerState st = TrainerState::create(ds, cfg);
  const ClassifierParams start = st.params;
  const Matrix first = run_epoch(ds, labels, st, cfg).predictions;
  const Matrix second = run_epoch(ds, labels, st, cfg).predictions;
  for (std::size_t k = 0; k < ClassifierParams::kNumTrainable; ++k) {
    EXPECT_EQ(*st.params.trainable()[k], *start.trainable()[k]) << ClassifierParams::kTrainableNames[k];
  }
  EXPECT_TRUE(rows_on_simplex(first));
  EXPECT_TRUE(rows_on_simplex(second));
}

TEST(RunTraining, SameSeedSameReport) {
  const Dataset ds = mixture(4, 30, 6, 3.0, 54);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.6, 0.7, 0.5, 0.9}}, 0.9, 2);
  for (LossKind loss : {LossKind::c3l, LossKind::feat_contrastive, LossKind::reweight}) {
    TrainConfig cfg = small_config(4, 55);
    cfg.loss = loss;
    const TrainingResult a = run_training(ds, labels, cfg);
    const TrainingResult b = run_training(ds, labels, cfg);
    expect_reports_equal(a.report, b.report);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.labels.soft_labels(), b.labels.soft_labels());
  }
}

TEST(RunTraining, ClipWithZeroLambdaIsPlainKlTraining) {
  const Dataset ds = mixture(3, 30, 5, 3.0, 56);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.6, 0.7, 0.5}}, 0.9, 3);
  TrainConfig full = small_config(5, 57);
  full.strategy = UpdateStrategy::clip;
  full.loss_cfg.lambda = 0.0;
  TrainConfig plain = full;
  plain.loss = LossKind::kl_only;
  const TrainingResult a = run_training(ds, labels, full);
  const TrainingResult b = run_training(ds, labels, plain);
  EXPECT_EQ(a.params, b.params);
  for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
    EXPECT_EQ(a.report.epochs[e].mean_kl, b.report.epochs[e].mean_kl);
    EXPECT_EQ(a.report.epochs[e].accuracy, b.report.epochs[e].accuracy);
  }
  EXPECT_EQ(a.labels.soft_labels(), labels.soft_labels());
}

TEST(RunTraining, EnsembleStoreIsMeanOfRetainedSnapshots) {
  const Dataset ds = mixture(3, 25, 4, 3.0, 58);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.6, 0.4, 0.8}}, 0.9, 4);
  TrainConfig cfg = small_config(8, 59);
  cfg.strategy = UpdateStrategy::ensemble;

  TrainerState st = TrainerState::create(ds, cfg);
  LabelMatrix store = labels;
  std::vector<Matrix> snapshots;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    snapshots.push_back(run_epoch(ds, store, st, cfg, e).predictions);
    update_ensemble(store, snapshots.back());
    Matrix mean = labels.initial_labels();
    for (const Matrix& s : snapshots) mean = add(mean, s);
    mean = scale(mean, 1.0 / static_cast<double>(snapshots.size() + 1));
    EXPECT_LE(max_abs_diff(store.soft_labels(), mean), 1e-12) << "epoch " << e;
  }
  const TrainingResult full = run_training(ds, labels, cfg);
  EXPECT_EQ(full.labels.soft_labels(), store.soft_labels());
  EXPECT_EQ(full.labels.epoch(), cfg.epochs);
}

TEST(RunTraining, CleanLabelsReachNearPerfectAccuracy) {
  const Dataset ds = mixture(4, 150, 8, 6.0, 60);
  const LabelMatrix labels = inject_noise(ds, NoiseMatrix{Matrix::identity(4), {}}, 1.0, 5);
  for (UpdateStrategy s : {UpdateStrategy::ensemble, UpdateStrategy::pseudo, UpdateStrategy::clip}) {
    TrainConfig cfg = small_config(30, 61);
    cfg.strategy = s;
    const TrainingResult r = run_training(ds, labels, cfg);
    EXPECT_GE(*r.report.last().accuracy, 0.99) << to_string(s);
  }
}

TEST(RunTraining, RecordsMetricsPerEpoch) {
  const Dataset ds = mixture(3, 20, 4, 3.0, 62);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.6, 0.4, 0.8}}, 0.9, 6);
  TrainConfig cfg = small_config(3, 63);
  std::vector<std::size_t> seen;
  const TrainingResult r = run_training(ds, labels, cfg, [&](const EpochRecord& rec) { seen.push_back(rec.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  for (const EpochRecord& rec : r.report.epochs) {
    ASSERT_TRUE(rec.accuracy.has_value());
    ASSERT_TRUE(rec.label_accuracy.has_value());
    EXPECT_EQ(rec.per_class_accuracy.size(), 3u);
    EXPECT_GE(rec.flip_rate, 0.0);
    EXPECT_LE(rec.flip_rate, 1.0);
    EXPECT_GT(rec.mean_cc, 0.0);
  }
}

TEST(RunTraining, WithoutTruthMetricsAreAbsent) {
  Dataset ds = mixture(3, 10, 4, 3.0, 64);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.6, 0.4, 0.8}}, 0.9, 7);
  ds.true_labels.reset();
  const TrainingResult r = run_training(ds, labels, small_config(2, 65));
  EXPECT_FALSE(r.report.last().accuracy.has_value());
  EXPECT_FALSE(r.report.last().label_accuracy.has_value());
}

TEST(RunTraining, DivergenceKeepsPartialReport) {
  const Dataset ds = mixture(3, 20, 4, 3.0, 66);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{0.6, 0.4, 0.8}}, 0.9, 8);
  TrainConfig cfg = small_config(20, 67);
  cfg.lr_head = 1e200;
  cfg.lr_backbone = 1e200;
  try {
    run_training(ds, labels, cfg);
    FAIL() << "expected TrainingDivergedError";
  } catch (const TrainingDivergedError& e) {
    EXPECT_LT(e.partial_report().epochs.size(), cfg.epochs);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(RunTraining, ShapeAndConfigErrors) {
  const Dataset ds = mixture(3, 10, 4, 3.0, 68);
  const LabelMatrix wrong(Matrix(5, 3, 1.0 / 3.0));
  EXPECT_THROW(run_training(ds, wrong, small_config(1, 1)), DimensionError);
  const LabelMatrix labels = inject_noise(ds, PerClassAccuracy{{1, 1, 1}}, 1.0, 1);
  TrainConfig cfg = small_config(0, 1);
  EXPECT_THROW(run_training(ds, labels, cfg), ConfigError);
  cfg = small_config(1, 1);
  cfg.batch_size = 1;
  EXPECT_THROW(run_training(ds, labels, cfg), ConfigError);
}

TEST(Metrics, AccuracyFlipRateAndPerClass) {
  const std::vector<std::size_t> truth{0, 0, 1, 1};
  const std::vector<std::size_t> pred{0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(accuracy_of(pred, truth), 0.75);
  EXPECT_DOUBLE_EQ(flip_rate(truth, pred), 0.25);
  const auto pc = per_class_accuracy(pred, truth, 3);
  EXPECT_DOUBLE_EQ(pc[0], 0.5);
  EXPECT_DOUBLE_EQ(pc[1], 1.0);
  EXPECT_TRUE(std::isnan(pc[2]));
}

}  // namespace
}  // namespace noisylab
