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

// Training objectives.
//
//   kl        sum_i KL(f(x_i) || y_i)                  model output first
//   c3l       -sum_i log softmax_k(cos(f(x_i), f(x~_k)) / T)[k = i]
//   total     kl + lambda * c3l
//   feature   c3l with cosine taken on hidden features instead of outputs
//   reweight  sum_i max_j(y_i)_j * KL(f(x_i) || y_i), weights held constant
//
// Batch losses are sums over the batch, not means. Every term is built on a
// GradTape so gradients reach the model parameters; the BatchOutputs
// overloads wrap that for callers holding plain matrices.

#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "noisylab/errors.hpp"
#include "noisylab/matrix.hpp"
#include "noisylab/tape.hpp"

namespace noisylab {

enum class KlDirection {
  model_first,   // KL(f(x) || y)
  target_first,  // KL(y || f(x)), the usual cross-entropy direction
};

enum class Denominator {
  aug_only,    // sum over the m augmented views, self pair included
  both_views,  // additionally the m - 1 other clean views
};

enum class LossKind { c3l, kl_only, feat_contrastive, reweight };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::c3l: return "c3l";
    case LossKind::kl_only: return "kl_only";
    case LossKind::feat_contrastive: return "feat_contrastive";
    case LossKind::reweight: return "reweight";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "c3l") return LossKind::c3l;
  if (s == "kl_only") return LossKind::kl_only;
  if (s == "feat_contrastive") return LossKind::feat_contrastive;
  if (s == "reweight") return LossKind::reweight;
  throw ConfigError("unknown loss '" + std::string(s) + "' (c3l|kl_only|feat_contrastive|reweight)");
}

inline KlDirection parse_kl_direction(std::string_view s) {
  if (s == "literal" || s == "model_first") return KlDirection::model_first;
  if (s == "reverse" || s == "target_first") return KlDirection::target_first;
  throw ConfigError("unknown kl direction '" + std::string(s) + "' (literal|reverse)");
}

inline std::string_view to_string(KlDirection d) {
  return d == KlDirection::model_first ? "literal" : "reverse";
}

inline Denominator parse_denominator(std::string_view s) {
  if (s == "aug_only") return Denominator::aug_only;
  if (s == "both_views") return Denominator::both_views;
  throw ConfigError("unknown denominator '" + std::string(s) + "' (aug_only|both_views)");
}

inline std::string_view to_string(Denominator d) {
  return d == Denominator::aug_only ? "aug_only" : "both_views";
}

struct LossConfig {
  double temperature = 0.07;
  double lambda = 1.0;
  double prob_floor = kProbFloor;
  KlDirection kl_direction = KlDirection::model_first;
  Denominator denominator = Denominator::aug_only;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (!(prob_floor > 0.0 && prob_floor < 1.0)) throw ConfigError("prob_floor must lie in (0, 1)");
  }
};

/// Per-sample KL divergence, m x 1. `targets` are constants.
inline Var kl_per_sample(Var probs, const Matrix& targets, const LossConfig& cfg) {
  if (!probs.value().same_shape(targets)) {
    throw DimensionError("kl_loss: probs " + probs.value().shape() + " vs targets " + targets.shape());
  }
  GradTape& t = *probs.tape;
  Var log_p = log_clamped(probs, cfg.prob_floor);
  if (cfg.kl_direction == KlDirection::model_first) {
    Var log_q = t.constant(log_clamped(targets, cfg.prob_floor));
    return row_sum(hadamard(probs, sub(log_p, log_q)));
  }
  Var q = t.constant(targets);
  Var q_log_q = t.constant(hadamard(targets, log_clamped(targets, cfg.prob_floor)));
  return row_sum(sub(q_log_q, hadamard(q, log_p)));
}

inline Var kl_loss(Var probs, const Matrix& targets, const LossConfig& cfg) {
  return sum(kl_per_sample(probs, targets, cfg));
}

/// Per-sample contrastive terms, m x 1, with cosine similarity between the
/// rows of `anchors` and `views`. `norm_eps` guards rows that may be zero.
inline Var contrastive_per_sample(Var anchors, Var views, const LossConfig& cfg, double norm_eps = 0.0) {
  const std::size_t m = anchors.rows();
  if (!anchors.value().same_shape(views.value())) {
    throw DimensionError("contrastive loss: anchors " + anchors.value().shape() + " vs views " +
                         views.value().shape());
  }
  if (m < 2) throw BatchTooSmallError("contrastive loss needs a batch of at least 2, got " + std::to_string(m));
  GradTape& t = detail::same_tape(anchors, views);
  Var a = row_l2_normalize(anchors, norm_eps);
  Var v = row_l2_normalize(views, norm_eps);
  Var logits = scale(matmul(a, transpose(v)), 1.0 / cfg.temperature);
  if (cfg.denominator == Denominator::both_views) {
    // Exclude each anchor's similarity with itself.
    Matrix mask(m, m);
    for (std::size_t i = 0; i < m; ++i) mask(i, i) = -1e300;
    Var self_logits = add(scale(matmul(a, transpose(a)), 1.0 / cfg.temperature), t.constant(std::move(mask)));
    logits = concat_cols(logits, self_logits);
  }
  return scale(diag(log_softmax_rows(logits)), -1.0);
}

inline Var c3l_per_sample(Var probs, Var probs_aug, const LossConfig& cfg) {
  return contrastive_per_sample(probs, probs_aug, cfg);
}

inline Var c3l_loss(Var probs, Var probs_aug, const LossConfig& cfg) {
  return sum(c3l_per_sample(probs, probs_aug, cfg));
}

/// Hidden features can be exactly zero after a ReLU; normalization is
/// guarded there.
inline constexpr double kFeatureNormEps = 1e-12;

inline Var feature_contrastive_loss(Var feats, Var feats_aug, const LossConfig& cfg) {
  return sum(contrastive_per_sample(feats, feats_aug, cfg, kFeatureNormEps));
}

/// Per-sample KL weighted by the largest target probability.
inline Var reweighted_kl_loss(Var probs, const Matrix& targets, const LossConfig& cfg) {
  Matrix w(targets.rows(), 1);
  for (std::size_t i = 0; i < targets.rows(); ++i) w[i] = targets(i, argmax(targets.row(i)));
  Var per = kl_per_sample(probs, targets, cfg);
  return sum(hadamard(per, probs.tape->constant(std::move(w))));
}

/// Terms of one training objective, all 1 x 1.
struct Objective {
  Var total;
  Var kl;                          // fitting term (reweighted for LossKind::reweight)
  std::optional<Var> contrastive;  // unweighted contrastive term, when active
};

/// Assembles the objective selected by `kind`. `feats`/`feats_aug` are only
/// read by the feature-level baseline. The fitting term uses the clean view
/// unless `kl_on_aug` is set.
inline Objective build_objective(LossKind kind, Var probs, Var probs_aug, std::optional<Var> feats,
                                 std::optional<Var> feats_aug, const Matrix& targets, const LossConfig& cfg,
                                 bool kl_on_aug = false) {
  cfg.validate();
  const Var fit = kl_on_aug ? probs_aug : probs;
  switch (kind) {
    case LossKind::kl_only: {
      Var kl = kl_loss(fit, targets, cfg);
      return {kl, kl, std::nullopt};
    }
    case LossKind::reweight: {
      Var kl = reweighted_kl_loss(fit, targets, cfg);
      return {kl, kl, std::nullopt};
    }
    case LossKind::c3l: {
      Var kl = kl_loss(fit, targets, cfg);
      Var cc = c3l_loss(probs, probs_aug, cfg);
      return {add(kl, scale(cc, cfg.lambda)), kl, cc};
    }
    case LossKind::feat_contrastive: {
      if (!feats || !feats_aug) throw ConfigError("feature contrastive loss needs hidden features of both views");
      Var kl = kl_loss(fit, targets, cfg);
      Var cc = feature_contrastive_loss(*feats, *feats_aug, cfg);
      return {add(kl, scale(cc, cfg.lambda)), kl, cc};
    }
  }
  throw ConfigError("unhandled loss kind");
}

// ---------------------------------------------------------------------------
// Plain-matrix entry points.

/// Network outputs for one minibatch.
struct BatchOutputs {
  Matrix probs;      // m x C, f(x_i)
  Matrix probs_aug;  // m x C, f(x~_i)
  Matrix feats;      // m x h, hidden features of x_i (feature baseline only)
  Matrix feats_aug;  // m x h, hidden features of x~_i
  Matrix targets;    // m x C, rescaled training labels
};

struct LossValue {
  double value = 0.0;
  Matrix grad_probs;
  Matrix grad_probs_aug;
  Matrix grad_feats;
  Matrix grad_feats_aug;
};

namespace detail {

template <typename Build>
LossValue eval_batch(const BatchOutputs& b, Build&& build) {
  GradTape t;
  Var p = t.leaf(b.probs);
  Var pa = t.leaf(b.probs_aug.empty() ? Matrix(b.probs.rows(), b.probs.cols()) : b.probs_aug);
  Var f = t.leaf(b.feats);
  Var fa = t.leaf(b.feats_aug);
  Var out = build(p, pa, f, fa);
  t.backward(out);
  return {out.value()[0], t.grad(p), t.grad(pa), t.grad(f), t.grad(fa)};
}

}  // namespace detail

inline LossValue kl_loss(const BatchOutputs& b, const LossConfig& cfg = {}) {
  return detail::eval_batch(b, [&](Var p, Var, Var, Var) { return kl_loss(p, b.targets, cfg); });
}

inline LossValue c3l_loss(const BatchOutputs& b, const LossConfig& cfg = {}) {
  return detail::eval_batch(b, [&](Var p, Var pa, Var, Var) { return c3l_loss(p, pa, cfg); });
}

inline LossValue total_loss(const BatchOutputs& b, const LossConfig& cfg = {}) {
  return detail::eval_batch(
      b, [&](Var p, Var pa, Var, Var) { return build_objective(LossKind::c3l, p, pa, {}, {}, b.targets, cfg).total; });
}

inline LossValue feature_contrastive_loss(const BatchOutputs& b, const LossConfig& cfg = {}) {
  if (b.feats.empty() || b.feats_aug.empty()) {
    throw ConfigError("feature contrastive loss needs hidden features of both views");
  }
  return detail::eval_batch(b, [&](Var, Var, Var f, Var fa) { return feature_contrastive_loss(f, fa, cfg); });
}

inline LossValue reweighted_kl_loss(const BatchOutputs& b, const LossConfig& cfg = {}) {
  return detail::eval_batch(b, [&](Var p, Var, Var, Var) { return reweighted_kl_loss(p, b.targets, cfg); });
}

/// Whether the objective reads the augmented view at all.
inline bool uses_augmented_view(LossKind kind, bool kl_on_aug) {
  return kl_on_aug || kind == LossKind::c3l || kind == LossKind::feat_contrastive;
}

/// Per-sample C3L terms (values only).
inline Matrix c3l_terms(const BatchOutputs& b, const LossConfig& cfg = {}) {
  GradTape t;
  return c3l_per_sample(t.constant(b.probs), t.constant(b.probs_aug), cfg).value();
}

}  // namespace noisylab
