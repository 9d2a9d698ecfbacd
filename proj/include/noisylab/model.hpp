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

// The classifier: linear -> batchnorm -> ReLU -> linear -> softmax, plus the
// stochastic view generator used for the contrastive terms.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/matrix.hpp"
#include "noisylab/tape.hpp"

namespace noisylab {

struct ClassifierParams {
  Matrix w1;            // d x h
  Matrix b1;            // 1 x h
  Matrix gamma;         // 1 x h
  Matrix beta;          // 1 x h
  Matrix running_mean;  // 1 x h
  Matrix running_var;   // 1 x h
  Matrix w2;            // h x C
  Matrix b2;            // 1 x C

  std::size_t input_dim() const noexcept { return w1.rows(); }
  std::size_t hidden_dim() const noexcept { return w1.cols(); }
  std::size_t num_classes() const noexcept { return w2.cols(); }

  static constexpr std::size_t kNumTrainable = 6;
  static constexpr std::array<std::string_view, kNumTrainable> kTrainableNames = {"W1", "b1", "gamma",
                                                                                  "beta", "W2", "b2"};

  /// Trainable tensors in a fixed order (matches kTrainableNames).
  std::array<Matrix*, kNumTrainable> trainable() { return {&w1, &b1, &gamma, &beta, &w2, &b2}; }
  std::array<const Matrix*, kNumTrainable> trainable() const { return {&w1, &b1, &gamma, &beta, &w2, &b2}; }

  bool all_finite() const {
    for (const Matrix* m : trainable())
      if (!m->all_finite()) return false;
    return running_mean.all_finite() && running_var.all_finite();
  }

  void validate() const {
    const std::size_t h = hidden_dim();
    const std::size_t c = num_classes();
    auto row_of = [](const Matrix& m, std::size_t n) { return m.rows() == 1 && m.cols() == n; };
    if (w2.rows() != h || !row_of(b1, h) || !row_of(gamma, h) || !row_of(beta, h) || !row_of(running_mean, h) ||
        !row_of(running_var, h) || !row_of(b2, c)) {
      throw DimensionError("classifier parameter shapes are inconsistent");
    }
    for (double v : running_var.data())
      if (!(v > 0.0)) throw PreconditionError("batchnorm running variance must be positive");
  }

  bool operator==(const ClassifierParams&) const = default;
};

struct ModelConfig {
  std::size_t hidden = 128;
  double bn_momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double bn_eps = 1e-5;
};

enum class Mode { train, infer };

/// Glorot-uniform weights, zero biases, identity batchnorm.
inline ClassifierParams init_params(std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed) {
  if (d == 0 || h == 0 || c == 0) throw ConfigError("init_params: dimensions must be positive");
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(fan_in, fan_out);
    for (double& v : w.data()) v = dist(rng);
    return w;
  };
  ClassifierParams p;
  p.w1 = glorot(d, h);
  p.b1 = Matrix(1, h);
  p.gamma = Matrix(1, h, 1.0);
  p.beta = Matrix(1, h);
  p.running_mean = Matrix(1, h);
  p.running_var = Matrix(1, h, 1.0);
  p.w2 = glorot(h, c);
  p.b2 = Matrix(1, c);
  return p;
}

/// Trainable parameters registered on a tape.
struct ParamVars {
  Var w1, b1, gamma, beta, w2, b2;

  std::array<Var, ClassifierParams::kNumTrainable> as_array() const { return {w1, b1, gamma, beta, w2, b2}; }
};

inline ParamVars bind_params(GradTape& t, const ClassifierParams& p) {
  return {t.leaf(p.w1), t.leaf(p.b1), t.leaf(p.gamma), t.leaf(p.beta), t.leaf(p.w2), t.leaf(p.b2)};
}

struct ForwardVars {
  Var logits;
  Var probs;
  Var feats;       // post-ReLU hidden activations
  Matrix batch_mean;  // train mode only
  Matrix batch_var;   // train mode only
};

/// Forward pass on a tape. Train mode normalizes with batch statistics (and
/// differentiates through them); infer mode uses the running statistics as
/// constants.
inline ForwardVars forward(GradTape& t, const ParamVars& pv, const ClassifierParams& params, Var x, Mode mode,
                           const ModelConfig& cfg = {}) {
  if (x.cols() != params.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                         std::to_string(params.input_dim()));
  }
  if (!x.value().all_finite()) throw DegenerateInputError("forward: non-finite input");
  Var z = add_row(matmul(x, pv.w1), pv.b1);
  Var xhat;
  Matrix bmean, bvar;
  if (mode == Mode::train) {
    if (x.rows() < 2) throw BatchTooSmallError("batchnorm in train mode needs at least 2 rows");
    Var mean = col_mean(z);
    Var centered = sub_row(z, mean);
    Var var = col_mean(hadamard(centered, centered));
    xhat = mul_row(centered, pow(add_scalar(var, cfg.bn_eps), -0.5));
    bmean = mean.value();
    bvar = var.value();
  } else {
    Matrix inv_std(1, params.hidden_dim());
    for (std::size_t j = 0; j < inv_std.cols(); ++j) inv_std[j] = 1.0 / std::sqrt(params.running_var[j] + cfg.bn_eps);
    xhat = mul_row(sub_row(z, t.constant(params.running_mean)), t.constant(std::move(inv_std)));
  }
  Var feats = relu(add_row(mul_row(xhat, pv.gamma), pv.beta));
  Var logits = add_row(matmul(feats, pv.w2), pv.b2);
  return {logits, softmax_rows(logits), feats, std::move(bmean), std::move(bvar)};
}

inline void update_running_stats(ClassifierParams& p, const Matrix& batch_mean, const Matrix& batch_var,
                                 double momentum) {
  if (!batch_mean.same_shape(p.running_mean) || !batch_var.same_shape(p.running_var)) {
    throw DimensionError("batch statistics do not match the hidden width");
  }
  for (std::size_t j = 0; j < p.running_mean.size(); ++j) {
    p.running_mean[j] = momentum * p.running_mean[j] + (1.0 - momentum) * batch_mean[j];
    p.running_var[j] = momentum * p.running_var[j] + (1.0 - momentum) * batch_var[j];
  }
}

struct ForwardResult {
  Matrix probs;  // m x C
  Matrix feats;  // m x h
};

/// Forward pass on plain matrices. Does not touch the running statistics.
inline ForwardResult forward(const ClassifierParams& params, const Matrix& x, Mode mode, const ModelConfig& cfg = {}) {
  GradTape t;
  ParamVars pv{t.constant(params.w1), t.constant(params.b1), t.constant(params.gamma),
               t.constant(params.beta), t.constant(params.w2), t.constant(params.b2)};
  ForwardVars out = forward(t, pv, params, t.constant(x), mode, cfg);
  return {out.probs.value(), out.feats.value()};
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double gaussian_sigma = 0.1;  // in units of the per-dimension feature std
  double dropout_prob = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gaussian_sigma >= 0.0) || !std::isfinite(gaussian_sigma)) throw ConfigError("augment: sigma must be >= 0");
    if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw ConfigError("augment: dropout_prob must lie in [0, 1)");
  }
};

/// Population standard deviation of each column, 1 x d.
inline Matrix column_std(const Matrix& x) {
  Matrix mean(1, x.cols());
  Matrix out(1, x.cols());
  if (x.rows() == 0) return out;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
  for (double& v : mean.data()) v /= static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
  for (double& v : out.data()) v = std::sqrt(v / static_cast<double>(x.rows()));
  return out;
}

/// Gaussian jitter followed by coordinate dropout (no rescaling). The result
/// depends only on (x, cfg, feature_std, draw_counter).
inline Matrix augment(const Matrix& x, const AugmentConfig& cfg, std::span<const double> feature_std,
                      std::uint64_t draw_counter) {
  cfg.validate();
  if (feature_std.size() != x.cols()) {
    throw DimensionError("augment: " + std::to_string(feature_std.size()) + " std entries for " +
                         std::to_string(x.cols()) + " features");
  }
  Matrix out = x;
  if (cfg.gaussian_sigma == 0.0 && cfg.dropout_prob == 0.0) return out;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(draw_counter), static_cast<std::uint32_t>(draw_counter >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution drop(cfg.dropout_prob);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      double v = out(i, j) + cfg.gaussian_sigma * feature_std[j] * noise(rng);
      if (drop(rng)) v = 0.0;
      out(i, j) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   noisylab-checkpoint 1
//   <name> <rows> <cols>
//   <row values, comma separated>   (rows lines)
//   ...
//
// Values use shortest round-trip formatting, so reloads are bit-exact.

inline constexpr std::string_view kCheckpointMagic = "noisylab-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const ClassifierParams& p) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  auto put = [&out](std::string_view name, const Matrix& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << io::format_double(m(i, j));
      out << '\n';
    }
  };
  put("W1", p.w1);
  put("b1", p.b1);
  put("gamma", p.gamma);
  put("beta", p.beta);
  put("running_mean", p.running_mean);
  put("running_var", p.running_var);
  put("W2", p.w2);
  put("b2", p.b2);
}

inline ClassifierParams load_checkpoint(std::istream& in) {
  const auto lines = io::read_lines(in);
  std::size_t k = 0;
  auto next = [&]() -> const io::Line& {
    if (k >= lines.size()) throw FormatError("checkpoint: unexpected end of file");
    return lines[k++];
  };
  {
    const auto& header = next();
    const auto parts = io::split(header.text, ' ');
    if (parts.size() != 2 || parts[0] != kCheckpointMagic) throw FormatError("checkpoint: bad header");
    if (io::parse_int(parts[1], header.number) != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + std::string(parts[1]));
    }
  }
  auto get = [&](std::string_view name) {
    const auto& head = next();
    const auto parts = io::split(head.text, ' ');
    if (parts.size() != 3 || parts[0] != name) {
      throw FormatError("checkpoint: expected tensor '" + std::string(name) + "' at line " +
                        std::to_string(head.number));
    }
    const auto rows = static_cast<std::size_t>(io::parse_int(parts[1], head.number));
    const auto cols = static_cast<std::size_t>(io::parse_int(parts[2], head.number));
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      const auto& line = next();
      auto vals = io::parse_row(line.text, line.number);
      if (vals.size() != cols) throw FormatError("checkpoint: wrong column count at line " + std::to_string(line.number));
      std::copy(vals.begin(), vals.end(), m.row(i).begin());
    }
    return m;
  };
  ClassifierParams p;
  p.w1 = get("W1");
  p.b1 = get("b1");
  p.gamma = get("gamma");
  p.beta = get("beta");
  p.running_mean = get("running_mean");
  p.running_var = get("running_var");
  p.w2 = get("W2");
  p.b2 = get("b2");
  p.validate();
  return p;
}

}  // namespace noisylab
