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

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <utility>

#include "noisylab/errors.hpp"
#include "noisylab/matrix.hpp"
#include "noisylab/tape.hpp"

namespace noisylab {

struct ValueAndGrad {
  double value = 0.0;
  Matrix grad;
};

template <typename F>
concept LossFunction = std::invocable<F&, const Matrix&> &&
    std::convertible_to<std::invoke_result_t<F&, const Matrix&>, ValueAndGrad>;

/// Evaluates a tape-built scalar at `params` and returns the value with its
/// reverse-mode gradient. `build(tape, p)` must return a 1x1 Var.
template <typename Build>
ValueAndGrad eval_on_tape(Build&& build, const Matrix& params) {
  GradTape tape;
  Var p = tape.leaf(params);
  Var out = build(tape, p);
  tape.backward(out);
  return {out.value()[0], tape.grad(p)};
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences with step `epsilon`. Returns
///   max_k |analytic_k - numeric_k| / max(1, |analytic_k|, |numeric_k|).
/// Throws DeterminismError if two evaluations at `params` disagree.
template <LossFunction F>
double grad_check(F&& loss_fn, const Matrix& params, double epsilon = 1e-5) {
  if (!(epsilon > 0.0)) throw ConfigError("grad_check: epsilon must be positive");
  const ValueAndGrad first = loss_fn(params);
  const ValueAndGrad second = loss_fn(params);
  if (first.value != second.value || first.grad != second.grad) {
    throw DeterminismError("grad_check: loss function is not deterministic");
  }
  if (!first.grad.same_shape(params)) {
    throw DimensionError("grad_check: gradient shape " + first.grad.shape() +
                         " differs from parameter shape " + params.shape());
  }

  double worst = 0.0;
  Matrix probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + epsilon;
    const double up = loss_fn(std::as_const(probe)).value;
    probe[k] = orig - epsilon;
    const double down = loss_fn(std::as_const(probe)).value;
    probe[k] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = first.grad[k];
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace noisylab
