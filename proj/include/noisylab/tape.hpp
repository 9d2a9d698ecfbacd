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

// Reverse-mode differentiation over whole matrices.
//
// A GradTape records every operation in the order it is applied. Each node
// stores its forward value and a closure that pushes the node's adjoint into
// its parents. backward() walks the nodes in strict reverse order of
// recording, so results are deterministic and independent of graph shape.
//
// Usage:
//
//   GradTape tape;
//   Var w = tape.leaf(weights);
//   Var x = tape.constant(inputs);
//   Var loss = sum(relu(matmul(x, w)));
//   tape.backward(loss);
//   const Matrix& dw = tape.grad(w);
//
// One tape per training step; a tape must not be shared between threads.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/matrix.hpp"

namespace noisylab {

class GradTape;

/// Handle to a node on a GradTape.
struct Var {
  GradTape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class GradTape {
 public:
  /// Pushes the adjoint of node `self` (already complete) into its parents.
  using BackwardFn = std::function<void(GradTape&, std::size_t self)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// A differentiable input (parameter or anything we want d/dx of).
  Var leaf(Matrix value) { return push(std::move(value), true, nullptr); }

  /// A non-differentiable input.
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Records an op result. `parents` decide whether the node needs a gradient;
  /// if none does, `fn` is dropped.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Matrix& value(Var v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const {
    check_owner(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient of the last backward() output with respect to `v`. Zero matrix
  /// for nodes that do not require a gradient.
  const Matrix& grad(Var v) const {
    check_owner(v);
    const Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  /// Mutable adjoint for op implementations; allocated on demand.
  Matrix& adjoint(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void backward(Var out) {
    check_owner(out);
    if (nodes_[out.id].value.rows() != 1 || nodes_[out.id].value.cols() != 1) {
      throw DimensionError("backward: output must be 1x1, got " + nodes_[out.id].value.shape());
    }
    for (Node& n : nodes_) n.grad = Matrix();
    adjoint(out.id)[0] = 1.0;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    mutable Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw PreconditionError("Var does not belong to this tape");
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

namespace detail {

inline GradTape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw PreconditionError("operands live on different tapes");
  return *a.tape;
}

/// Accumulates `g` into parent `p` if it wants a gradient.
inline void accumulate(GradTape& t, Var p, const Matrix& g) {
  if (t.wants_grad(p.id)) axpy(t.adjoint(p.id), 1.0, g);
}

inline void require_row_vector(const Matrix& x, const Matrix& row, const char* op) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": expected 1x" + std::to_string(x.cols()) +
                         " row, got " + row.shape());
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  GradTape& t = detail::same_tape(a, b);
  return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    if (t.wants_grad(a.id)) axpy(t.adjoint(a.id), 1.0, matmul_nt(g, b.value()));
    if (t.wants_grad(b.id)) axpy(t.adjoint(b.id), 1.0, matmul_tn(a.value(), g));
  });
}

inline Var transpose(Var a) {
  return a.tape->record(transpose(a.value()), {a}, [a](GradTape& t, std::size_t self) {
    axpy(t.adjoint(a.id), 1.0, transpose(t.adjoint(self)));
  });
}

inline Var add(Var a, Var b) {
  GradTape& t = detail::same_tape(a, b);
  return t.record(add(a.value(), b.value()), {a, b}, [a, b](GradTape& t, std::size_t self) {
    const Matrix g = t.adjoint(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var sub(Var a, Var b) {
  GradTape& t = detail::same_tape(a, b);
  return t.record(sub(a.value(), b.value()), {a, b}, [a, b](GradTape& t, std::size_t self) {
    const Matrix g = t.adjoint(self);
    detail::accumulate(t, a, g);
    if (t.wants_grad(b.id)) axpy(t.adjoint(b.id), -1.0, g);
  });
}

inline Var hadamard(Var a, Var b) {
  GradTape& t = detail::same_tape(a, b);
  return t.record(hadamard(a.value(), b.value()), {a, b}, [a, b](GradTape& t, std::size_t self) {
    const Matrix g = t.adjoint(self);
    if (t.wants_grad(a.id)) axpy(t.adjoint(a.id), 1.0, hadamard(g, b.value()));
    if (t.wants_grad(b.id)) axpy(t.adjoint(b.id), 1.0, hadamard(g, a.value()));
  });
}

inline Var scale(Var a, double s) {
  return a.tape->record(scale(a.value(), s), {a}, [a, s](GradTape& t, std::size_t self) {
    axpy(t.adjoint(a.id), s, t.adjoint(self));
  });
}

/// x + 1 * row, broadcasting a 1 x n row over every row of x.
inline Var add_row(Var x, Var row) {
  GradTape& t = detail::same_tape(x, row);
  detail::require_row_vector(x.value(), row.value(), "add_row");
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += row.value()[j];
  return t.record(std::move(out), {x, row}, [x, row](GradTape& t, std::size_t self) {
    const Matrix g = t.adjoint(self);
    detail::accumulate(t, x, g);
    if (t.wants_grad(row.id)) {
      Matrix& gr = t.adjoint(row.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
    }
  });
}

/// x - 1 * row.
inline Var sub_row(Var x, Var row) {
  GradTape& t = detail::same_tape(x, row);
  detail::require_row_vector(x.value(), row.value(), "sub_row");
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) -= row.value()[j];
  return t.record(std::move(out), {x, row}, [x, row](GradTape& t, std::size_t self) {
    const Matrix g = t.adjoint(self);
    detail::accumulate(t, x, g);
    if (t.wants_grad(row.id)) {
      Matrix& gr = t.adjoint(row.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] -= g(i, j);
    }
  });
}

/// x * row elementwise, broadcasting a 1 x n row over every row of x.
inline Var mul_row(Var x, Var row) {
  GradTape& t = detail::same_tape(x, row);
  detail::require_row_vector(x.value(), row.value(), "mul_row");
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= row.value()[j];
  return t.record(std::move(out), {x, row}, [x, row](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& xv = x.value();
    const Matrix& rv = row.value();
    if (t.wants_grad(x.id)) {
      Matrix& gx = t.adjoint(x.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += g(i, j) * rv[j];
    }
    if (t.wants_grad(row.id)) {
      Matrix& gr = t.adjoint(row.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j) * xv(i, j);
    }
  });
}

/// 1 x n row of column means.
inline Var col_mean(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows() == 0) throw DimensionError("col_mean: no rows");
  Matrix out(1, xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out[j] += xv(i, j);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (double& v : out.data()) v *= inv;
  return x.tape->record(std::move(out), {x}, [x, inv](GradTape& t, std::size_t self) {
    const Matrix g = t.adjoint(self);
    Matrix& gx = t.adjoint(x.id);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g[j] * inv;
  });
}

/// Elementwise x^p. Callers keep x > 0 when p is not an integer.
inline Var pow(Var x, double p) {
  Matrix out = detail::map(x.value(), [p](double v) { return std::pow(v, p); });
  return x.tape->record(std::move(out), {x}, [x, p](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& xv = x.value();
    Matrix& gx = t.adjoint(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * p * std::pow(xv[i], p - 1.0);
  });
}

inline Var add_scalar(Var x, double c) {
  Matrix out = detail::map(x.value(), [c](double v) { return v + c; });
  return x.tape->record(std::move(out), {x}, [x](GradTape& t, std::size_t self) {
    axpy(t.adjoint(x.id), 1.0, t.adjoint(self));
  });
}

inline Var relu(Var x) {
  Matrix out = detail::map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.tape->record(std::move(out), {x}, [x](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& xv = x.value();
    Matrix& gx = t.adjoint(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

/// log(max(x, floor)); zero gradient where the clamp is active.
inline Var log_clamped(Var x, double floor = kProbFloor) {
  return x.tape->record(log_clamped(x.value(), floor), {x}, [x, floor](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& xv = x.value();
    Matrix& gx = t.adjoint(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] >= floor) gx[i] += g[i] / xv[i];
  });
}

inline Var softmax_rows(Var z) {
  Matrix p = softmax_rows(z.value());
  return z.tape->record(std::move(p), {z}, [z](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& pv = t.value(Var{&t, self});
    Matrix& gz = t.adjoint(z.id);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * pv(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gz(i, j) += pv(i, j) * (g(i, j) - s);
    }
  });
}

inline Var log_softmax_rows(Var z) {
  const Matrix& zv = z.value();
  require_finite(zv, "log_softmax_rows");
  Matrix out(zv.rows(), zv.cols());
  for (std::size_t i = 0; i < zv.rows(); ++i) {
    auto in = zv.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < in.size(); ++j) out(i, j) = in[j] - lse;
  }
  return z.tape->record(std::move(out), {z}, [z](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& lv = t.value(Var{&t, self});
    Matrix& gz = t.adjoint(z.id);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gz(i, j) += g(i, j) - std::exp(lv(i, j)) * s;
    }
  });
}

/// Each row divided by max(||row||, eps). With eps = 0 a zero row is an error.
inline Var row_l2_normalize(Var x, double eps = 0.0) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  std::vector<bool> clamped(xv.rows(), false);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    norms[i] = l2_norm(xv.row(i));
    if (norms[i] <= eps) {
      if (eps == 0.0) throw DegenerateInputError("row_l2_normalize: zero-norm row " + std::to_string(i));
      norms[i] = eps;
      clamped[i] = true;
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / norms[i];
  }
  return x.tape->record(std::move(out), {x},
                        [x, norms = std::move(norms), clamped = std::move(clamped)](GradTape& t, std::size_t self) {
                          const Matrix& g = t.adjoint(self);
                          const Matrix& y = t.value(Var{&t, self});
                          Matrix& gx = t.adjoint(x.id);
                          for (std::size_t i = 0; i < g.rows(); ++i) {
                            const double yg = clamped[i] ? 0.0 : dot(y.row(i), g.row(i));
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              gx(i, j) += (g(i, j) - y(i, j) * yg) / norms[i];
                          }
                        });
}

/// n x 1 column of row sums.
inline Var row_sum(Var x) {
  return x.tape->record(row_sum(x.value()), {x}, [x](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    Matrix& gx = t.adjoint(x.id);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g[i];
  });
}

/// 1 x 1 sum of all entries.
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Matrix(1, 1, s), {x}, [x](GradTape& t, std::size_t self) {
    const double g = t.adjoint(self)[0];
    for (double& v : t.adjoint(x.id).data()) v += g;
  });
}

/// n x 1 column holding entries (i, i) of an n x k matrix, k >= n.
inline Var diag(Var x) {
  const Matrix& xv = x.value();
  if (xv.cols() < xv.rows()) throw DimensionError("diag: need at least as many columns as rows, got " + xv.shape());
  Matrix out(xv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i) out[i] = xv(i, i);
  return x.tape->record(std::move(out), {x}, [x](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    Matrix& gx = t.adjoint(x.id);
    for (std::size_t i = 0; i < g.rows(); ++i) gx(i, i) += g[i];
  });
}

/// [a | b] side by side.
inline Var concat_cols(Var a, Var b) {
  GradTape& t = detail::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts differ, " + av.shape() + " vs " + bv.shape());
  }
  Matrix out(av.rows(), av.cols() + bv.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy(av.row(i).begin(), av.row(i).end(), out.row(i).begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(av.cols()));
  }
  const std::size_t split = av.cols();
  return t.record(std::move(out), {a, b}, [a, b, split](GradTape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    if (t.wants_grad(a.id)) {
      Matrix& ga = t.adjoint(a.id);
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(i, j);
    }
    if (t.wants_grad(b.id)) {
      Matrix& gb = t.adjoint(b.id);
      for (std::size_t i = 0; i < gb.rows(); ++i)
        for (std::size_t j = 0; j < gb.cols(); ++j) gb(i, j) += g(i, split + j);
    }
  });
}

}  // namespace noisylab
