#pragma once

// Minimal tape-based reverse-mode differentiation over dense tensors.
//
// Every op records its forward value and a closure that pushes the output
// gradient back to its inputs. Nodes are appended in evaluation order, so the
// record order is a topological order and backward() simply walks it in
// reverse. A Tape is single-owner while recording.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo::ad {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node; it requires a gradient iff any input does.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Reverse pass from a single-element root. Throws DomainError otherwise.
  void backward(Var root);

  /// Gradient of the root w.r.t. v; zeros when v did not influence the root.
  Tensor grad(Var v) const;

  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of a node, zero-initialized on first use.
  Tensor& grad_buffer(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// ---- primitive ops --------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
/// Scalar-broadcast ops; s must hold exactly one element.
Var mul_scalar(Var a, Var s);
Var div_scalar(Var a, Var s);
Var add_scalar(Var a, Var s);

/// [m x k] * [k x n].
Var matmul(Var a, Var b);
/// [m x k] * [n x k]^T.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// x * W^T + b with W stored [out x in] and b of length out.
Var affine(Var x, Var w, Var b);
/// Adds vector v to every row of x.
Var add_row(Var x, Var v);
/// Multiplies column j of x by v[j].
Var scale_cols(Var x, Var v);

Var relu(Var a);
Var logistic(Var a);

Var softmax_rows(Var a);
/// Row i keeps columns j <= i; the rest get probability zero. Square input.
Var causal_softmax_rows(Var a);
Var logsumexp_rows(Var a);
/// axis 1 normalizes each row, axis 0 each column. Vectors count as one row.
Var l2_normalize(Var a, int axis);

Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);

Var embedding_lookup(Var table, std::span<const std::size_t> ids);
/// out[i] = x[i, idx[i]].
Var gather_cols(Var x, std::span<const std::size_t> idx);
Var diag(Var x);
/// Row i of the square input with column i removed.
Var offdiag(Var x);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);

/// Forward identity; nothing upstream receives gradient through it.
Var stop_gradient(Var x);

/// Row-wise robust loss f_i = tau_i * log((1/K) sum_k exp((C_ik - P_i)/tau_i)) + tau_i * rho.
/// contrast is [N x K]; positive and tau have length N.
Var robust_rows(Var contrast, Var positive, Var tau, double rho);

// ---- gradient checking ----------------------------------------------------

struct FiniteDiffOptions {
  double eps = 1e-6;
  /// 0 checks every coordinate; otherwise an evenly spaced subset.
  std::size_t max_coords = 0;
};

/// Builds a scalar on a fresh tape from a leaf holding x.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central FD| / max(1, |analytic|).
double finite_diff_check(const ScalarFn& f, const Tensor& x, const FiniteDiffOptions& opts = {});

}  // namespace tempo::ad
