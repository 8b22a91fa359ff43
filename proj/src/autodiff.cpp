#include "tempo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tempo/error.hpp"
#include "tempo/kernels.hpp"

namespace tempo::ad {
namespace {

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw DomainError("operands live on different tapes");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() +
                     " differ");
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + a.shape_string());
  }
}

void require_scalar(const char* op, const Tensor& s) {
  if (s.size() != 1) {
    throw ShapeError(std::string(op) + ": expected a single element, got " + s.shape_string());
  }
}

// Accumulates g into the input's gradient when that input needs one.
void accumulate(Tape& t, std::size_t id, std::span<const double> g) {
  if (!t.needs_grad(id)) return;
  auto& buf = t.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// Rows and columns of a rank-1 or rank-2 tensor viewed as a matrix.
std::size_t nrows(const Tensor& t) { return t.rank() == 2 ? t.shape()[0] : 1; }

}  // namespace

const Tensor& Var::value() const { return tape_->value_of(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, std::move(inputs),
                        needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.size() != node.value.size()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw DomainError("backward root belongs to another tape");
  if (value_of(root.id()).size() != 1) {
    throw DomainError("backward needs a scalar root, got shape " + value_of(root.id()).shape_string());
  }
  for (auto& node : nodes_) node.grad = Tensor{};
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && node.grad.size() == node.value.size()) node.backward(*this, i);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_[v.id()];
  if (node.grad.size() == node.value.size()) return node.grad;
  return Tensor(node.value.shape(), 0.0);
}

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self).span());
    accumulate(t, ib, t.grad_of(self).span());
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    accumulate(t, ia, g.span());
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& va = t.value_of(ia);
    const auto& vb = t.value_of(ib);
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= c;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var add_const(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v += c;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self).span());
  });
}

Var mul_scalar(Var a, Var s) {
  require_same_tape(a, s);
  require_scalar("mul_scalar", s.value());
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.values()) v *= sv;
  const auto ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {ia, is}, [ia, is](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const double sv = t.value_of(is)[0];
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
    }
    if (t.needs_grad(is)) {
      const auto& va = t.value_of(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
      t.grad_buffer(is)[0] += acc;
    }
  });
}

Var div_scalar(Var a, Var s) {
  require_same_tape(a, s);
  require_scalar("div_scalar", s.value());
  const double sv = s.value()[0];
  if (sv == 0.0) throw DomainError("div_scalar by zero");
  Tensor out = a.value();
  for (double& v : out.values()) v /= sv;
  const auto ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {ia, is}, [ia, is](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const double sv = t.value_of(is)[0];
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / sv;
    }
    if (t.needs_grad(is)) {
      const auto& va = t.value_of(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
      t.grad_buffer(is)[0] -= acc / (sv * sv);
    }
  });
}

Var add_scalar(Var a, Var s) {
  require_same_tape(a, s);
  require_scalar("add_scalar", s.value());
  Tensor out = a.value();
  for (double& v : out.values()) v += s.value()[0];
  const auto ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {ia, is}, [ia, is](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    accumulate(t, ia, g.span());
    if (t.needs_grad(is)) {
      double acc = 0.0;
      for (double v : g.values()) acc += v;
      t.grad_buffer(is)[0] += acc;
    }
  });
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& va = a.value();
  const auto& vb = b.value();
  require_matrix("matmul", va);
  require_matrix("matmul", vb);
  const std::size_t m = va.shape()[0], k = va.shape()[1], n = vb.shape()[1];
  if (vb.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions of " + va.shape_string() + " and " +
                     vb.shape_string() + " differ");
  }
  Tensor out({m, n});
  kernels::matmul(va.span(), vb.span(), out.span(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.needs_grad(ia)) {  // dA = G * B^T
      kernels::matmul_nt(g.span(), t.value_of(ib).span(), t.grad_buffer(ia).span(), m, n, k, true);
    }
    if (t.needs_grad(ib)) {  // dB = A^T * G
      kernels::matmul_tn(t.value_of(ia).span(), g.span(), t.grad_buffer(ib).span(), k, m, n, true);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const auto& va = a.value();
  const auto& vb = b.value();
  require_matrix("matmul_nt", va);
  require_matrix("matmul_nt", vb);
  const std::size_t m = va.shape()[0], k = va.shape()[1], n = vb.shape()[0];
  if (vb.shape()[1] != k) {
    throw ShapeError("matmul_nt: inner dimensions of " + va.shape_string() + " and " +
                     vb.shape_string() + " differ");
  }
  Tensor out({m, n});
  kernels::matmul_nt(va.span(), vb.span(), out.span(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.needs_grad(ia)) {  // dA = G * B
      kernels::matmul(g.span(), t.value_of(ib).span(), t.grad_buffer(ia).span(), m, n, k, true);
    }
    if (t.needs_grad(ib)) {  // dB = G^T * A
      kernels::matmul_tn(g.span(), t.value_of(ia).span(), t.grad_buffer(ib).span(), n, m, k, true);
    }
  });
}

Var transpose(Var a) {
  const auto& va = a.value();
  require_matrix("transpose", va);
  const std::size_t r = va.shape()[0], c = va.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = va.at(i, j);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
  });
}

Var add_row(Var x, Var v) {
  require_same_tape(x, v);
  const auto& vx = x.value();
  const auto& vv = v.value();
  require_matrix("add_row", vx);
  if (vv.size() != vx.cols()) {
    throw ShapeError("add_row: row vector " + vv.shape_string() + " does not fit " + vx.shape_string());
  }
  Tensor out = vx;
  const std::size_t r = vx.rows(), c = vx.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += vv[j];
  const auto ix = x.id(), iv = v.id();
  return x.tape().record(std::move(out), {ix, iv}, [ix, iv, r, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    accumulate(t, ix, g.span());
    if (t.needs_grad(iv)) {
      auto& gv = t.grad_buffer(iv);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gv[j] += g.at(i, j);
    }
  });
}

Var affine(Var x, Var w, Var b) { return add_row(matmul_nt(x, w), b); }

Var scale_cols(Var x, Var v) {
  require_same_tape(x, v);
  const auto& vx = x.value();
  const auto& vv = v.value();
  require_matrix("scale_cols", vx);
  if (vv.size() != vx.cols()) {
    throw ShapeError("scale_cols: " + vv.shape_string() + " does not fit " + vx.shape_string());
  }
  Tensor out = vx;
  const std::size_t r = vx.rows(), c = vx.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= vv[j];
  const auto ix = x.id(), iv = v.id();
  return x.tape().record(std::move(out), {ix, iv}, [ix, iv, r, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& vx = t.value_of(ix);
    const auto& vv = t.value_of(iv);
    if (t.needs_grad(ix)) {
      auto& gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g.at(i, j) * vv[j];
    }
    if (t.needs_grad(iv)) {
      auto& gv = t.grad_buffer(iv);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gv[j] += g.at(i, j) * vx.at(i, j);
    }
  });
}

// ---- nonlinearities -------------------------------------------------------

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& va = t.value_of(ia);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (va[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var logistic(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

namespace {

// Softmax over the first `width(i)` entries of each row; the rest are zero.
template <typename Width>
Tensor softmax_prefix(const Tensor& x, Width width) {
  Tensor out(x.shape(), 0.0);
  const std::size_t r = nrows(x), c = x.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t w = width(i);
    const double* xi = x.data() + i * c;
    double* yi = out.data() + i * c;
    const double m = *std::max_element(xi, xi + w);
    double total = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      yi[j] = std::exp(xi[j] - m);
      total += yi[j];
    }
    for (std::size_t j = 0; j < w; ++j) yi[j] /= total;
  }
  return out;
}

// dx = y * (g - <g, y>) row by row.
void softmax_backward(Tape& t, std::size_t self, std::size_t input) {
  const auto& g = t.grad_of(self);
  const auto& y = t.value_of(self);
  auto& gx = t.grad_buffer(input);
  const std::size_t r = nrows(y), c = y.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
  }
}

}  // namespace

Var softmax_rows(Var a) {
  const auto& va = a.value();
  if (va.size() == 0) throw ShapeError("softmax_rows of an empty tensor");
  const std::size_t c = va.cols();
  Tensor out = softmax_prefix(va, [c](std::size_t) { return c; });
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    softmax_backward(t, self, ia);
  });
}

Var causal_softmax_rows(Var a) {
  const auto& va = a.value();
  require_matrix("causal_softmax_rows", va);
  if (va.shape()[0] != va.shape()[1]) {
    throw ShapeError("causal_softmax_rows: expected a square matrix, got " + va.shape_string());
  }
  Tensor out = softmax_prefix(va, [](std::size_t i) { return i + 1; });
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    softmax_backward(t, self, ia);
  });
}

Var logsumexp_rows(Var a) {
  const auto& va = a.value();
  if (va.size() == 0) throw ShapeError("logsumexp_rows of an empty tensor");
  const std::size_t r = nrows(va), c = va.cols();
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = va.data() + i * c;
    const double m = *std::max_element(xi, xi + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(xi[j] - m);
    out[i] = m + std::log(total);
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& x = t.value_of(ia);
    const auto& y = t.value_of(self);
    auto& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i] * std::exp(x[i * c + j] - y[i]);
  });
}

Var l2_normalize(Var a, int axis) {
  if (axis != 0 && axis != 1) throw DomainError("l2_normalize axis must be 0 or 1");
  const auto& va = a.value();
  const std::size_t r = nrows(va), c = va.cols();
  // Groups: rows (axis 1) or columns (axis 0); element (g, e) maps to a flat index.
  const std::size_t groups = axis == 1 ? r : c;
  const std::size_t extent = axis == 1 ? c : r;
  auto index = [axis, c](std::size_t g, std::size_t e) { return axis == 1 ? g * c + e : e * c + g; };
  constexpr double kFloor = 1e-12;
  Tensor out = va;
  Tensor norms({groups});
  for (std::size_t g = 0; g < groups; ++g) {
    double ss = 0.0;
    for (std::size_t e = 0; e < extent; ++e) ss += va[index(g, e)] * va[index(g, e)];
    norms[g] = std::max(std::sqrt(ss), kFloor);
    for (std::size_t e = 0; e < extent; ++e) out[index(g, e)] /= norms[g];
  }
  const auto ia = a.id();
  return a.tape().record(
      std::move(out), {ia}, [ia, groups, extent, index, norms](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& y = t.value_of(self);
        auto& gx = t.grad_buffer(ia);
        for (std::size_t k = 0; k < groups; ++k) {
          double dot = 0.0;
          for (std::size_t e = 0; e < extent; ++e) dot += g[index(k, e)] * y[index(k, e)];
          for (std::size_t e = 0; e < extent; ++e) {
            gx[index(k, e)] += (g[index(k, e)] - y[index(k, e)] * dot) / norms[k];
          }
        }
      });
}

// ---- reductions -------------------------------------------------------------

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const auto ia = a.id();
  return a.tape().record(Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.grad_buffer(ia).values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const auto& va = a.value();
  const std::size_t r = nrows(va), c = va.cols();
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += va[i * c + j];
    out[i] = total;
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
  });
}

// ---- indexing -----------------------------------------------------------------

Var embedding_lookup(Var table, std::span<const std::size_t> ids) {
  const auto& vt = table.value();
  require_matrix("embedding_lookup", vt);
  const std::size_t vocab = vt.shape()[0], d = vt.shape()[1];
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw DomainError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                        std::to_string(vocab));
    }
    std::copy_n(vt.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  const auto it = table.id();
  return table.tape().record(std::move(out), {it}, [it, idx, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& gt = t.grad_buffer(it);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
  });
}

Var gather_cols(Var x, std::span<const std::size_t> idx) {
  const auto& vx = x.value();
  require_matrix("gather_cols", vx);
  const std::size_t r = vx.shape()[0], c = vx.shape()[1];
  if (idx.size() != r) throw ShapeError("gather_cols: need one index per row of " + vx.shape_string());
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw DomainError("gather_cols: column index out of range");
    out[i] = vx.at(i, idx[i]);
  }
  std::vector<std::size_t> cols(idx.begin(), idx.end());
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, cols, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < cols.size(); ++i) gx[i * c + cols[i]] += g[i];
  });
}

Var diag(Var x) {
  const auto& vx = x.value();
  require_matrix("diag", vx);
  if (vx.shape()[0] != vx.shape()[1]) throw ShapeError("diag: expected square, got " + vx.shape_string());
  std::vector<std::size_t> idx(vx.shape()[0]);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather_cols(x, idx);
}

Var offdiag(Var x) {
  const auto& vx = x.value();
  require_matrix("offdiag", vx);
  const std::size_t n = vx.shape()[0];
  if (vx.shape()[1] != n) throw ShapeError("offdiag: expected square, got " + vx.shape_string());
  if (n < 2) throw ShapeError("offdiag: need at least a 2x2 matrix");
  Tensor out({n, n - 1});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) out.at(i, o++) = vx.at(i, j);
    }
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t o = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) gx.at(i, j) += g.at(i, o++);
      }
    }
  });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const auto& vx = x.value();
  require_matrix("slice_rows", vx);
  const std::size_t c = vx.cols();
  if (start + count > vx.shape()[0]) throw ShapeError("slice_rows: range exceeds " + vx.shape_string());
  Tensor out({count, c});
  std::copy_n(vx.data() + start * c, count * c, out.data());
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, start, count, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < count * c; ++i) gx[start * c + i] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t c = parts[0].value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    require_matrix("concat_rows", p.value());
    if (p.value().cols() != c) throw ShapeError("concat_rows: column counts differ");
    ids.push_back(p.id());
    offsets.push_back(total);
    total += p.value().shape()[0];
  }
  Tensor out({total, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::copy_n(parts[k].value().data(), parts[k].value().size(), out.data() + offsets[k] * c);
  }
  return parts[0].tape().record(std::move(out), ids, [ids, offsets, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      auto& gk = t.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] * c + i];
    }
  });
}

Var stop_gradient(Var x) { return x.tape().constant(x.value()); }

// ---- fused robust loss ----------------------------------------------------------

Var robust_rows(Var contrast, Var positive, Var tau, double rho) {
  require_same_tape(contrast, positive);
  require_same_tape(contrast, tau);
  const auto& c = contrast.value();
  require_matrix("robust_rows", c);
  const std::size_t n = c.shape()[0], k = c.shape()[1];
  if (k == 0) throw DomainError("robust_rows: empty contrast set");
  if (positive.value().size() != n || tau.value().size() != n) {
    throw ShapeError("robust_rows: positive " + positive.value().shape_string() + " and tau " +
                     tau.value().shape_string() + " must have one entry per row of " + c.shape_string());
  }
  Tensor out({n});
  Tensor weights({n, k});  // Gibbs weights p_ik
  Tensor dtau({n});        // d f_i / d tau_i
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = tau.value()[i];
    if (!(ti > 0.0)) throw DomainError("robust_rows: tau must be positive");
    const double pos = positive.value()[i];
    const double* ci = c.data() + i * k;
    double m = ci[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, ci[j]);
    double* pi = weights.data() + i * k;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      pi[j] = std::exp((ci[j] - m) / ti);
      total += pi[j];
    }
    double mean_x = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      pi[j] /= total;
      mean_x += pi[j] * (ci[j] - m) / ti;
    }
    const double lme = std::log(total / static_cast<double>(k));
    out[i] = (m - pos) + ti * lme + ti * rho;
    dtau[i] = lme - mean_x + rho;
  }
  const auto ic = contrast.id(), ip = positive.id(), it = tau.id();
  return contrast.tape().record(
      std::move(out), {ic, ip, it},
      [ic, ip, it, n, k, weights = std::move(weights), dtau = std::move(dtau)](Tape& t,
                                                                               std::size_t self) {
        const auto& g = t.grad_of(self);
        if (t.needs_grad(ic)) {
          auto& gc = t.grad_buffer(ic);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) gc[i * k + j] += g[i] * weights[i * k + j];
        }
        if (t.needs_grad(ip)) {
          auto& gp = t.grad_buffer(ip);
          for (std::size_t i = 0; i < n; ++i) gp[i] -= g[i];
        }
        if (t.needs_grad(it)) {
          auto& gt = t.grad_buffer(it);
          for (std::size_t i = 0; i < n; ++i) gt[i] += g[i] * dtau[i];
        }
      });
}

// ---- finite differences -------------------------------------------------------

double finite_diff_check(const ScalarFn& f, const Tensor& x, const FiniteDiffOptions& opts) {
  if (!(opts.eps > 0.0)) throw DomainError("finite difference step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var out = f(tape, leaf);
    if (out.value().size() != 1) {
      throw DomainError("finite_diff_check needs a scalar function, got " + out.value().shape_string());
    }
    tape.backward(out);
    analytic = tape.grad(leaf);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    return f(tape, tape.leaf(point, false)).value()[0];
  };
  const std::size_t n = x.size();
  const std::size_t stride =
      (opts.max_coords == 0 || opts.max_coords >= n) ? 1 : (n + opts.max_coords - 1) / opts.max_coords;
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < n; i += stride) {
    const double saved = probe[i];
    probe[i] = saved + opts.eps;
    const double up = eval(probe);
    probe[i] = saved - opts.eps;
    const double down = eval(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * opts.eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace tempo::ad
