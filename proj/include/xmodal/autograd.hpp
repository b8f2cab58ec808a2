// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/matrix.hpp"

namespace xmodal {

// Reverse-mode autodiff over Matrix<Real>. The graph is built per forward
// pass; parameter leaves persist across passes and accumulate gradients in
// place. Single-threaded by design: the training loop is the only writer.

template <typename Real>
struct Node {
  Matrix<Real> value;
  Matrix<Real> grad;  // allocated on first touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix<Real>& ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix<Real>(value.rows(), value.cols(), Real(0));
    }
    return grad;
  }
};

template <typename Real>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Real>> n) : node_(std::move(n)) {}

  static Var leaf(Matrix<Real> value, bool requires_grad) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var constant(Matrix<Real> value) { return leaf(std::move(value), false); }

  bool valid() const { return node_ != nullptr; }
  const Matrix<Real>& value() const { return node_->value; }
  Matrix<Real>& mutable_value() { return node_->value; }
  Matrix<Real>& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<Node<Real>> node() const { return node_; }

  void zero_grad() {
    if (node_) node_->grad = Matrix<Real>();
  }

  Real scalar() const {
    if (node_->value.size() != 1) {
      throw DimensionError("Var::scalar on non-scalar value " +
                           node_->value.shape_str());
    }
    return node_->value.at(0, 0);
  }

 private:
  std::shared_ptr<Node<Real>> node_;
};

namespace detail {

template <typename Real>
Var<Real> make_op(Matrix<Real> value,
                  std::vector<std::shared_ptr<Node<Real>>> parents,
                  std::function<void(Node<Real>&)> backward) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(backward);
  return Var<Real>(std::move(n));
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar node into every reachable
/// leaf with requires_grad. Gradients add onto whatever is already stored.
template <typename Real>
void backward(const Var<Real>& loss) {
  if (loss.value().size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " +
                         loss.value().shape_str());
  }
  // Iterative post-order topological sort.
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  struct Frame {
    Node<Real>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<Real>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad().at(0, 0) += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->requires_grad && n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError("add: shape mismatch " + a.value().shape_str() +
                         " vs " + b.value().shape_str());
  }
  Matrix<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.storage()[i] += b.value().storage()[i];
  }
  auto pa = a.node(), pb = b.node();
  return detail::make_op<Real>(std::move(out), {pa, pb}, [pa, pb](Node<Real>& n) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] += n.grad.storage()[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] += n.grad.storage()[i];
    }
  });
}

/// Adds a 1xC row vector to every row of a.
template <typename Real>
Var<Real> add_rowvec(const Var<Real>& a, const Var<Real>& row) {
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols()) {
    throw DimensionError("add_rowvec: bias " + row.value().shape_str() +
                         " does not broadcast onto " + a.value().shape_str());
  }
  Matrix<Real> out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out.at(r, c) += row.value().at(0, c);
    }
  }
  auto pa = a.node(), pr = row.node();
  return detail::make_op<Real>(std::move(out), {pa, pr}, [pa, pr](Node<Real>& n) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] += n.grad.storage()[i];
    }
    if (pr->requires_grad) {
      auto& g = pr->ensure_grad();
      for (std::size_t r = 0; r < n.grad.rows(); ++r) {
        for (std::size_t c = 0; c < n.grad.cols(); ++c) {
          g.at(0, c) += n.grad.at(r, c);
        }
      }
    }
  });
}

/// Adds a plain (non-differentiated) matrix, e.g. positional encodings.
template <typename Real>
Var<Real> add_const(const Var<Real>& a, const Matrix<Real>& m) {
  if (!a.value().same_shape(m)) {
    throw DimensionError("add_const: shape mismatch " + a.value().shape_str() +
                         " vs " + m.shape_str());
  }
  Matrix<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] += m.storage()[i];
  auto pa = a.node();
  return detail::make_op<Real>(std::move(out), {pa}, [pa](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] += n.grad.storage()[i];
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real c) {
  Matrix<Real> out = a.value();
  for (auto& v : out.storage()) v *= c;
  auto pa = a.node();
  return detail::make_op<Real>(std::move(out), {pa}, [pa, c](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] += c * n.grad.storage()[i];
  });
}

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  if (a.value().cols() != b.value().rows()) {
    throw DimensionError("matmul: " + a.value().shape_str() + " x " +
                         b.value().shape_str());
  }
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  Matrix<Real> out(m, n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const Real av = a.value().at(i, t);
      for (std::size_t j = 0; j < n; ++j) {
        out.at(i, j) += av * b.value().at(t, j);
      }
    }
  }
  auto pa = a.node(), pb = b.node();
  return detail::make_op<Real>(std::move(out), {pa, pb}, [pa, pb, m, k, n](Node<Real>& nd) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();  // dA = G B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          Real s = 0;
          for (std::size_t j = 0; j < n; ++j) s += nd.grad.at(i, j) * pb->value.at(t, j);
          ga.at(i, t) += s;
        }
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();  // dB = A^T G
      for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t j = 0; j < n; ++j) {
          Real s = 0;
          for (std::size_t i = 0; i < m; ++i) s += pa->value.at(i, t) * nd.grad.at(i, j);
          gb.at(t, j) += s;
        }
      }
    }
  });
}

/// a @ b^T without materializing the transpose.
template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b) {
  if (a.value().cols() != b.value().cols()) {
    throw DimensionError("matmul_nt: " + a.value().shape_str() + " x " +
                         b.value().shape_str() + "^T");
  }
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  Matrix<Real> out(m, n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::size_t t = 0; t < k; ++t) s += a.value().at(i, t) * b.value().at(j, t);
      out.at(i, j) = s;
    }
  }
  auto pa = a.node(), pb = b.node();
  return detail::make_op<Real>(std::move(out), {pa, pb}, [pa, pb, m, k, n](Node<Real>& nd) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();  // dA = G B
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          Real s = 0;
          for (std::size_t j = 0; j < n; ++j) s += nd.grad.at(i, j) * pb->value.at(j, t);
          ga.at(i, t) += s;
        }
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();  // dB = G^T A
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < k; ++t) {
          Real s = 0;
          for (std::size_t i = 0; i < m; ++i) s += nd.grad.at(i, j) * pa->value.at(i, t);
          gb.at(j, t) += s;
        }
      }
    }
  });
}

template <typename Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) {
      throw DimensionError("concat_rows: column mismatch");
    }
    rows += p.value().rows();
  }
  Matrix<Real> out(rows, cols);
  std::vector<std::shared_ptr<Node<Real>>> parents;
  std::size_t r0 = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(r0);
    for (std::size_t r = 0; r < p.value().rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) out.at(r0 + r, c) = p.value().at(r, c);
    }
    r0 += p.value().rows();
    parents.push_back(p.node());
  }
  auto ps = parents;
  return detail::make_op<Real>(std::move(out), std::move(parents),
                               [ps, offsets, cols](Node<Real>& n) {
    for (std::size_t idx = 0; idx < ps.size(); ++idx) {
      if (!ps[idx]->requires_grad) continue;
      auto& g = ps[idx]->ensure_grad();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          g.at(r, c) += n.grad.at(offsets[idx] + r, c);
        }
      }
    }
  });
}

template <typename Real>
Var<Real> slice_rows(const Var<Real>& a, std::size_t r0, std::size_t nrows) {
  if (r0 + nrows > a.value().rows()) {
    throw DimensionError("slice_rows: out of range");
  }
  Matrix<Real> out(nrows, a.value().cols());
  for (std::size_t r = 0; r < nrows; ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = a.value().at(r0 + r, c);
  }
  auto pa = a.node();
  return detail::make_op<Real>(std::move(out), {pa}, [pa, r0](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < n.grad.rows(); ++r) {
      for (std::size_t c = 0; c < n.grad.cols(); ++c) g.at(r0 + r, c) += n.grad.at(r, c);
    }
  });
}

template <typename Real>
Var<Real> slice_cols(const Var<Real>& a, std::size_t c0, std::size_t ncols) {
  if (c0 + ncols > a.value().cols()) {
    throw DimensionError("slice_cols: out of range");
  }
  Matrix<Real> out(a.value().rows(), ncols);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < ncols; ++c) out.at(r, c) = a.value().at(r, c0 + c);
  }
  auto pa = a.node();
  return detail::make_op<Real>(std::move(out), {pa}, [pa, c0](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < n.grad.rows(); ++r) {
      for (std::size_t c = 0; c < n.grad.cols(); ++c) g.at(r, c0 + c) += n.grad.at(r, c);
    }
  });
}

template <typename Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.value().cols();
  }
  Matrix<Real> out(rows, cols);
  std::vector<std::shared_ptr<Node<Real>>> parents;
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    offsets.push_back(c0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < p.value().cols(); ++c) out.at(r, c0 + c) = p.value().at(r, c);
    }
    c0 += p.value().cols();
    parents.push_back(p.node());
  }
  auto ps = parents;
  return detail::make_op<Real>(std::move(out), std::move(parents),
                               [ps, offsets, rows](Node<Real>& n) {
    for (std::size_t idx = 0; idx < ps.size(); ++idx) {
      if (!ps[idx]->requires_grad) continue;
      auto& g = ps[idx]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
          g.at(r, c) += n.grad.at(r, offsets[idx] + c);
        }
      }
    }
  });
}

/// L2-normalizes each row. Rows with norm below `tiny` are rejected: a
/// zero-length embedding has no direction and would poison cosine scores.
template <typename Real>
Var<Real> row_l2_normalize(const Var<Real>& a) {
  const Real tiny = Real(1e-30);
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  Matrix<Real> out(rows, cols);
  std::vector<Real> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += a.value().at(r, c) * a.value().at(r, c);
    const Real nrm = std::sqrt(s);
    if (!(nrm > tiny)) {
      throw DegenerateInputError("row_l2_normalize: zero-norm row " + std::to_string(r));
    }
    norms[r] = nrm;
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = a.value().at(r, c) / nrm;
  }
  auto pa = a.node();
  Matrix<Real> unit = out;
  return detail::make_op<Real>(std::move(out), {pa},
                               [pa, norms, unit](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    const std::size_t rows = unit.rows(), cols = unit.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += n.grad.at(r, c) * unit.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) {
        g.at(r, c) += (n.grad.at(r, c) - dot * unit.at(r, c)) / norms[r];
      }
    }
  });
}

/// Softmax over each row (no masking); used for layer-weight normalization.
template <typename Real>
Var<Real> softmax_rows(const Var<Real>& a) {
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  Matrix<Real> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = a.value().at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, a.value().at(r, c));
    Real den = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = std::exp(a.value().at(r, c) - mx);
      den += out.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= den;
  }
  auto pa = a.node();
  Matrix<Real> probs = out;
  return detail::make_op<Real>(std::move(out), {pa}, [pa, probs](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < probs.cols(); ++c) dot += n.grad.at(r, c) * probs.at(r, c);
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        g.at(r, c) += probs.at(r, c) * (n.grad.at(r, c) - dot);
      }
    }
  });
}

/// Row softmax where key_mask[c]==false positions get probability exactly 0.
/// Throws if a row has no valid key.
template <typename Real>
Var<Real> masked_softmax_rows(const Var<Real>& a, const std::vector<std::uint8_t>& key_mask) {
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  if (key_mask.size() != cols) {
    throw DimensionError("masked_softmax_rows: mask length " +
                         std::to_string(key_mask.size()) + " != cols " +
                         std::to_string(cols));
  }
  bool any = false;
  for (auto m : key_mask) any = any || m;
  if (!any) throw DegenerateInputError("masked_softmax_rows: all keys masked");
  Matrix<Real> out(rows, cols, Real(0));
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (key_mask[c]) mx = std::max(mx, a.value().at(r, c));
    }
    Real den = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (key_mask[c]) {
        out.at(r, c) = std::exp(a.value().at(r, c) - mx);
        den += out.at(r, c);
      }
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (key_mask[c]) out.at(r, c) /= den;
    }
  }
  auto pa = a.node();
  Matrix<Real> probs = out;
  return detail::make_op<Real>(std::move(out), {pa},
                               [pa, probs, key_mask](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        if (key_mask[c]) dot += n.grad.at(r, c) * probs.at(r, c);
      }
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        if (key_mask[c]) g.at(r, c) += probs.at(r, c) * (n.grad.at(r, c) - dot);
      }
    }
  });
}

/// Per-row layer normalization with learnable gain/bias (1xC each).
template <typename Real>
Var<Real> layer_norm(const Var<Real>& a, const Var<Real>& gamma, const Var<Real>& beta,
                     Real eps = Real(1e-5)) {
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != cols ||
      beta.value().rows() != 1 || beta.value().cols() != cols) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(cols));
  }
  Matrix<Real> out(rows, cols);
  Matrix<Real> xhat(rows, cols);
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Real mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += a.value().at(r, c);
    mean /= Real(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real d = a.value().at(r, c) - mean;
      var += d * d;
    }
    var /= Real(cols);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      xhat.at(r, c) = (a.value().at(r, c) - mean) * is;
      out.at(r, c) = gamma.value().at(0, c) * xhat.at(r, c) + beta.value().at(0, c);
    }
  }
  auto pa = a.node(), pg = gamma.node(), pb = beta.node();
  return detail::make_op<Real>(std::move(out), {pa, pg, pb},
                               [pa, pg, pb, xhat, inv_std](Node<Real>& n) {
    const std::size_t rows = xhat.rows(), cols = xhat.cols();
    if (pg->requires_grad) {
      auto& gg = pg->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gg.at(0, c) += n.grad.at(r, c) * xhat.at(r, c);
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb.at(0, c) += n.grad.at(r, c);
      }
    }
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        Real sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const Real dxh = n.grad.at(r, c) * pg->value.at(0, c);
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat.at(r, c);
        }
        for (std::size_t c = 0; c < cols; ++c) {
          const Real dxh = n.grad.at(r, c) * pg->value.at(0, c);
          ga.at(r, c) += inv_std[r] * (dxh - (sum_dxhat + xhat.at(r, c) * sum_dxhat_xhat) / Real(cols));
        }
      }
    }
  });
}

/// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))). Smooth, so finite-difference
/// gradient checks are well-behaved everywhere.
template <typename Real>
Var<Real> gelu(const Var<Real>& a) {
  const Real inv_sqrt2 = Real(0.70710678118654752440);
  const Real inv_sqrt2pi = Real(0.39894228040143267794);
  Matrix<Real> out = a.value();
  for (auto& v : out.storage()) {
    v = Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2));
  }
  auto pa = a.node();
  return detail::make_op<Real>(std::move(out), {pa},
                               [pa, inv_sqrt2, inv_sqrt2pi](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real x = pa->value.storage()[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2));
      const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
      g.storage()[i] += n.grad.storage()[i] * (cdf + x * pdf);
    }
  });
}

/// out = sum_h weights(0,h) * mats[h]; the weighted layer combination.
/// Works whether the layer matrices are constants (frozen extractor) or
/// differentiable (trainable extractor).
template <typename Real>
Var<Real> linear_combination(const Var<Real>& weights, const std::vector<Var<Real>>& mats) {
  if (weights.value().rows() != 1 || weights.value().cols() != mats.size()) {
    throw DimensionError("linear_combination: got " +
                         std::to_string(mats.size()) + " matrices for weights " +
                         weights.value().shape_str());
  }
  if (mats.empty()) throw DimensionError("linear_combination: no matrices");
  const std::size_t rows = mats.front().value().rows(), cols = mats.front().value().cols();
  Matrix<Real> out(rows, cols, Real(0));
  for (std::size_t h = 0; h < mats.size(); ++h) {
    if (mats[h].value().rows() != rows || mats[h].value().cols() != cols) {
      throw DimensionError("linear_combination: layer " + std::to_string(h) +
                           " shape " + mats[h].value().shape_str());
    }
    const Real w = weights.value().at(0, h);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out.storage()[i] += w * mats[h].value().storage()[i];
    }
  }
  std::vector<std::shared_ptr<Node<Real>>> parents{weights.node()};
  for (const auto& m : mats) parents.push_back(m.node());
  auto pw = weights.node();
  std::vector<std::shared_ptr<Node<Real>>> pm;
  for (const auto& m : mats) pm.push_back(m.node());
  return detail::make_op<Real>(std::move(out), std::move(parents),
                               [pw, pm](Node<Real>& n) {
    if (pw->requires_grad) {
      auto& gw = pw->ensure_grad();
      for (std::size_t h = 0; h < pm.size(); ++h) {
        Real s = 0;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          s += n.grad.storage()[i] * pm[h]->value.storage()[i];
        }
        gw.at(0, h) += s;
      }
    }
    for (std::size_t h = 0; h < pm.size(); ++h) {
      if (!pm[h]->requires_grad) continue;
      auto& gm = pm[h]->ensure_grad();
      const Real w = pw->value.at(0, h);
      for (std::size_t i = 0; i < gm.size(); ++i) gm.storage()[i] += w * n.grad.storage()[i];
    }
  });
}

/// out[t] = base[t] .* gamma + beta, broadcasting the 1xD gain/bias over
/// rows of a constant base matrix (the trainable-extractor transform).
template <typename Real>
Var<Real> row_affine(const Matrix<Real>& base, const Var<Real>& gamma, const Var<Real>& beta) {
  const std::size_t rows = base.rows(), cols = base.cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != cols ||
      beta.value().rows() != 1 || beta.value().cols() != cols) {
    throw DimensionError("row_affine: gain/bias must be 1x" + std::to_string(cols));
  }
  Matrix<Real> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = base.at(r, c) * gamma.value().at(0, c) + beta.value().at(0, c);
    }
  }
  auto pg = gamma.node(), pb = beta.node();
  return detail::make_op<Real>(std::move(out), {pg, pb}, [pg, pb, base](Node<Real>& n) {
    if (pg->requires_grad) {
      auto& gg = pg->ensure_grad();
      for (std::size_t r = 0; r < base.rows(); ++r) {
        for (std::size_t c = 0; c < base.cols(); ++c) gg.at(0, c) += n.grad.at(r, c) * base.at(r, c);
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t r = 0; r < base.rows(); ++r) {
        for (std::size_t c = 0; c < base.cols(); ++c) gb.at(0, c) += n.grad.at(r, c);
      }
    }
  });
}

/// Pads or truncates to exactly target_rows rows; padding rows are zero.
template <typename Real>
Var<Real> pad_rows(const Var<Real>& a, std::size_t target_rows) {
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  const std::size_t keep = std::min(rows, target_rows);
  Matrix<Real> out(target_rows, cols, Real(0));
  for (std::size_t r = 0; r < keep; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = a.value().at(r, c);
  }
  auto pa = a.node();
  return detail::make_op<Real>(std::move(out), {pa}, [pa, keep](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < keep; ++r) {
      for (std::size_t c = 0; c < n.grad.cols(); ++c) g.at(r, c) += n.grad.at(r, c);
    }
  });
}

/// Scalar probe: sum of elementwise product with a fixed weight matrix.
template <typename Real>
Var<Real> weighted_sum(const Var<Real>& a, const Matrix<Real>& w) {
  if (!a.value().same_shape(w)) {
    throw DimensionError("weighted_sum: shape mismatch");
  }
  Real s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += a.value().storage()[i] * w.storage()[i];
  auto pa = a.node();
  return detail::make_op<Real>(Matrix<Real>::scalar(s), {pa}, [pa, w](Node<Real>& n) {
    auto& g = pa->ensure_grad();
    const Real go = n.grad.at(0, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] += go * w.storage()[i];
  });
}

template <typename Real>
Var<Real> sum_scalars(const std::vector<Var<Real>>& terms) {
  if (terms.empty()) throw DimensionError("sum_scalars: no terms");
  Real total = 0;
  std::vector<std::shared_ptr<Node<Real>>> parents;
  for (const auto& t : terms) {
    if (t.value().size() != 1) throw DimensionError("sum_scalars: non-scalar term");
    total += t.value().at(0, 0);
    parents.push_back(t.node());
  }
  auto ps = parents;
  return detail::make_op<Real>(Matrix<Real>::scalar(total), std::move(parents),
                               [ps](Node<Real>& n) {
    for (const auto& p : ps) {
      if (p->requires_grad) p->ensure_grad().at(0, 0) += n.grad.at(0, 0);
    }
  });
}

}  // namespace xmodal
