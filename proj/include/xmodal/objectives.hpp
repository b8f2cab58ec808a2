// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/autograd.hpp"
#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/matrix.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

/// B aligned rows in the shared embedding space. Row i of two aligned
/// batches refers to the same underlying example.
template <typename Real>
struct EmbeddingBatch {
  Matrix<Real> rows;
  std::string role;  // "image", "speech:<lang>", "text"
};

struct LossValue {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;
};

/// Pairwise similarity as a graph node. Cosine mode normalizes rows first,
/// so the score is scale-free; dot mode is the literal inner product.
template <typename Real>
Var<Real> similarity_graph(const Var<Real>& x, const Var<Real>& y, SimilarityKind kind) {
  if (x.value().cols() != y.value().cols() || x.value().rows() != y.value().rows()) {
    throw DimensionError("similarity: batch shapes " + x.value().shape_str() + " vs " +
                         y.value().shape_str());
  }
  if (x.value().rows() < 1) throw DimensionError("similarity: empty batch");
  if (kind == SimilarityKind::cosine) {
    return matmul_nt(row_l2_normalize(x), row_l2_normalize(y));
  }
  return matmul_nt(x, y);
}

/// Masked margin softmax on a BxB similarity node: the aligned diagonal
/// entry, minus the margin, competes against the row's off-diagonal
/// entries. Log-sum-exp is stabilized by max subtraction.
///
///   loss = -(1/B) * sum_i log( e^{s_ii - d} / (e^{s_ii - d} + sum_{j!=i} e^{s_ij}) )
template <typename Real>
Var<Real> mms_from_similarity(const Var<Real>& sim, Real delta) {
  const std::size_t B = sim.value().rows();
  if (sim.value().cols() != B) {
    throw DimensionError("mms: similarity matrix must be square, got " +
                         sim.value().shape_str());
  }
  Matrix<Real> probs(B, B);
  Real loss = 0;
  for (std::size_t i = 0; i < B; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < B; ++j) {
      const Real logit = sim.value().at(i, j) - (i == j ? delta : Real(0));
      mx = std::max(mx, logit);
    }
    Real den = 0;
    for (std::size_t j = 0; j < B; ++j) {
      const Real logit = sim.value().at(i, j) - (i == j ? delta : Real(0));
      probs.at(i, j) = std::exp(logit - mx);
      den += probs.at(i, j);
    }
    for (std::size_t j = 0; j < B; ++j) probs.at(i, j) /= den;
    const Real diag_logit = sim.value().at(i, i) - delta;
    loss -= (diag_logit - mx) - std::log(den);
  }
  loss /= static_cast<Real>(B);

  auto ps = sim.node();
  return detail::make_op<Real>(Matrix<Real>::scalar(loss), {ps}, [ps, probs, B](Node<Real>& n) {
    auto& g = ps->ensure_grad();
    const Real go = n.grad.at(0, 0) / static_cast<Real>(B);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < B; ++j) {
        g.at(i, j) += go * (probs.at(i, j) - (i == j ? Real(1) : Real(0)));
      }
    }
  });
}

template <typename Real>
Var<Real> mms_loss_graph(const Var<Real>& x, const Var<Real>& y, Real delta,
                         SimilarityKind kind) {
  return mms_from_similarity(similarity_graph(x, y, kind), delta);
}

template <typename Real>
struct LossTerms {
  Var<Real> total;
  std::vector<std::pair<std::string, Var<Real>>> components;

  LossValue values() const {
    LossValue lv;
    lv.total = static_cast<double>(total.scalar());
    for (const auto& [name, var] : components) {
      lv.components.emplace_back(name, static_cast<double>(var.scalar()));
    }
    return lv;
  }
};

/// L(v^S, v^I) = MMS(v^S, v^I) + MMS(v^I, v^S).
template <typename Real>
LossTerms<Real> bidirectional_loss_graph(const Var<Real>& v_s, const Var<Real>& v_i,
                                         Real delta, SimilarityKind kind) {
  LossTerms<Real> terms;
  auto s2i = mms_loss_graph(v_s, v_i, delta, kind);
  auto i2s = mms_loss_graph(v_i, v_s, delta, kind);
  terms.components.emplace_back("s2i", s2i);
  terms.components.emplace_back("i2s", i2s);
  terms.total = sum_scalars(std::vector<Var<Real>>{s2i, i2s});
  return terms;
}

/// Six-term cross-lingual loss over an image batch and the same images'
/// captions in two distinct languages C and D:
///
///   L = MMS(I,C) + MMS(C,I) + MMS(I,D) + MMS(D,I) + MMS(C,D) + MMS(D,C)
template <typename Real>
LossTerms<Real> cross_lingual_loss_graph(const Var<Real>& v_img, const Var<Real>& v_c,
                                         const Var<Real>& v_d, Real delta,
                                         SimilarityKind kind,
                                         const LanguageId& lang_c, const LanguageId& lang_d) {
  if (lang_c == lang_d) {
    throw ValidationError("cross_lingual_loss: languages C and D must differ, both are '" +
                          lang_c.code + "'");
  }
  LossTerms<Real> terms;
  auto push = [&](const std::string& name, Var<Real> v) {
    terms.components.emplace_back(name, std::move(v));
  };
  push("I->C", mms_loss_graph(v_img, v_c, delta, kind));
  push("C->I", mms_loss_graph(v_c, v_img, delta, kind));
  push("I->D", mms_loss_graph(v_img, v_d, delta, kind));
  push("D->I", mms_loss_graph(v_d, v_img, delta, kind));
  push("C->D", mms_loss_graph(v_c, v_d, delta, kind));
  push("D->C", mms_loss_graph(v_d, v_c, delta, kind));
  std::vector<Var<Real>> vars;
  for (auto& [_, v] : terms.components) vars.push_back(v);
  terms.total = sum_scalars(vars);
  return terms;
}

// ---------------------------------------------------------------------------
// Value-level API
// ---------------------------------------------------------------------------

template <typename Real>
Matrix<Real> similarity_matrix(const EmbeddingBatch<Real>& x, const EmbeddingBatch<Real>& y,
                               SimilarityKind kind = SimilarityKind::cosine) {
  return similarity_graph(Var<Real>::constant(x.rows), Var<Real>::constant(y.rows), kind)
      .value();
}

template <typename Real>
Real mms_loss(const EmbeddingBatch<Real>& x, const EmbeddingBatch<Real>& y, Real delta,
              SimilarityKind kind = SimilarityKind::cosine) {
  return mms_loss_graph(Var<Real>::constant(x.rows), Var<Real>::constant(y.rows), delta, kind)
      .scalar();
}

template <typename Real>
LossValue bidirectional_loss(const EmbeddingBatch<Real>& v_s, const EmbeddingBatch<Real>& v_i,
                             Real delta, SimilarityKind kind = SimilarityKind::cosine) {
  return bidirectional_loss_graph(Var<Real>::constant(v_s.rows), Var<Real>::constant(v_i.rows),
                                  delta, kind)
      .values();
}

template <typename Real>
LossValue cross_lingual_loss(const EmbeddingBatch<Real>& v_img, const EmbeddingBatch<Real>& v_c,
                             const EmbeddingBatch<Real>& v_d, Real delta,
                             const LanguageId& lang_c, const LanguageId& lang_d,
                             SimilarityKind kind = SimilarityKind::cosine) {
  return cross_lingual_loss_graph(Var<Real>::constant(v_img.rows), Var<Real>::constant(v_c.rows),
                                  Var<Real>::constant(v_d.rows), delta, kind, lang_c, lang_d)
      .values();
}

/// Uniform draw over unordered pairs of distinct languages, then a uniform
/// coin for the order.
inline std::pair<LanguageId, LanguageId> sample_language_pair(
    const std::vector<LanguageId>& languages, SeededRng& rng) {
  const std::size_t n = languages.size();
  if (n < 2) {
    throw ValidationError("sample_language_pair: need at least 2 languages, got " +
                          std::to_string(n));
  }
  const std::uint64_t n_pairs = n * (n - 1) / 2;
  std::uint64_t p = rng.uniform_index(n_pairs);
  std::size_t i = 0;
  while (p >= n - 1 - i) {
    p -= n - 1 - i;
    ++i;
  }
  const std::size_t j = i + 1 + static_cast<std::size_t>(p);
  if (rng.uniform_index(2) == 0) return {languages[i], languages[j]};
  return {languages[j], languages[i]};
}

}  // namespace xmodal
