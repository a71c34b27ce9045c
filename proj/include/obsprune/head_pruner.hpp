// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "obsprune/errors.hpp"
#include "obsprune/linalg.hpp"
#include "obsprune/obs_core.hpp"

namespace obsprune {

// Attention heads as contiguous, equal-width column blocks.
struct HeadLayout {
  Index n_head = 0;
  Index d_head = 0;

  Index columns() const noexcept { return n_head * d_head; }
  Index col_begin(Index head) const noexcept { return head * d_head; }

  void validate(Index cols, const char* what = "HeadLayout") const {
    if (n_head <= 0 || d_head <= 0 || columns() != cols) {
      throw InvalidArgument(std::string(what) + ": n_head*d_head = " + std::to_string(columns()) +
                            " does not match " + std::to_string(cols) + " columns");
    }
  }
};

enum class HeadErrorEstimator {
  grouped_cholesky,  // per-head block factors of H^-1
  raw_diagonal,      // diag(H^-1) only, no within-head interaction
};

enum class InverseRefresh {
  trailing,  // L[d:, d:] * L[d:, d:]^T from the reordered factorization
  reinvert,  // invert H restricted to surviving columns
};

// Estimated error of removing each head, without compensating W.
inline Vector head_errors(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h_inv, const HeadLayout& layout,
                          HeadErrorEstimator estimator = HeadErrorEstimator::grouped_cholesky) {
  layout.validate(w.cols(), "head_errors");
  if (h_inv.dim() != w.cols()) throw InvalidArgument("head_errors: H^-1 dimension != W columns");
  Vector denom;
  // Factors come from H^-1 / s; the squared diagonal of the true factor is s times theirs.
  double scale = 1.0;
  if (estimator == HeadErrorEstimator::grouped_cholesky) {
    scale = diagonal_scale(h_inv.matrix());
    denom = grouped_cholesky(SpdMatrix(Matrix(h_inv.matrix() / scale)), layout.d_head).stacked_diagonal().array().square();
  } else {
    denom = h_inv.matrix().diagonal();
    if (!(denom.minCoeff() > 0.0)) throw ZeroPivotError("head_errors: non-positive H^-1 diagonal");
  }
  Vector out = Vector::Zero(layout.n_head);
  for (Index h = 0; h < layout.n_head; ++h)
    for (Index c = layout.col_begin(h); c < layout.col_begin(h) + layout.d_head; ++c)
      out(h) += w.col(c).squaredNorm() / denom(c);
  return out / scale;
}

struct ReorderedProblem {
  Matrix w;
  SpdMatrix h_inv;
  IndexList perm;  // new position j holds original column perm[j]
};

// Moves the target head's columns to the front; the rest keep their order.
inline ReorderedProblem reorder_for_head(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h_inv,
                                         const HeadLayout& layout, Index target_head) {
  layout.validate(w.cols(), "reorder_for_head");
  if (h_inv.dim() != w.cols()) throw InvalidArgument("reorder_for_head: H^-1 dimension != W columns");
  if (target_head < 0 || target_head >= layout.n_head) throw InvalidArgument("reorder_for_head: head out of range");
  IndexList perm;
  perm.reserve(static_cast<std::size_t>(w.cols()));
  const Index b = layout.col_begin(target_head);
  for (Index c = b; c < b + layout.d_head; ++c) perm.push_back(c);
  for (Index c = 0; c < w.cols(); ++c)
    if (c < b || c >= b + layout.d_head) perm.push_back(c);

  Matrix pw(w.rows(), w.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) pw.col(static_cast<Index>(j)) = w.col(perm[j]);
  return {std::move(pw), permute_symmetric(h_inv, perm), std::move(perm)};
}

struct HeadPruneStep {
  Matrix w;        // original column order, target head columns zero
  IndexList perm;  // reorder applied before pruning
  Matrix lower;    // cholesky_lower of the reordered H^-1 divided by lower_scale
  double lower_scale = 1.0;
  double error = 0.0;
};

// Prunes one head column by column: local updates inside the head, then one
// global update of the remaining columns, then restores the column order.
inline HeadPruneStep prune_one_head(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h_inv,
                                    const HeadLayout& layout, Index target_head) {
  ReorderedProblem r = reorder_for_head(w, h_inv, layout, target_head);
  const Index d = layout.d_head;
  const Index n = r.w.cols();
  // The compensation only involves ratios of factor entries, so the factor
  // of the normalized matrix can be used as is.
  const double scale = diagonal_scale(r.h_inv.matrix());
  Matrix lower = cholesky_lower(SpdMatrix(Matrix(r.h_inv.matrix() / scale)));
  // Leading d rows of the upper factor U = L^T.
  const Matrix u = lower.leftCols(d).transpose();

  Matrix& wr = r.w;
  Matrix e(wr.rows(), d);
  for (Index i = 0; i < d; ++i) {
    e.col(i) = wr.col(i) / u(i, i);
    for (Index j = i + 1; j < d; ++j) wr.col(j) -= u(i, j) * e.col(i);
    wr.col(i).setZero();
  }
  if (n > d) wr.rightCols(n - d) -= e * u.rightCols(n - d);

  HeadPruneStep out;
  out.w.resize(wr.rows(), n);
  for (Index j = 0; j < n; ++j) out.w.col(r.perm[static_cast<std::size_t>(j)]) = wr.col(j);
  out.perm = std::move(r.perm);
  out.lower = std::move(lower);
  out.lower_scale = scale;
  out.error = e.squaredNorm() / scale;
  return out;
}

struct HeadPruneOptions {
  InverseRefresh refresh = InverseRefresh::trailing;
  HeadErrorEstimator estimator = HeadErrorEstimator::grouped_cholesky;
};

struct HeadPruneResult {
  Matrix pruned_w;                          // kept columns only
  IndexList kept_heads;                     // ascending original head indices
  IndexList kept_columns;                   // ascending original column indices
  IndexList pruned_heads;                   // in removal order
  std::vector<Vector> head_errors_per_round;  // indexed by original head; NaN once pruned
  std::vector<double> round_errors;         // sum of column errors while pruning each head
  Index total_rounds = 0;
};

// Removes n_prune heads one round at a time.
inline HeadPruneResult prune_heads(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h, const HeadLayout& layout,
                                   Index n_prune, const HeadPruneOptions& options = {}) {
  layout.validate(w.cols(), "prune_heads");
  if (h.dim() != w.cols()) throw InvalidArgument("prune_heads: H dimension != W columns");
  if (n_prune < 0 || n_prune >= layout.n_head) {
    throw InvalidArgument("prune_heads: n_prune must be in [0, n_head)");
  }
  HeadPruneResult res;
  for (Index hd = 0; hd < layout.n_head; ++hd) res.kept_heads.push_back(hd);
  Matrix cur = w;
  if (n_prune == 0) {
    res.pruned_w = std::move(cur);
    for (Index c = 0; c < w.cols(); ++c) res.kept_columns.push_back(c);
    return res;
  }

  const Index d = layout.d_head;
  SpdMatrix h_inv = invert_spd(h);
  for (Index round = 0; round < n_prune; ++round) {
    const HeadLayout cur_layout{static_cast<Index>(res.kept_heads.size()), d};
    const Vector errs = head_errors(cur, h_inv, cur_layout, options.estimator);

    Vector full = Vector::Constant(layout.n_head, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < res.kept_heads.size(); ++k) full(res.kept_heads[k]) = errs(static_cast<Index>(k));
    res.head_errors_per_round.push_back(std::move(full));

    const Index target = argmin_lowest(errs);
    HeadPruneStep step = prune_one_head(cur, h_inv, cur_layout, target);
    res.round_errors.push_back(step.error);
    res.pruned_heads.push_back(res.kept_heads[static_cast<std::size_t>(target)]);
    res.kept_heads.erase(res.kept_heads.begin() + target);

    const Index n = cur.cols();
    Matrix next(cur.rows(), n - d);
    next.leftCols(target * d) = step.w.leftCols(target * d);
    next.rightCols(n - (target + 1) * d) = step.w.rightCols(n - (target + 1) * d);
    cur = std::move(next);

    if (options.refresh == InverseRefresh::trailing) {
      h_inv = SpdMatrix(Matrix(trailing_inverse(step.lower, d).matrix() * step.lower_scale));
    } else {
      IndexList cols;
      for (Index hd : res.kept_heads)
        for (Index c = hd * d; c < (hd + 1) * d; ++c) cols.push_back(c);
      h_inv = invert_spd(SpdMatrix(principal_submatrix(h.matrix(), cols)));
    }
    ++res.total_rounds;
  }
  res.pruned_w = std::move(cur);
  for (Index hd : res.kept_heads)
    for (Index c = hd * d; c < (hd + 1) * d; ++c) res.kept_columns.push_back(c);
  return res;
}

}  // namespace obsprune
