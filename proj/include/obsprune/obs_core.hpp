// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "obsprune/errors.hpp"
#include "obsprune/linalg.hpp"

namespace obsprune {

// One column removal: original column index and its OBS error.
struct StepError {
  Index column = 0;
  double error = 0.0;
};

// Column-granular OBS state. `w` keeps the original column count; pruned
// columns are zero and absent from `alive`. `h_inv` is indexed by position in
// `alive`.
struct ColumnPruneState {
  Matrix w;
  SpdMatrix h_inv;
  IndexList alive;
  std::vector<StepError> step_errors;

  static ColumnPruneState start(Matrix weights, const SpdMatrix& h) {
    if (weights.cols() != h.dim()) throw InvalidArgument("ColumnPruneState: W columns != Hessian dimension");
    ColumnPruneState s;
    s.h_inv = invert_spd(h);
    s.alive.resize(static_cast<std::size_t>(weights.cols()));
    for (Index i = 0; i < weights.cols(); ++i) s.alive[static_cast<std::size_t>(i)] = i;
    s.w = std::move(weights);
    return s;
  }

  // Weights of the alive columns, in alive order.
  Matrix active_weights() const {
    Matrix out(w.rows(), static_cast<Index>(alive.size()));
    for (std::size_t q = 0; q < alive.size(); ++q) out.col(static_cast<Index>(q)) = w.col(alive[q]);
    return out;
  }

  // Position of an original column in `alive`, or -1.
  Index position_of(Index column) const {
    for (std::size_t q = 0; q < alive.size(); ++q)
      if (alive[q] == column) return static_cast<Index>(q);
    return -1;
  }
};

// err[p] = sum_rows W[:,p]^2 / H^-1[p,p].
inline Vector column_errors(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h_inv) {
  if (w.cols() != h_inv.dim()) throw InvalidArgument("column_errors: W columns != H^-1 dimension");
  Vector err(w.cols());
  for (Index p = 0; p < w.cols(); ++p) {
    const double d = h_inv(p, p);
    if (!(d > 0.0)) throw ZeroPivotError("H^-1[" + std::to_string(p) + "," + std::to_string(p) + "]");
    err(p) = w.col(p).squaredNorm() / d;
  }
  return err;
}

// Lowest value wins; ties go to the lowest index.
inline Index argmin_lowest(const Eigen::Ref<const Vector>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) < v(best)) best = i;
  return best;
}

// Removes the alive column at `position`, compensating every other alive
// column with Delta = -(W[:,p] / H^-1[p,p]) * H^-1[p,:].
inline void prune_column_inplace(ColumnPruneState& s, Index position) {
  const Index n = static_cast<Index>(s.alive.size());
  if (position < 0 || position >= n) throw InvalidArgument("prune_column: position outside alive region");
  const Matrix& hi = s.h_inv.matrix();
  const double pivot = hi(position, position);
  if (!(pivot > 0.0)) throw ZeroPivotError("prune_column at position " + std::to_string(position));
  const Index col = s.alive[static_cast<std::size_t>(position)];
  const Vector wp = s.w.col(col);
  const double err = wp.squaredNorm() / pivot;
  for (Index q = 0; q < n; ++q) {
    if (q == position) continue;
    const double f = hi(position, q) / pivot;
    if (f != 0.0) s.w.col(s.alive[static_cast<std::size_t>(q)]) -= f * wp;
  }
  s.w.col(col).setZero();
  s.h_inv = remove_update(s.h_inv, position);
  s.alive.erase(s.alive.begin() + position);
  s.step_errors.push_back({col, err});
}

inline ColumnPruneState prune_column(ColumnPruneState s, Index position) {
  prune_column_inplace(s, position);
  return s;
}

// Closed-form optimal weights for a fixed set of kept columns:
// W_hat = W * H[:, kept] * H[kept, kept]^-1 (rows x |kept|).
inline Matrix least_squares_oracle(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h, const IndexList& kept) {
  if (w.cols() != h.dim()) throw InvalidArgument("least_squares_oracle: W columns != H dimension");
  const Index k = static_cast<Index>(kept.size());
  if (k == 0) return Matrix(w.rows(), 0);
  bool all_in_order = k == w.cols();
  for (Index j = 0; all_in_order && j < k; ++j) all_in_order = kept[static_cast<std::size_t>(j)] == j;
  if (all_in_order) return w;
  Matrix h_cols(h.dim(), k);
  for (Index j = 0; j < k; ++j) h_cols.col(j) = h.matrix().col(kept[static_cast<std::size_t>(j)]);
  const Matrix hkk = principal_submatrix(h.matrix(), kept);
  const Eigen::LDLT<Matrix> ldlt(hkk);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 0.0) {
    throw NumericalError("least_squares_oracle: singular kept submatrix");
  }
  const Matrix rhs = (w * h_cols).transpose();
  return ldlt.solve(rhs).transpose();
}

// tr(D H D^T) with D = W - W_hat embedded at the kept columns (zero elsewhere).
// With H = 2XX^T this is twice the layer's squared output error.
inline double masked_residual(const Eigen::Ref<const Matrix>& w, const Eigen::Ref<const Matrix>& w_hat_kept,
                              const SpdMatrix& h, const IndexList& kept) {
  Matrix d = w;
  for (std::size_t j = 0; j < kept.size(); ++j) d.col(kept[j]) -= w_hat_kept.col(static_cast<Index>(j));
  return (d * h.matrix()).cwiseProduct(d).sum();
}

struct SubsetSearchResult {
  IndexList removed;  // original column indices, ascending
  double error = 0.0;
};

inline constexpr double kMaxEnumeratedSubsets = 1e5;

// Exhaustive search over removal sets made of `k` groups of `group_size`
// contiguous columns (group_size 1 gives plain column subsets). Ties keep the
// lexicographically first set.
inline SubsetSearchResult brute_force_best_groups(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h, Index k,
                                                  Index group_size) {
  if (group_size <= 0 || w.cols() % group_size != 0) throw InvalidArgument("brute force: bad group size");
  const Index groups = w.cols() / group_size;
  if (k < 0 || k > groups) throw InvalidArgument("brute force: k out of range");
  double count = 1.0;
  for (Index i = 0; i < k; ++i) count = count * static_cast<double>(groups - i) / static_cast<double>(i + 1);
  if (count > kMaxEnumeratedSubsets) {
    throw InvalidArgument("brute force: " + std::to_string(static_cast<long long>(count)) +
                          " subsets exceed enumeration guard");
  }

  SubsetSearchResult best;
  best.error = std::numeric_limits<double>::infinity();
  IndexList pick(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) pick[static_cast<std::size_t>(i)] = i;
  while (true) {
    std::vector<char> removed(static_cast<std::size_t>(w.cols()), 0);
    IndexList removed_cols;
    for (Index g : pick)
      for (Index c = g * group_size; c < (g + 1) * group_size; ++c) {
        removed[static_cast<std::size_t>(c)] = 1;
        removed_cols.push_back(c);
      }
    IndexList kept;
    for (Index c = 0; c < w.cols(); ++c)
      if (!removed[static_cast<std::size_t>(c)]) kept.push_back(c);
    const double err = masked_residual(w, least_squares_oracle(w, h, kept), h, kept);
    if (err < best.error) best = {removed_cols, err};

    // next k-combination in lexicographic order
    Index i = k - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == groups - k + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < k; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  return best;
}

inline SubsetSearchResult brute_force_best_columns(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h, Index k) {
  return brute_force_best_groups(w, h, k, 1);
}

}  // namespace obsprune
