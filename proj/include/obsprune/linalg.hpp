// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "obsprune/config.hpp"
#include "obsprune/errors.hpp"

namespace obsprune {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

// Maximum absolute row sum.
inline double inf_norm(const Eigen::Ref<const Matrix>& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

// Symmetric positive-definite matrix. Construction checks squareness,
// finiteness and symmetry (relative to the largest entry), then stores
// (M + M^T) / 2. Positive definiteness is established by the operations
// that need it (they raise NotSpdError).
class SpdMatrix {
 public:
  SpdMatrix() = default;

  explicit SpdMatrix(const Eigen::Ref<const Matrix>& m) {
    if (m.rows() != m.cols()) {
      throw InvalidArgument("SpdMatrix: matrix is " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected square");
    }
    if (!m.allFinite()) throw NotSpdError("non-finite entries");
    const double scale = m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
    const double asym = m.size() == 0 ? 0.0 : (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > Tolerances::symmetry * std::max(scale, 1e-300)) {
      throw NotSpdError("asymmetry " + std::to_string(asym) + " exceeds tolerance");
    }
    data_ = 0.5 * (m + m.transpose());
  }

  static SpdMatrix identity(Index n) { return SpdMatrix(Matrix::Identity(n, n)); }

  static SpdMatrix diagonal(const Eigen::Ref<const Vector>& d) {
    return SpdMatrix(Matrix(d.asDiagonal()));
  }

  const Matrix& matrix() const noexcept { return data_; }
  Index dim() const noexcept { return data_.rows(); }
  double operator()(Index i, Index j) const { return data_(i, j); }

 private:
  Matrix data_;
};

namespace detail {

// Cholesky-Banachiewicz on the lower triangle of `a`.
inline Matrix cholesky_lower(const Eigen::Ref<const Matrix>& a) {
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NotSpdError("non-positive pivot at index " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

// Inverse of a lower-triangular matrix with positive diagonal.
inline Matrix invert_lower(const Eigen::Ref<const Matrix>& l) {
  const Index n = l.rows();
  Matrix inv = Matrix::Zero(n, n);
  for (Index c = 0; c < n; ++c) {
    inv(c, c) = 1.0 / l(c, c);
    for (Index i = c + 1; i < n; ++i) {
      double s = 0.0;
      for (Index k = c; k < i; ++k) s += l(i, k) * inv(k, c);
      inv(i, c) = -s / l(i, i);
    }
  }
  return inv;
}

}  // namespace detail

inline bool is_permutation(const IndexList& perm, Index n) {
  if (static_cast<Index>(perm.size()) != n) return false;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (Index p : perm) {
    if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) return false;
    seen[static_cast<std::size_t>(p)] = 1;
  }
  return true;
}

inline IndexList inverse_permutation(const IndexList& perm) {
  IndexList inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<Index>(i);
  return inv;
}

// Lower-triangular L with L*L^T == m and diag(L) > 0.
inline Matrix cholesky_lower(const SpdMatrix& m) { return detail::cholesky_lower(m.matrix()); }

// Mean of the diagonal, used to normalize before factorizing. Doubling m
// doubles it exactly, so m and 2m normalize to bit-identical matrices.
inline double diagonal_scale(const Eigen::Ref<const Matrix>& m) {
  const double s = m.diagonal().sum() / static_cast<double>(m.rows());
  return s > 0.0 && std::isfinite(s) ? s : 1.0;
}

// Factorizes m / s and rescales, which keeps the result exactly
// proportional under power-of-two rescaling of m.
inline SpdMatrix invert_spd(const SpdMatrix& m) {
  if (m.dim() == 0) return m;
  const double s = diagonal_scale(m.matrix());
  const Matrix linv = detail::invert_lower(detail::cholesky_lower(m.matrix() / s));
  return SpdMatrix(Matrix((linv.transpose() * linv) / s));
}

// result(i, j) == m(perm[i], perm[j]).
inline SpdMatrix permute_symmetric(const SpdMatrix& m, const IndexList& perm) {
  const Index n = m.dim();
  if (!is_permutation(perm, n)) throw InvalidArgument("permute_symmetric: not a permutation of 0..n");
  Matrix out(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) out(i, j) = m(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  return SpdMatrix(out);
}

// m[idx, idx] in the order given by idx.
inline Matrix principal_submatrix(const Eigen::Ref<const Matrix>& m, const IndexList& idx) {
  const Index k = static_cast<Index>(idx.size());
  Matrix out(k, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < k; ++i) out(i, j) = m(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  return out;
}

inline Matrix delete_row_col(const Eigen::Ref<const Matrix>& m, Index p) {
  IndexList keep;
  for (Index i = 0; i < m.rows(); ++i)
    if (i != p) keep.push_back(i);
  return principal_submatrix(m, keep);
}

// Independent Cholesky factors of the head-sized diagonal blocks of H^-1.
struct GroupedCholesky {
  std::vector<Matrix> factors;
  Index group_size = 0;

  // Diagonal of all factors laid out along the original columns.
  Vector stacked_diagonal() const {
    Vector d(static_cast<Index>(factors.size()) * group_size);
    for (std::size_t k = 0; k < factors.size(); ++k)
      d.segment(static_cast<Index>(k) * group_size, group_size) = factors[k].diagonal();
    return d;
  }
};

inline GroupedCholesky grouped_cholesky(const SpdMatrix& h_inv, Index group_size) {
  const Index n = h_inv.dim();
  if (group_size <= 0 || n % group_size != 0) {
    throw InvalidArgument("grouped_cholesky: dimension " + std::to_string(n) +
                          " not divisible by group size " + std::to_string(group_size));
  }
  GroupedCholesky out;
  out.group_size = group_size;
  const Index groups = n / group_size;
  out.factors.reserve(static_cast<std::size_t>(groups));
  for (Index k = 0; k < groups; ++k) {
    const Index o = k * group_size;
    try {
      out.factors.push_back(detail::cholesky_lower(h_inv.matrix().block(o, o, group_size, group_size)));
    } catch (const NotSpdError&) {
      throw NotSpdError("diagonal block " + std::to_string(k));
    }
  }
  return out;
}

// Inverse of H with row/column p deleted, computed from H^-1 alone:
// (H^-1 - H^-1[:,p] H^-1[p,:] / H^-1[p,p]) with row/column p removed.
inline SpdMatrix remove_update(const SpdMatrix& h_inv, Index p) {
  const Index n = h_inv.dim();
  if (p < 0 || p >= n) throw InvalidArgument("remove_update: index out of range");
  const Matrix& m = h_inv.matrix();
  const double pivot = m(p, p);
  if (!(pivot > 0.0)) throw ZeroPivotError("H^-1[" + std::to_string(p) + "," + std::to_string(p) + "]");
  Matrix out(n - 1, n - 1);
  for (Index j = 0, oj = 0; j < n; ++j) {
    if (j == p) continue;
    const double f = m(p, j) / pivot;
    for (Index i = 0, oi = 0; i < n; ++i) {
      if (i == p) continue;
      out(oi++, oj) = m(i, j) - m(i, p) * f;
    }
    ++oj;
  }
  return SpdMatrix(out);
}

// Given L = cholesky_lower(H^-1), the inverse Hessian over columns d.. after
// removing columns 0..d-1 equals L[d:, d:] * L[d:, d:]^T.
inline SpdMatrix trailing_inverse(const Eigen::Ref<const Matrix>& lower, Index d) {
  const Index n = lower.rows();
  if (d < 0 || d > n) throw InvalidArgument("trailing_inverse: leading size out of range");
  const Matrix t = lower.bottomRightCorner(n - d, n - d);
  return SpdMatrix(Matrix(t * t.transpose()));
}

}  // namespace obsprune
