// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "obsprune/errors.hpp"
#include "obsprune/linalg.hpp"

namespace obsprune {

inline constexpr double kDefaultDamping = 0.01;

// Running sum of 2*X*X^T over calibration batches. Columns of each batch are
// tokens; rows are the layer input features.
class HessianAccumulator {
 public:
  explicit HessianAccumulator(Index dim) : sum_(Matrix::Zero(dim, dim)) {}

  Index dim() const noexcept { return sum_.rows(); }
  std::uint64_t n_samples() const noexcept { return n_samples_; }
  const Matrix& sum() const noexcept { return sum_; }

  // Tokens are added one rank-1 term at a time, in column order, so that
  // accumulating two batches equals accumulating their concatenation.
  HessianAccumulator& accumulate(const Eigen::Ref<const Matrix>& batch) {
    if (batch.rows() != dim()) {
      throw InvalidArgument("accumulate: batch has " + std::to_string(batch.rows()) +
                            " features, accumulator expects " + std::to_string(dim()));
    }
    if (!batch.allFinite()) throw InvalidArgument("accumulate: non-finite activations");
    const Index d = dim();
    for (Index t = 0; t < batch.cols(); ++t) {
      const auto x = batch.col(t);
      for (Index j = 0; j < d; ++j) {
        const double xj = 2.0 * x(j);
        if (xj == 0.0) continue;
        for (Index i = j; i < d; ++i) sum_(i, j) += x(i) * xj;
      }
    }
    for (Index j = 0; j < d; ++j)
      for (Index i = j + 1; i < d; ++i) sum_(j, i) = sum_(i, j);
    n_samples_ += static_cast<std::uint64_t>(batch.cols());
    return *this;
  }

  // Adds another accumulator's sum. Callers merge in a fixed order.
  HessianAccumulator& merge(const HessianAccumulator& other) {
    if (other.dim() != dim()) throw InvalidArgument("merge: dimension mismatch");
    sum_ += other.sum_;
    n_samples_ += other.n_samples_;
    return *this;
  }

  // H = sum + lambda*I, lambda = damping_frac * mean(diag(sum)). When the
  // accumulated diagonal is all zero (dead inputs) lambda falls back to
  // damping_frac itself.
  SpdMatrix finalize(double damping_frac = kDefaultDamping) const {
    if (n_samples_ == 0) throw InvalidArgument("finalize: no samples accumulated");
    if (!(damping_frac >= 0.0) || !std::isfinite(damping_frac)) {
      throw InvalidArgument("finalize: damping fraction must be finite and >= 0");
    }
    const double mean_diag = dim() == 0 ? 0.0 : sum_.diagonal().mean();
    double lambda = damping_frac * mean_diag;
    if (mean_diag == 0.0) lambda = damping_frac;
    Matrix h = sum_;
    h.diagonal().array() += lambda;
    SpdMatrix out(h);
    try {
      (void)cholesky_lower(out);
    } catch (const NotSpdError&) {
      throw NumericalError("singular Hessian");
    }
    return out;
  }

 private:
  Matrix sum_;
  std::uint64_t n_samples_ = 0;
};

}  // namespace obsprune
