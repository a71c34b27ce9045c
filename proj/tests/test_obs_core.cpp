// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "obsprune/obs_core.hpp"
#include "support/oracles.hpp"

using namespace obsprune;
using namespace obsprune::testing;

TEST(ColumnErrors, IdentityHessianGivesSquaredNorms) {
  Matrix w(2, 2);
  w << 1, 2, 3, 4;
  const Vector e = column_errors(w, SpdMatrix::identity(2));
  EXPECT_EQ(e(0), 10.0);
  EXPECT_EQ(e(1), 20.0);
}

TEST(ColumnErrors, ZeroColumnAndFormula) {
  Rng rng(1);
  Matrix w = rng.normal_matrix(4, 4);
  w.col(2).setZero();
  const SpdMatrix h_inv = invert_spd(SpdMatrix(random_spd(rng, 4)));
  const Vector e = column_errors(w, h_inv);
  EXPECT_EQ(e(2), 0.0);
  for (Index p = 0; p < 4; ++p) {
    double s = 0.0;
    for (Index r = 0; r < 4; ++r) s += w(r, p) * w(r, p);
    EXPECT_NEAR(e(p), s / h_inv(p, p), 1e-12 * (1.0 + e(p)));
    EXPECT_GE(e(p), 0.0);
  }
  Matrix bad = Matrix::Identity(4, 4);
  bad(1, 1) = 0.0;
  EXPECT_THROW(column_errors(w, SpdMatrix(bad)), ZeroPivotError);
  EXPECT_THROW(column_errors(Matrix(4, 3), h_inv), InvalidArgument);
}

TEST(PruneColumn, IdentityHessianTouchesOnlyThatColumn) {
  Rng rng(2);
  const Matrix w = rng.normal_matrix(3, 5);
  ColumnPruneState s = ColumnPruneState::start(w, SpdMatrix::identity(5));
  s = prune_column(s, 2);
  for (Index c = 0; c < 5; ++c) {
    if (c == 2) {
      EXPECT_EQ(s.w.col(c), Vector::Zero(3));
    } else {
      EXPECT_EQ(s.w.col(c), w.col(c));
    }
  }
  EXPECT_EQ(s.alive, (IndexList{0, 1, 3, 4}));
  ASSERT_EQ(s.step_errors.size(), 1u);
  EXPECT_EQ(s.step_errors[0].column, 2);
  EXPECT_NEAR(s.step_errors[0].error, w.col(2).squaredNorm(), 1e-14);
}

TEST(PruneColumn, ZeroColumnNoCompensation) {
  Rng rng(3);
  Matrix w = rng.normal_matrix(3, 4);
  w.col(1).setZero();
  ColumnPruneState s = ColumnPruneState::start(w, SpdMatrix(random_spd(rng, 4)));
  prune_column_inplace(s, 1);
  EXPECT_EQ(s.w, w);
  EXPECT_EQ(s.step_errors[0].error, 0.0);
}

TEST(PruneColumn, MatchesClosedFormCompensation) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const LayerProblem prob = random_layer_problem(rng, 4, 3, 20);
    for (Index p = 0; p < 3; ++p) {
      ColumnPruneState s = ColumnPruneState::start(prob.w, prob.h);
      prune_column_inplace(s, p);
      const Matrix oracle = ls_from_activations(prob.w, prob.x, s.alive);
      EXPECT_LT(rel_frobenius(s.active_weights(), oracle), 1e-8);
      EXPECT_EQ(s.w.col(p), Vector::Zero(4));
    }
  }
}

TEST(PruneColumn, Errors) {
  ColumnPruneState s = ColumnPruneState::start(Matrix::Ones(2, 2), SpdMatrix::identity(2));
  EXPECT_THROW(prune_column(s, 2), InvalidArgument);
  EXPECT_THROW(prune_column(s, -1), InvalidArgument);
  EXPECT_THROW(ColumnPruneState::start(Matrix::Ones(2, 3), SpdMatrix::identity(2)), InvalidArgument);
}

TEST(LeastSquaresOracle, TrivialMasks) {
  Rng rng(5);
  const LayerProblem prob = random_layer_problem(rng, 3, 4, 30);
  EXPECT_EQ(least_squares_oracle(prob.w, prob.h, {0, 1, 2, 3}), prob.w);
  const IndexList kept{0, 2};
  const Matrix restricted = least_squares_oracle(prob.w, SpdMatrix::identity(4), kept);
  EXPECT_EQ(restricted.col(0), prob.w.col(0));
  EXPECT_EQ(restricted.col(1), prob.w.col(2));
  EXPECT_EQ(least_squares_oracle(prob.w, prob.h, {}).cols(), 0);
}

// No small perturbation of the closed-form weights lowers the residual.
TEST(LeastSquaresOracle, LocalOptimalityProbe) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const LayerProblem prob = random_layer_problem(rng, 3, 6, 40);
    const IndexList kept{0, 2, 3, 5};
    const Matrix best = least_squares_oracle(prob.w, prob.h, kept);
    const double base = output_residual(prob.w, best, prob.x, kept);
    for (int k = 0; k < 20; ++k) {
      const Matrix probe = best + 1e-3 * rng.normal_matrix(best.rows(), best.cols());
      EXPECT_GE(output_residual(prob.w, probe, prob.x, kept), base);
    }
    // H-metric residual is twice the output residual when H = 2XX^T
    EXPECT_NEAR(masked_residual(prob.w, best, prob.h, kept), 2.0 * base, 1e-8 * (1.0 + base));
  }
}

TEST(LeastSquaresOracle, SingularKeptBlock) {
  Matrix h = Matrix::Identity(3, 3);
  h(2, 2) = 0.0;
  EXPECT_THROW(least_squares_oracle(Matrix::Ones(2, 3), SpdMatrix(h), {0, 2}), NumericalError);
}

// Exhaustive enumeration written independently: residual from activations.
TEST(BruteForce, MatchesIndependentEnumeration) {
  Rng rng(7);
  const LayerProblem prob = random_layer_problem(rng, 4, 6, 50);
  const SubsetSearchResult r = brute_force_best_columns(prob.w, prob.h, 2);
  double best = std::numeric_limits<double>::infinity();
  IndexList best_set;
  for (Index a = 0; a < 6; ++a)
    for (Index b = a + 1; b < 6; ++b) {
      const IndexList kept = complement(6, {a, b});
      const double e = output_residual(prob.w, ls_from_activations(prob.w, prob.x, kept), prob.x, kept);
      if (e < best) {
        best = e;
        best_set = {a, b};
      }
    }
  EXPECT_EQ(r.removed, best_set);
  EXPECT_NEAR(r.error, 2.0 * best, 1e-8 * r.error);
}

TEST(BruteForce, EdgeCounts) {
  Rng rng(8);
  const LayerProblem prob = random_layer_problem(rng, 3, 5, 30);
  const SubsetSearchResult none = brute_force_best_columns(prob.w, prob.h, 0);
  EXPECT_TRUE(none.removed.empty());
  EXPECT_EQ(none.error, 0.0);
  const SubsetSearchResult all = brute_force_best_columns(prob.w, prob.h, 5);
  EXPECT_EQ(all.removed.size(), 5u);
  const double direct = (prob.w * prob.h.matrix() * prob.w.transpose()).trace();
  EXPECT_NEAR(all.error, direct, 1e-10 * direct);
  EXPECT_THROW(brute_force_best_columns(Matrix::Ones(1, 40), SpdMatrix::identity(40), 20), InvalidArgument);
}

// Any removal order of a fixed set lands on the same compensated weights,
// and the accumulated step errors add up to the final residual.
TEST(PruneColumn, SequentialExactnessAnyOrder) {
  Rng rng(9);
  for (int t = 0; t < 30; ++t) {
    const Index cols = uniform_int(rng, 3, 12);
    const LayerProblem prob = random_layer_problem(rng, uniform_int(rng, 1, 5), cols, 4 * cols);
    const Index k = uniform_int(rng, 1, cols - 1);
    IndexList removed = random_permutation(rng, cols);
    removed.resize(static_cast<std::size_t>(k));
    IndexList sorted = removed;
    std::sort(sorted.begin(), sorted.end());
    const IndexList kept = complement(cols, sorted);
    const Matrix oracle = least_squares_oracle(prob.w, prob.h, kept);
    for (int order = 0; order < 3; ++order) {
      ColumnPruneState s = ColumnPruneState::start(prob.w, prob.h);
      for (Index c : removed) prune_column_inplace(s, s.position_of(c));
      EXPECT_LT(rel_frobenius(s.active_weights(), oracle), 1e-8);
      double acc = 0.0;
      for (const auto& e : s.step_errors) acc += e.error;
      const double resid = masked_residual(prob.w, oracle, prob.h, kept);
      EXPECT_GE(acc, resid * (1.0 - 1e-9));
      EXPECT_NEAR(acc, resid, 1e-8 * (1.0 + resid));
      std::reverse(removed.begin(), removed.end());
      if (order == 1) removed = [&] { IndexList r = removed; std::rotate(r.begin(), r.begin() + 1, r.end()); return r; }();
    }
  }
}

TEST(ColumnErrors, ScaleInvariantSelection) {
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    const LayerProblem prob = random_layer_problem(rng, 4, 8, 30);
    const SpdMatrix h2(Matrix(2.0 * prob.h.matrix()));
    ColumnPruneState a = ColumnPruneState::start(prob.w, prob.h), b = ColumnPruneState::start(prob.w, h2);
    for (int step = 0; step < 4; ++step) {
      const Index pa = argmin_lowest(column_errors(a.active_weights(), a.h_inv));
      const Index pb = argmin_lowest(column_errors(b.active_weights(), b.h_inv));
      ASSERT_EQ(pa, pb);
      prune_column_inplace(a, pa);
      prune_column_inplace(b, pb);
      EXPECT_LT((a.w - b.w).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_NEAR(b.step_errors.back().error, 2.0 * a.step_errors.back().error,
                  1e-10 * a.step_errors.back().error + 1e-300);
    }
  }
}

TEST(PruneColumn, SingleRowIsUnstructuredObs) {
  // d_row = 1: removing weight p with delta = -w_p / Hinv_pp * Hinv[:, p]
  Rng rng(11);
  const Matrix w = rng.normal_matrix(1, 5);
  const SpdMatrix h(random_spd(rng, 5));
  const SpdMatrix h_inv = invert_spd(h);
  ColumnPruneState s = ColumnPruneState::start(w, h);
  prune_column_inplace(s, 3);
  const Vector delta = -w(0, 3) / h_inv(3, 3) * h_inv.matrix().col(3);
  const Vector expected = w.row(0).transpose() + delta;
  for (Index c = 0; c < 5; ++c) EXPECT_NEAR(s.w(0, c), c == 3 ? 0.0 : expected(c), 1e-12);
}
