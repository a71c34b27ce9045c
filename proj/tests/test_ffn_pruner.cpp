// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "obsprune/ffn_pruner.hpp"
#include "support/oracles.hpp"

using namespace obsprune;
using obsprune::testing::LayerProblem;
using obsprune::testing::random_layer_problem;
using obsprune::testing::uniform_int;

TEST(GroupSizes, Examples) {
  EXPECT_TRUE(group_sizes(0, {}).empty());
  EXPECT_EQ(group_sizes(5, {4, 1}), (std::vector<Index>{4, 1}));
  EXPECT_EQ(group_sizes(2056, {1024, 8}), (std::vector<Index>{1024, 512, 256, 128, 64, 32, 16, 8, 8, 8}));
  EXPECT_EQ(group_sizes(3, {8, 2}), (std::vector<Index>{3}));
  EXPECT_EQ(group_sizes(4, GroupSchedule::fixed(1)), (std::vector<Index>{1, 1, 1, 1}));
}

TEST(GroupSizes, Invariants) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Index min = uniform_int(rng, 1, 16);
    const GroupSchedule s{min * (Index{1} << uniform_int(rng, 0, 6)), min};
    const Index total = uniform_int(rng, 0, 3000);
    const auto g = group_sizes(total, s);
    EXPECT_EQ(std::accumulate(g.begin(), g.end(), Index{0}), total);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_GT(g[i], 0);
      if (i > 0) {
        EXPECT_LE(g[i], g[i - 1]);
      }
    }
  }
}

TEST(GroupSizes, Errors) {
  EXPECT_THROW(group_sizes(4, {2, 4}), InvalidArgument);
  EXPECT_THROW(group_sizes(4, {0, 0}), InvalidArgument);
  EXPECT_THROW(group_sizes(-1, {}), InvalidArgument);
}

TEST(PruneChannels, ZeroColumnsRemovedFree) {
  Rng rng(2);
  Matrix w = rng.normal_matrix(4, 8);
  w.col(1).setZero();
  w.col(5).setZero();
  w.col(6).setZero();
  const ChannelPruneResult r = prune_channels(w, SpdMatrix::identity(8), 3, {2, 1});
  EXPECT_EQ(r.kept, (IndexList{0, 2, 3, 4, 7}));
  for (const auto& s : r.step_errors) EXPECT_EQ(s.error, 0.0);
  EXPECT_EQ(r.groups, (std::vector<Index>{2, 1}));
}

TEST(PruneChannels, NoPruningAndErrors) {
  Rng rng(3);
  const LayerProblem prob = random_layer_problem(rng, 2, 5, 20);
  const ChannelPruneResult r = prune_channels(prob.w, prob.h, 0);
  EXPECT_EQ(r.pruned_w, prob.w);
  EXPECT_EQ(r.kept.size(), 5u);
  EXPECT_THROW(prune_channels(prob.w, prob.h, 5), InvalidArgument);
}

// Plain greedy loop: re-score after every removal, take the argmin.
TEST(PruneChannels, GroupSizeOneIsExactGreedy) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Index cols = uniform_int(rng, 4, 20);
    const LayerProblem prob = random_layer_problem(rng, 3, cols, 3 * cols);
    const Index k = uniform_int(rng, 1, cols - 1);
    ColumnPruneState s = ColumnPruneState::start(prob.w, prob.h);
    for (Index i = 0; i < k; ++i) prune_column_inplace(s, argmin_lowest(column_errors(s.active_weights(), s.h_inv)));
    const ChannelPruneResult r = prune_channels(prob.w, prob.h, k, GroupSchedule::fixed(1));
    ASSERT_EQ(r.step_errors.size(), s.step_errors.size());
    for (std::size_t i = 0; i < r.step_errors.size(); ++i) EXPECT_EQ(r.step_errors[i].column, s.step_errors[i].column);
    EXPECT_EQ(r.pruned_w, s.active_weights());
  }
}

TEST(PruneChannels, CompensationExactForAnySchedule) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Index cols = uniform_int(rng, 6, 24);
    const LayerProblem prob = random_layer_problem(rng, 3, cols, 3 * cols);
    const Index k = uniform_int(rng, 1, cols - 1);
    const GroupSchedule sched{Index{1} << uniform_int(rng, 0, 4), 1};
    const ChannelPruneResult r = prune_channels(prob.w, prob.h, k, sched);
    EXPECT_EQ(static_cast<Index>(r.step_errors.size()), k);
    std::set<Index> removed;
    for (const auto& s : r.step_errors) removed.insert(s.column);
    EXPECT_EQ(static_cast<Index>(removed.size()), k);
    EXPECT_EQ(static_cast<Index>(r.kept.size()), cols - k);
    const Matrix oracle = least_squares_oracle(prob.w, prob.h, r.kept);
    EXPECT_LT(obsprune::testing::rel_frobenius(r.pruned_w, oracle), 1e-8);
  }
}

// A shrinking schedule beats one fixed group of the whole prune count, and
// on average stays within 10% of exact greedy. Single correlated instances
// can be worse than that; the fixed group is far worse.
TEST(PruneChannels, DynamicScheduleCloseToGreedy) {
  Rng rng(6);
  double ratio_sum = 0.0;
  int beats_fixed = 0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    const LayerProblem prob = random_layer_problem(rng, 6, 16, 64);
    const ChannelPruneResult g1 = prune_channels(prob.w, prob.h, 8, GroupSchedule::fixed(1));
    const ChannelPruneResult dyn = prune_channels(prob.w, prob.h, 8, {2, 1});
    const ChannelPruneResult f8 = prune_channels(prob.w, prob.h, 8, GroupSchedule::fixed(8));
    const double e1 = masked_residual(prob.w, g1.pruned_w, prob.h, g1.kept);
    const double ed = masked_residual(prob.w, dyn.pruned_w, prob.h, dyn.kept);
    const double ef = masked_residual(prob.w, f8.pruned_w, prob.h, f8.kept);
    ratio_sum += ed / e1;
    if (ed <= ef) ++beats_fixed;
  }
  EXPECT_LE(ratio_sum / trials, 1.10);
  EXPECT_GE(beats_fixed, trials * 9 / 10);
}
