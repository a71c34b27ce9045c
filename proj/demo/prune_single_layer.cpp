// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prunes two heads from a random attention output projection and compares
// the result with the best head pair found by exhaustive search.

#include <cstdio>

#include "obsprune/obsprune.hpp"

int main() {
  using namespace obsprune;
  Rng rng(7);
  const HeadLayout layout{6, 4};
  const Index tokens = 200;

  const Matrix x = rng.normal_matrix(layout.columns(), tokens);
  Matrix w = rng.normal_matrix(16, layout.columns());
  for (Index h = 0; h < layout.n_head; ++h) w.middleCols(h * layout.d_head, layout.d_head) *= 0.5 + 0.25 * h;

  HessianAccumulator acc(layout.columns());
  acc.accumulate(x);
  const SpdMatrix hess = acc.finalize(0.0);

  const HeadPruneResult res = prune_heads(w, hess, layout, 2);
  const double greedy = masked_residual(w, res.pruned_w, hess, res.kept_columns);
  const SubsetSearchResult best = brute_force_best_groups(w, hess, 2, layout.d_head);

  std::printf("pruned heads:");
  for (Index h : res.pruned_heads) std::printf(" %lld", static_cast<long long>(h));
  std::printf("\ngreedy residual      %.6g\nexhaustive residual  %.6g\nratio                %.4f\n", greedy,
              best.error, greedy / best.error);
  return 0;
}
