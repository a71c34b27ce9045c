// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "obsprune/linalg.hpp"
#include "obsprune/pipeline.hpp"
#include "obsprune/schedule.hpp"
#include "obsprune/tensorstore.hpp"
#include "obsprune/toy_model.hpp"

namespace obsprune {

// Consistency of a report with itself and, when given, with the pruned model
// and manifest it was written next to. Returns one message per violation.
inline std::vector<std::string> verify_report(const PruneReport& r, const TensorMap* pruned_model = nullptr,
                                              const ModelManifest* pruned_manifest = nullptr) {
  std::vector<std::string> bad;
  auto fail = [&](Index l, const std::string& what) { bad.push_back("layer " + std::to_string(l) + ": " + what); };
  if (r.schedule.ratios.size() != r.layers.size()) bad.push_back("schedule length != layer count");
  if (pruned_manifest && pruned_manifest->n_layers() != static_cast<Index>(r.layers.size())) {
    bad.push_back("report layer count != manifest layer count");
  }
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const LayerReport& l = r.layers[i];
    if (l.layer != static_cast<Index>(i)) fail(l.layer, "layers out of order");
    for (double v : {l.ratio, l.attn_ratio, l.ffn_ratio})
      if (!(v >= 0.0 && v < 1.0)) fail(l.layer, "ratio outside [0, 1)");
    if (i < r.schedule.ratios.size() && r.schedule.ratios[i] != l.ratio) fail(l.layer, "ratio differs from schedule");
    if (!(std::isfinite(l.sum_step_error) && l.sum_step_error >= 0.0)) fail(l.layer, "step error not finite and >= 0");
    if (!(std::isfinite(l.output_sq_error) && l.output_sq_error >= 0.0)) fail(l.layer, "output error not finite and >= 0");
    if (l.heads_before < 1 || l.channels_before < 1) {
      fail(l.layer, "empty block before pruning");
      continue;
    }
    if (l.heads_removed != counts_from_ratio(l.attn_ratio, l.heads_before)) fail(l.layer, "heads_removed != count of ratio");
    if (l.channels_removed != counts_from_ratio(l.ffn_ratio, l.channels_before)) {
      fail(l.layer, "channels_removed != count of ratio");
    }
    if (static_cast<Index>(l.kept_heads.size()) != l.heads_before - l.heads_removed) fail(l.layer, "kept_heads size");
    if (pruned_manifest && pruned_model && static_cast<Index>(i) < pruned_manifest->n_layers()) {
      const LayerEntry& e = pruned_manifest->layers[i];
      if (e.head_layout.n_head != l.heads_before - l.heads_removed) fail(l.layer, "manifest head count mismatch");
      const auto it = pruned_model->find(e.ffn_down);
      if (it == pruned_model->end() || it->second.cols() != l.channels_before - l.channels_removed) {
        fail(l.layer, "ffn_down width mismatch");
      }
    }
  }
  if (pruned_manifest && pruned_model) {
    try {
      pruned_manifest->validate(*pruned_model);
    } catch (const Error& e) {
      bad.push_back(std::string("manifest: ") + e.what());
    }
  }
  return bad;
}

// Randomized re-check of the linear-algebra identities the pruning relies on,
// against an LU-based inverse.
inline std::vector<std::string> numeric_self_check(std::uint64_t seed, int trials = 16) {
  std::vector<std::string> bad;
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const Index n = 2 + static_cast<Index>(rng.next_u64() % 15);
    const Matrix a = rng.normal_matrix(n, 2 * n);
    const SpdMatrix m(Matrix(a * a.transpose() / static_cast<double>(2 * n) + 0.1 * Matrix::Identity(n, n)));
    const Matrix lu_inv = m.matrix().partialPivLu().inverse();
    const SpdMatrix inv = invert_spd(m);
    if (inf_norm(inv.matrix() - lu_inv) > 1e-8) bad.push_back("invert_spd disagrees with LU inverse");

    IndexList perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (Index i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.next_u64() % static_cast<std::uint64_t>(i + 1)]);
    const Matrix lhs = permute_symmetric(inv, perm).matrix();
    const Matrix rhs = permute_symmetric(m, perm).matrix().partialPivLu().inverse();
    if (inf_norm(lhs - rhs) > 1e-8) bad.push_back("permutation/inversion commutation violated");

    const Matrix l = cholesky_lower(m);
    const Index k = 1 + static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
    const Matrix lk = cholesky_lower(SpdMatrix(Matrix(m.matrix().topLeftCorner(k, k))));
    if (inf_norm(l.topLeftCorner(k, k) - lk) > 1e-8) bad.push_back("leading Cholesky block identity violated");

    const Index p = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
    if (n > 1) {
      const Matrix direct = delete_row_col(m.matrix(), p).partialPivLu().inverse();
      if (inf_norm(remove_update(inv, p).matrix() - direct) > 1e-8) bad.push_back("inverse removal update violated");
    }
  }
  return bad;
}

}  // namespace obsprune
