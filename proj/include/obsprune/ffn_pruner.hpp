// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "obsprune/errors.hpp"
#include "obsprune/linalg.hpp"
#include "obsprune/obs_core.hpp"

namespace obsprune {

// Group size starts at start_size and halves after every group, never going
// below min_size; the last group is truncated to what remains.
struct GroupSchedule {
  Index start_size = 1024;
  Index min_size = 8;

  void validate() const {
    if (start_size <= 0 || min_size <= 0 || min_size > start_size) {
      throw InvalidArgument("GroupSchedule: need 0 < min_size <= start_size");
    }
  }

  static GroupSchedule fixed(Index size) { return {size, size}; }
};

inline std::vector<Index> group_sizes(Index total_to_prune, const GroupSchedule& sched) {
  sched.validate();
  if (total_to_prune < 0) throw InvalidArgument("group_sizes: negative count");
  std::vector<Index> out;
  Index size = sched.start_size;
  Index remaining = total_to_prune;
  while (remaining > 0) {
    const Index g = std::min(size, remaining);
    out.push_back(g);
    remaining -= g;
    size = std::max(size / 2, sched.min_size);
  }
  return out;
}

struct ChannelPruneResult {
  Matrix pruned_w;        // kept columns only
  IndexList kept;         // ascending original column indices
  std::vector<StepError> step_errors;  // removal order
  std::vector<Index> groups;
};

// Each group: score all alive columns once, take the k cheapest (ties to the
// lowest index) and remove them in ascending-error order with full
// compensation between removals.
inline ChannelPruneResult prune_channels(const Eigen::Ref<const Matrix>& w, const SpdMatrix& h, Index n_prune,
                                         const GroupSchedule& sched = {}) {
  if (n_prune < 0 || n_prune >= w.cols()) throw InvalidArgument("prune_channels: n_prune must be in [0, columns)");
  ChannelPruneResult res;
  if (n_prune == 0) {
    res.pruned_w = w;
    for (Index c = 0; c < w.cols(); ++c) res.kept.push_back(c);
    return res;
  }
  res.groups = group_sizes(n_prune, sched);
  ColumnPruneState state = ColumnPruneState::start(w, h);
  for (Index k : res.groups) {
    const Vector err = column_errors(state.active_weights(), state.h_inv);
    std::vector<Index> order(static_cast<std::size_t>(err.size()));
    std::iota(order.begin(), order.end(), Index{0});
    // Positions follow ascending original index, so a stable sort breaks ties low.
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return err(a) < err(b); });
    IndexList chosen;
    for (Index i = 0; i < k; ++i) chosen.push_back(state.alive[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    for (Index col : chosen) prune_column_inplace(state, state.position_of(col));
  }
  res.pruned_w = state.active_weights();
  res.kept = state.alive;
  res.step_errors = std::move(state.step_errors);
  return res;
}

}  // namespace obsprune
