// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "obsprune/errors.hpp"
#include "obsprune/linalg.hpp"

namespace obsprune {

enum class RatioVariant { log_increase, linear_increase, uniform, log_decrease, linear_decrease };

inline std::string_view to_string(RatioVariant v) {
  switch (v) {
    case RatioVariant::log_increase: return "log-inc";
    case RatioVariant::linear_increase: return "lin-inc";
    case RatioVariant::uniform: return "uniform";
    case RatioVariant::log_decrease: return "log-dec";
    case RatioVariant::linear_decrease: return "lin-dec";
  }
  return "?";
}

inline std::optional<RatioVariant> parse_variant(std::string_view s) {
  for (RatioVariant v : {RatioVariant::log_increase, RatioVariant::linear_increase, RatioVariant::uniform,
                         RatioVariant::log_decrease, RatioVariant::linear_decrease})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

inline bool is_decreasing(RatioVariant v) {
  return v == RatioVariant::log_decrease || v == RatioVariant::linear_decrease;
}

// Ratio of layer i out of n. Increase variants interpolate from r0 to rn with
// weight log(i+1)/log(n) (logarithmic) or i/(n-1) (linear); decrease variants
// are the mirror images (the curve read from the last layer backwards).
// Uniform returns r0. std::lerp keeps both endpoints exact.
inline double ratio_at(Index i, Index n, double r0, double rn, RatioVariant variant) {
  if (!(r0 >= 0.0 && r0 < 1.0 && rn >= 0.0 && rn < 1.0)) throw InvalidArgument("ratio_at: ratios must lie in [0, 1)");
  if (variant == RatioVariant::uniform) {
    if (n < 1 || i < 0 || i >= n) throw InvalidArgument("ratio_at: layer index out of range");
    return r0;
  }
  if (n < 2) throw InvalidArgument("ratio_at: non-uniform schedules need at least 2 layers");
  if (i < 0 || i >= n) throw InvalidArgument("ratio_at: layer index out of range");
  const double dn = static_cast<double>(n);
  switch (variant) {
    case RatioVariant::log_increase:
      return std::lerp(r0, rn, std::log(static_cast<double>(i + 1)) / std::log(dn));
    case RatioVariant::linear_increase:
      return std::lerp(r0, rn, static_cast<double>(i) / (dn - 1.0));
    case RatioVariant::log_decrease:
      return std::lerp(rn, r0, std::log(static_cast<double>(n - i)) / std::log(dn));
    case RatioVariant::linear_decrease:
      return std::lerp(rn, r0, static_cast<double>(n - 1 - i) / (dn - 1.0));
    case RatioVariant::uniform: break;
  }
  return r0;
}

struct PruneSchedule {
  std::vector<double> ratios;
  RatioVariant variant = RatioVariant::log_increase;
  double r_first = 0.0;
  double r_last = 0.0;
};

inline PruneSchedule build_schedule(Index n_layers, RatioVariant variant, double r_first, double r_last) {
  PruneSchedule s{{}, variant, r_first, r_last};
  for (Index i = 0; i < n_layers; ++i) s.ratios.push_back(ratio_at(i, n_layers, r_first, r_last, variant));
  return s;
}

// Units to prune: round(r * units) clamped so that one unit always survives.
inline Index counts_from_ratio(double r, Index units) {
  if (units < 1) throw InvalidArgument("counts_from_ratio: units must be >= 1");
  if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidArgument("counts_from_ratio: ratio must be finite and >= 0");
  const auto n = static_cast<Index>(std::llround(r * static_cast<double>(units)));
  return std::clamp<Index>(n, 0, units - 1);
}

inline double weighted_mean(const std::vector<double>& ratios, const std::vector<double>& weights) {
  if (ratios.size() != weights.size() || ratios.empty()) throw InvalidArgument("weighted_mean: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(weights[i] > 0.0)) throw InvalidArgument("weighted_mean: weights must be positive");
    num += weights[i] * ratios[i];
    den += weights[i];
  }
  return num / den;
}

inline constexpr double kTargetTolerance = 1e-6;

namespace detail {

// Root of the non-decreasing function f(x) - target on [lo, hi].
inline double bisect_mean(const std::function<double(double)>& mean_of, double target, double lo, double hi) {
  if (mean_of(lo) > target + kTargetTolerance || mean_of(hi) < target - kTargetTolerance) {
    throw InvalidArgument("global target " + std::to_string(target) + " unreachable");
  }
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (mean_of(mid) < target) lo = mid; else hi = mid;
  }
  const double best = std::abs(mean_of(lo) - target) <= std::abs(mean_of(hi) - target) ? lo : hi;
  if (std::abs(mean_of(best) - target) >= kTargetTolerance) {
    throw InvalidArgument("global target " + std::to_string(target) + " unreachable");
  }
  return best;
}

inline constexpr double kMaxRatio = 1.0 - 1e-12;

}  // namespace detail

// Last-layer ratio whose schedule (first ratio r0, given variant) has the
// requested parameter-weighted mean. One weight per layer.
inline double solve_last_ratio(double global_target, double r0, const std::vector<double>& layer_param_weights,
                               RatioVariant variant = RatioVariant::log_increase) {
  const auto n = static_cast<Index>(layer_param_weights.size());
  if (global_target == r0) return r0;
  if (variant == RatioVariant::uniform) throw InvalidArgument("uniform schedule cannot reach a target other than r0");
  auto mean_of = [&](double rn) { return weighted_mean(build_schedule(n, variant, r0, rn).ratios, layer_param_weights); };
  return detail::bisect_mean(mean_of, global_target, r0, detail::kMaxRatio);
}

// First-layer ratio for a decreasing schedule that ends at r_last.
inline double solve_first_ratio(double global_target, double r_last, const std::vector<double>& layer_param_weights,
                                RatioVariant variant) {
  const auto n = static_cast<Index>(layer_param_weights.size());
  if (global_target == r_last) return r_last;
  auto mean_of = [&](double r0) { return weighted_mean(build_schedule(n, variant, r0, r_last).ratios, layer_param_weights); };
  return detail::bisect_mean(mean_of, global_target, r_last, detail::kMaxRatio);
}

// Schedule meeting a global target. `anchor` is the smallest ratio of the
// schedule: the first layer for increasing variants and the last layer for
// decreasing ones, so log-inc and log-dec (and the linear pair) are exact
// mirror images with equal mean under symmetric weights.
inline PruneSchedule schedule_for_target(RatioVariant variant, double global_target, double anchor,
                                         const std::vector<double>& layer_param_weights) {
  const auto n = static_cast<Index>(layer_param_weights.size());
  if (variant == RatioVariant::uniform) return build_schedule(n, variant, global_target, global_target);
  if (is_decreasing(variant)) {
    const double first = solve_first_ratio(global_target, anchor, layer_param_weights, variant);
    return build_schedule(n, variant, first, anchor);
  }
  const double last = solve_last_ratio(global_target, anchor, layer_param_weights, variant);
  return build_schedule(n, variant, anchor, last);
}

}  // namespace obsprune
