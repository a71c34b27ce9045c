// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "obsprune/calib.hpp"
#include "obsprune/errors.hpp"
#include "obsprune/ffn_pruner.hpp"
#include "obsprune/head_pruner.hpp"
#include "obsprune/linalg.hpp"
#include "obsprune/schedule.hpp"
#include "obsprune/tensorstore.hpp"
#include "obsprune/toy_model.hpp"

namespace obsprune {

// Where the Hessian inputs of layer l come from.
enum class CalibMode {
  pruned,    // calibration run through the already-pruned layers 0..l-1
  original,  // calibration run through the unpruned model
  recorded,  // activations stored in the calibration file (manifest names)
};

inline std::string_view to_string(CalibMode m) {
  switch (m) {
    case CalibMode::pruned: return "pruned";
    case CalibMode::original: return "original";
    case CalibMode::recorded: return "recorded";
  }
  return "?";
}

inline std::optional<CalibMode> parse_calib_mode(std::string_view s) {
  for (CalibMode m : {CalibMode::pruned, CalibMode::original, CalibMode::recorded})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

inline std::string_view to_string(InverseRefresh r) { return r == InverseRefresh::trailing ? "trailing" : "reinvert"; }
inline std::string_view to_string(HeadErrorEstimator e) {
  return e == HeadErrorEstimator::grouped_cholesky ? "grouped-cholesky" : "raw-diagonal";
}

struct PruneConfig {
  RatioVariant variant = RatioVariant::log_increase;
  double ratio_first = 0.0;
  double ratio_last = 0.0;
  // When set, the far endpoint is solved so the parameter-weighted mean ratio
  // hits the target; ratio_first is then the smallest ratio of the schedule.
  std::optional<double> global_target;
  // Explicit per-layer ratios; overrides the schedule entirely.
  std::optional<std::vector<double>> layer_ratios;
  // Constant ratio for one block type in every layer.
  std::optional<double> attn_ratio;
  std::optional<double> ffn_ratio;
  double damping = kDefaultDamping;
  GroupSchedule groups{};
  InverseRefresh refresh = InverseRefresh::trailing;
  HeadErrorEstimator estimator = HeadErrorEstimator::grouped_cholesky;
  CalibMode calib_mode = CalibMode::pruned;
  bool record_timing = false;
};

inline nlohmann::json to_json(const PruneConfig& c) {
  nlohmann::json j = {{"variant", to_string(c.variant)},
                      {"ratio_first", c.ratio_first},
                      {"ratio_last", c.ratio_last},
                      {"damping", c.damping},
                      {"group_start", c.groups.start_size},
                      {"group_min", c.groups.min_size},
                      {"refresh", to_string(c.refresh)},
                      {"estimator", to_string(c.estimator)},
                      {"calib_mode", to_string(c.calib_mode)}};
  if (c.global_target) j["global_target"] = *c.global_target;
  if (c.layer_ratios) j["layer_ratios"] = *c.layer_ratios;
  if (c.attn_ratio) j["attn_ratio"] = *c.attn_ratio;
  if (c.ffn_ratio) j["ffn_ratio"] = *c.ffn_ratio;
  return j;
}

struct LayerReport {
  Index layer = 0;
  double ratio = 0.0;
  double attn_ratio = 0.0;
  double ffn_ratio = 0.0;
  Index heads_before = 0;
  Index heads_removed = 0;
  Index channels_before = 0;
  Index channels_removed = 0;
  double sum_step_error = 0.0;
  double output_sq_error = 0.0;
  IndexList kept_heads;
};

struct PruneReport {
  std::vector<LayerReport> layers;
  PruneSchedule schedule;
  nlohmann::json config;
  std::optional<double> wall_clock_s;

  double final_output_error() const { return layers.empty() ? 0.0 : layers.back().output_sq_error; }
};

inline nlohmann::json to_json(const PruneReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"ratio", l.ratio},
                      {"attn_ratio", l.attn_ratio},
                      {"ffn_ratio", l.ffn_ratio},
                      {"heads_before", l.heads_before},
                      {"heads_removed", l.heads_removed},
                      {"channels_before", l.channels_before},
                      {"channels_removed", l.channels_removed},
                      {"sum_step_error", l.sum_step_error},
                      {"output_sq_error", l.output_sq_error},
                      {"kept_heads", l.kept_heads}});
  }
  nlohmann::json j = {{"schedule",
                       {{"variant", to_string(r.schedule.variant)},
                        {"r_first", r.schedule.r_first},
                        {"r_last", r.schedule.r_last},
                        {"ratios", r.schedule.ratios}}},
                      {"layers", std::move(layers)},
                      {"config", r.config}};
  if (r.wall_clock_s) j["wall_clock_s"] = *r.wall_clock_s;
  return j;
}

inline PruneReport report_from_json(const nlohmann::json& j) {
  PruneReport r;
  try {
    const auto& s = j.at("schedule");
    const auto v = parse_variant(s.at("variant").get<std::string>());
    if (!v) throw InvalidArgument("report: unknown schedule variant");
    r.schedule.variant = *v;
    r.schedule.r_first = s.at("r_first").get<double>();
    r.schedule.r_last = s.at("r_last").get<double>();
    r.schedule.ratios = s.at("ratios").get<std::vector<double>>();
    for (const auto& l : j.at("layers")) {
      LayerReport lr;
      lr.layer = l.at("layer").get<Index>();
      lr.ratio = l.at("ratio").get<double>();
      lr.attn_ratio = l.at("attn_ratio").get<double>();
      lr.ffn_ratio = l.at("ffn_ratio").get<double>();
      lr.heads_before = l.at("heads_before").get<Index>();
      lr.heads_removed = l.at("heads_removed").get<Index>();
      lr.channels_before = l.at("channels_before").get<Index>();
      lr.channels_removed = l.at("channels_removed").get<Index>();
      lr.sum_step_error = l.at("sum_step_error").get<double>();
      lr.output_sq_error = l.at("output_sq_error").get<double>();
      lr.kept_heads = l.value("kept_heads", IndexList{});
      r.layers.push_back(std::move(lr));
    }
    r.config = j.value("config", nlohmann::json::object());
    if (j.contains("wall_clock_s")) r.wall_clock_s = j["wall_clock_s"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed report: ") + e.what());
  }
  return r;
}

// CSV columns: layer, ratio, heads_removed, channels_removed, sum_step_error,
// output_sq_error. Floats use 17 significant digits.
inline std::string report_csv(const PruneReport& r) {
  std::ostringstream os;
  os << "layer,ratio,heads_removed,channels_removed,sum_step_error,output_sq_error\n";
  char buf[256];
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%lld,%lld,%.17g,%.17g\n", static_cast<long long>(l.layer), l.ratio,
                  static_cast<long long>(l.heads_removed), static_cast<long long>(l.channels_removed), l.sum_step_error,
                  l.output_sq_error);
    os << buf;
  }
  return os.str();
}

inline Matrix select_rows(const Eigen::Ref<const Matrix>& m, const IndexList& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline Matrix select_cols(const Eigen::Ref<const Matrix>& m, const IndexList& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

// Per-layer parameter counts of every tensor the manifest names for the layer.
inline std::vector<double> layer_param_counts(const TensorMap& tensors, const ModelManifest& manifest) {
  std::vector<double> out;
  for (const auto& e : manifest.layers) {
    double n = 0.0;
    auto add = [&](const std::string& name) {
      if (!name.empty()) n += static_cast<double>(require_tensor(tensors, name).size());
    };
    add(e.attn_out);
    add(e.ffn_down);
    for (const auto& c : e.attn_coupled) add(c);
    for (const auto& c : e.ffn_coupled) add(c);
    add(e.attn_norm);
    add(e.ffn_norm);
    out.push_back(n);
  }
  return out;
}

inline PruneSchedule resolve_schedule(const PruneConfig& cfg, const std::vector<double>& layer_weights) {
  const auto n = static_cast<Index>(layer_weights.size());
  if (cfg.layer_ratios) {
    if (static_cast<Index>(cfg.layer_ratios->size()) != n) {
      throw InvalidArgument("layer_ratios has " + std::to_string(cfg.layer_ratios->size()) + " entries for " +
                            std::to_string(n) + " layers");
    }
    PruneSchedule s{*cfg.layer_ratios, cfg.variant, cfg.layer_ratios->front(), cfg.layer_ratios->back()};
    for (double r : s.ratios)
      if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("layer_ratios must lie in [0, 1)");
    return s;
  }
  if (n == 1 && cfg.variant != RatioVariant::uniform) {
    const double r = cfg.global_target.value_or(cfg.ratio_first);
    return {{r}, cfg.variant, r, r};
  }
  if (cfg.global_target) return schedule_for_target(cfg.variant, *cfg.global_target, cfg.ratio_first, layer_weights);
  return build_schedule(n, cfg.variant, cfg.ratio_first,
                        cfg.variant == RatioVariant::uniform ? cfg.ratio_first : cfg.ratio_last);
}

struct PruneOutcome {
  TensorMap model;
  ModelManifest manifest;
  PruneReport report;
};

namespace detail {

inline SpdMatrix hessian_of(const Eigen::Ref<const Matrix>& x, double damping) {
  HessianAccumulator acc(x.rows());
  acc.accumulate(x);
  return acc.finalize(damping);
}

inline std::string layer_context(Index l) { return "layer " + std::to_string(l) + ": "; }

// Rethrows with the failing layer index prepended, keeping the error family.
template <typename F>
auto with_layer(Index l, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(layer_context(l) + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(layer_context(l) + e.what());
  }
}

}  // namespace detail

// Layer-by-layer pruning. Per layer: heads first (Hessian of the attention
// output projection's input), then FFN channels with activations recomputed
// after the head pruning. Coupled tensors lose the rows matching removed
// anchor columns.
inline PruneOutcome prune_model(const TensorMap& model, const ModelManifest& manifest, const TensorMap& calib,
                                const PruneConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  manifest.validate(model);
  cfg.groups.validate();
  PruneOutcome out{model, manifest, {}};
  out.report.schedule = resolve_schedule(cfg, layer_param_counts(model, manifest));
  out.report.config = to_json(cfg);
  const HeadPruneOptions head_opts{cfg.refresh, cfg.estimator};
  const bool forward_mode = cfg.calib_mode != CalibMode::recorded;

  Matrix x_cur, x_ref;
  if (forward_mode) {
    x_cur = require_tensor(calib, kCalibInputName);
    x_ref = x_cur;
  }

  for (Index l = 0; l < manifest.n_layers(); ++l) {
    LayerEntry& entry = out.manifest.layers[static_cast<std::size_t>(l)];
    LayerReport row;
    row.layer = l;
    row.ratio = out.report.schedule.ratios[static_cast<std::size_t>(l)];
    row.attn_ratio = cfg.attn_ratio.value_or(row.ratio);
    row.ffn_ratio = cfg.ffn_ratio.value_or(row.ratio);
    row.heads_before = entry.head_layout.n_head;
    row.channels_before = require_tensor(out.model, entry.ffn_down).cols();
    const Index n_heads = counts_from_ratio(row.attn_ratio, row.heads_before);
    const Index n_channels = counts_from_ratio(row.ffn_ratio, row.channels_before);

    detail::with_layer(l, [&] {
      std::optional<LayerWeights> ref_w;
      if (forward_mode) ref_w = LayerWeights::load(model, manifest.layers[static_cast<std::size_t>(l)]);
      const Matrix& x_in = cfg.calib_mode == CalibMode::original ? x_ref : x_cur;
      double recorded_err = 0.0;

      if (n_heads > 0) {
        const Matrix z = forward_mode ? forward_layer(LayerWeights::load(out.model, entry), x_in, manifest.seq_len).z
                                      : require_tensor(calib, entry.attn_activations);
        const Matrix wo = require_tensor(out.model, entry.attn_out);
        const HeadPruneResult res =
            prune_heads(wo, detail::hessian_of(z, cfg.damping), entry.head_layout, n_heads, head_opts);
        if (!forward_mode) {
          recorded_err += (wo * z - res.pruned_w * select_rows(z, res.kept_columns)).squaredNorm();
        }
        out.model[entry.attn_out] = res.pruned_w;
        for (const auto& c : entry.attn_coupled) out.model[c] = select_rows(require_tensor(out.model, c), res.kept_columns);
        entry.head_layout.n_head -= n_heads;
        row.heads_removed = n_heads;
        row.kept_heads = res.kept_heads;
        for (double e : res.round_errors) row.sum_step_error += e;
      } else {
        for (Index h = 0; h < row.heads_before; ++h) row.kept_heads.push_back(h);
      }

      if (n_channels > 0) {
        const Matrix act = forward_mode
                               ? forward_layer(LayerWeights::load(out.model, entry), x_in, manifest.seq_len).ffn_act
                               : require_tensor(calib, entry.ffn_activations);
        const Matrix wd = require_tensor(out.model, entry.ffn_down);
        const ChannelPruneResult res = prune_channels(wd, detail::hessian_of(act, cfg.damping), n_channels, cfg.groups);
        if (!forward_mode) recorded_err += (wd * act - res.pruned_w * select_rows(act, res.kept)).squaredNorm();
        out.model[entry.ffn_down] = res.pruned_w;
        for (const auto& c : entry.ffn_coupled) out.model[c] = select_rows(require_tensor(out.model, c), res.kept);
        row.channels_removed = n_channels;
        for (const auto& s : res.step_errors) row.sum_step_error += s.error;
      }

      if (forward_mode) {
        const Matrix y_ref = forward_layer(*ref_w, x_ref, manifest.seq_len).y;
        Matrix y_cur = forward_layer(LayerWeights::load(out.model, entry), x_cur, manifest.seq_len).y;
        row.output_sq_error = (y_ref - y_cur).squaredNorm();
        x_ref = y_ref;
        x_cur = std::move(y_cur);
      } else {
        row.output_sq_error = recorded_err;
      }
      if (!std::isfinite(row.output_sq_error) || !std::isfinite(row.sum_step_error)) {
        throw NumericalError("non-finite error values");
      }
    });
    out.report.layers.push_back(std::move(row));
  }
  out.manifest.validate(out.model);
  if (cfg.record_timing) {
    out.report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

}  // namespace obsprune
