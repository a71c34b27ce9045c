// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen-toy, prune, verify, report.
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure or
// failed verification.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "obsprune/errors.hpp"
#include "obsprune/pipeline.hpp"
#include "obsprune/tensorstore.hpp"
#include "obsprune/toy_model.hpp"
#include "obsprune/verify.hpp"

namespace obsprune {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

namespace cli_detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw InvalidArgument("write failure on " + p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidArgument("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(p.string() + ": " + e.what());
  }
}

template <typename Enum, typename Parse>
Enum parse_enum(const std::string& s, Parse parse, const char* what) {
  const auto v = parse(s);
  if (!v) throw InvalidArgument(std::string("unknown ") + what + " '" + s + "'");
  return *v;
}

inline std::optional<InverseRefresh> parse_refresh(std::string_view s) {
  if (s == "trailing") return InverseRefresh::trailing;
  if (s == "reinvert") return InverseRefresh::reinvert;
  return std::nullopt;
}

inline std::optional<HeadErrorEstimator> parse_estimator(std::string_view s) {
  if (s == "grouped-cholesky") return HeadErrorEstimator::grouped_cholesky;
  if (s == "raw-diagonal") return HeadErrorEstimator::raw_diagonal;
  return std::nullopt;
}

// Config file keys mirror the long flag names with '_' for '-'.
inline void apply_config_file(PruneConfig& cfg, const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "variant",   "ratio_first", "ratio_last", "global_target", "layer_ratios", "attn_ratio",  "ffn_ratio",
      "damping",   "group_start", "group_min",  "refresh",       "estimator",    "calib_mode", "timing"};
  if (!j.is_object()) throw InvalidArgument("config: expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw InvalidArgument("config: unknown key '" + k + "'");
  }
  try {
    if (j.contains("variant")) cfg.variant = parse_enum<RatioVariant>(j["variant"].get<std::string>(), parse_variant, "variant");
    if (j.contains("ratio_first")) cfg.ratio_first = j["ratio_first"].get<double>();
    if (j.contains("ratio_last")) cfg.ratio_last = j["ratio_last"].get<double>();
    if (j.contains("global_target")) cfg.global_target = j["global_target"].get<double>();
    if (j.contains("layer_ratios")) cfg.layer_ratios = j["layer_ratios"].get<std::vector<double>>();
    if (j.contains("attn_ratio")) cfg.attn_ratio = j["attn_ratio"].get<double>();
    if (j.contains("ffn_ratio")) cfg.ffn_ratio = j["ffn_ratio"].get<double>();
    if (j.contains("damping")) cfg.damping = j["damping"].get<double>();
    if (j.contains("group_start")) cfg.groups.start_size = j["group_start"].get<Index>();
    if (j.contains("group_min")) cfg.groups.min_size = j["group_min"].get<Index>();
    if (j.contains("refresh")) cfg.refresh = parse_enum<InverseRefresh>(j["refresh"].get<std::string>(), parse_refresh, "refresh");
    if (j.contains("estimator")) {
      cfg.estimator = parse_enum<HeadErrorEstimator>(j["estimator"].get<std::string>(), parse_estimator, "estimator");
    }
    if (j.contains("calib_mode")) {
      cfg.calib_mode = parse_enum<CalibMode>(j["calib_mode"].get<std::string>(), parse_calib_mode, "calib mode");
    }
    if (j.contains("timing")) cfg.record_timing = j["timing"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Structured OBS pruning of transformer weight matrices", "obsprune"};
  app.require_subcommand(1);

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "Generate a toy model, manifest and calibration activations");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  ToyModelSpec spec;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Parameter initialization seed");
  gen->add_option("--layers", spec.n_layers, "Number of layers");
  gen->add_option("--n-head", spec.n_head, "Attention heads per layer");
  gen->add_option("--d-head", spec.d_head, "Head width");
  gen->add_option("--d-ff", spec.d_ff, "FFN intermediate width");
  gen->add_option("--seq-len", spec.seq_len, "Calibration sequence length");
  gen->add_option("--n-seq", spec.n_seqs, "Calibration sequence count");
  gen->add_option("--gain", spec.residual_gain, "Residual branch gain");

  // prune
  auto* prune = app.add_subcommand("prune", "Prune a model layer by layer");
  std::string model_path, manifest_path, calib_path, prune_out, config_path;
  std::string variant_s, refresh_s, calib_mode_s, estimator_s;
  double ratio_first = 0, ratio_last = 0, global_target = 0, damping = 0;
  Index group_start = 0, group_min = 0;
  std::uint64_t prune_seed = 0;
  bool timing = false;
  prune->add_option("--model", model_path, "Input tensor file")->required();
  prune->add_option("--manifest", manifest_path, "Input manifest")->required();
  prune->add_option("--calib", calib_path, "Calibration tensor file")->required();
  prune->add_option("--out", prune_out, "Output directory")->required();
  prune->add_option("--config", config_path, "JSON config file; flags override it");
  auto* o_rf = prune->add_option("--ratio-first", ratio_first, "First-layer ratio (smallest ratio with --global-target)");
  auto* o_rl = prune->add_option("--ratio-last", ratio_last, "Last-layer ratio");
  auto* o_gt = prune->add_option("--global-target", global_target, "Parameter-weighted mean ratio to reach");
  auto* o_var = prune->add_option("--variant", variant_s, "log-inc | lin-inc | uniform | log-dec | lin-dec");
  auto* o_damp = prune->add_option("--damping", damping, "Hessian damping as a fraction of its mean diagonal");
  auto* o_gs = prune->add_option("--group-start", group_start, "Initial FFN group size");
  auto* o_gm = prune->add_option("--group-min", group_min, "Minimum FFN group size");
  prune->add_option("--seed", prune_seed, "Accepted for symmetry with gen-toy; pruning is deterministic");
  auto* o_ref = prune->add_option("--refresh", refresh_s, "trailing | reinvert");
  auto* o_cm = prune->add_option("--calib-mode", calib_mode_s, "pruned | original | recorded");
  auto* o_est = prune->add_option("--estimator", estimator_s, "grouped-cholesky | raw-diagonal");
  auto* o_tm = prune->add_flag("--timing", timing, "Record wall-clock time in the report");

  // verify
  auto* verify = app.add_subcommand("verify", "Re-check a report and pruned model against the invariant suite");
  std::string verify_report_path, verify_model, verify_manifest;
  std::uint64_t verify_seed = 0;
  verify->add_option("--report", verify_report_path, "report.json")->required();
  verify->add_option("--model", verify_model, "Pruned tensor file");
  verify->add_option("--manifest", verify_manifest, "Pruned manifest");
  verify->add_option("--seed", verify_seed, "Seed of the numeric self-check");

  // report
  auto* report = app.add_subcommand("report", "Print a report as CSV");
  std::string report_path, report_out;
  report->add_option("--report", report_path, "report.json")->required();
  report->add_option("--out", report_out, "CSV destination (default: stdout)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    namespace fs = std::filesystem;
    if (*gen) {
      spec.d_model = spec.n_head * spec.d_head;
      const ToyModel toy = gen_toy(spec, gen_seed);
      fs::create_directories(gen_out);
      write_tensor_file(toy.tensors, fs::path(gen_out) / "model.tsr");
      write_tensor_file(toy.calib, fs::path(gen_out) / "calib.tsr");
      write_manifest(toy.manifest, fs::path(gen_out) / "manifest.json");
      out << "wrote " << gen_out << "/{model.tsr,manifest.json,calib.tsr}\n";
      return kExitOk;
    }
    if (*prune) {
      PruneConfig cfg;
      if (!config_path.empty()) cli_detail::apply_config_file(cfg, cli_detail::read_json(config_path));
      if (o_var->count()) cfg.variant = cli_detail::parse_enum<RatioVariant>(variant_s, parse_variant, "variant");
      if (o_rf->count()) cfg.ratio_first = ratio_first;
      if (o_rl->count()) cfg.ratio_last = ratio_last;
      if (o_gt->count()) cfg.global_target = global_target;
      if (o_damp->count()) cfg.damping = damping;
      if (o_gs->count()) cfg.groups.start_size = group_start;
      if (o_gm->count()) cfg.groups.min_size = group_min;
      if (o_ref->count()) cfg.refresh = cli_detail::parse_enum<InverseRefresh>(refresh_s, cli_detail::parse_refresh, "refresh");
      if (o_cm->count()) cfg.calib_mode = cli_detail::parse_enum<CalibMode>(calib_mode_s, parse_calib_mode, "calib mode");
      if (o_est->count()) {
        cfg.estimator = cli_detail::parse_enum<HeadErrorEstimator>(estimator_s, cli_detail::parse_estimator, "estimator");
      }
      if (o_tm->count()) cfg.record_timing = timing;

      const TensorMap model = read_tensor_file(model_path);
      const ModelManifest manifest = read_manifest(manifest_path);
      const TensorMap calib = read_tensor_file(calib_path);
      const PruneOutcome res = prune_model(model, manifest, calib, cfg);
      fs::create_directories(prune_out);
      write_tensor_file(res.model, fs::path(prune_out) / "model.tsr");
      write_manifest(res.manifest, fs::path(prune_out) / "manifest.json");
      cli_detail::write_text(fs::path(prune_out) / "report.json", to_json(res.report).dump(2) + "\n");
      cli_detail::write_text(fs::path(prune_out) / "report.csv", report_csv(res.report));
      out << "pruned " << manifest.n_layers() << " layers; final output error " << res.report.final_output_error()
          << "\n";
      return kExitOk;
    }
    if (*verify) {
      const PruneReport r = report_from_json(cli_detail::read_json(verify_report_path));
      std::optional<TensorMap> m;
      std::optional<ModelManifest> mf;
      if (!verify_model.empty()) m = read_tensor_file(verify_model);
      if (!verify_manifest.empty()) mf = read_manifest(verify_manifest);
      std::vector<std::string> bad = verify_report(r, m ? &*m : nullptr, mf ? &*mf : nullptr);
      for (auto& s : numeric_self_check(verify_seed)) bad.push_back(std::move(s));
      for (const auto& s : bad) err << "violation: " << s << "\n";
      out << (bad.empty() ? "verify: ok\n" : "verify: FAILED\n");
      return bad.empty() ? kExitOk : kExitNumerical;
    }
    if (*report) {
      const std::string csv = report_csv(report_from_json(cli_detail::read_json(report_path)));
      if (report_out.empty()) {
        out << csv;
      } else {
        cli_detail::write_text(report_out, csv);
      }
      return kExitOk;
    }
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  err << app.help();
  return kExitUsage;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace obsprune
