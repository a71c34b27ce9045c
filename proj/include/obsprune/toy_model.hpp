// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale transformer used to exercise the pruning pipeline. Each layer is
// a pre-norm residual block
//
//   h = x + Wo * Attn(RMSNorm(x; g_attn))
//   y = h + Wdown * (silu(Wgate * n) .* (Wup * n)),  n = RMSNorm(h; g_ffn)
//
// with causal softmax attention inside fixed-length calibration sequences.
// Activations are d_model x T matrices, one column per token.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "obsprune/errors.hpp"
#include "obsprune/head_pruner.hpp"
#include "obsprune/linalg.hpp"
#include "obsprune/tensorstore.hpp"

namespace obsprune {

inline constexpr const char* kCalibInputName = "calib.x0";

// mt19937_64 with a Box-Muller normal so streams do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = stddev * normal();
    return m;
  }

  std::uint64_t next_u64() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct ToyModelSpec {
  Index n_layers = 8;
  Index d_model = 32;
  Index n_head = 8;
  Index d_head = 4;
  Index d_ff = 96;
  Index seq_len = 32;
  Index n_seqs = 8;
  // Scale of the residual-branch output projections.
  double residual_gain = 1.0;

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_head < 1 || d_head < 1 || d_ff < 2 || seq_len < 1 || n_seqs < 1) {
      throw InvalidArgument("ToyModelSpec: all dimensions must be positive (d_ff >= 2)");
    }
    if (d_model != n_head * d_head) throw InvalidArgument("ToyModelSpec: d_model must equal n_head * d_head");
    if (!(residual_gain > 0.0)) throw InvalidArgument("ToyModelSpec: residual_gain must be positive");
  }
};

struct ToyModel {
  TensorMap tensors;
  ModelManifest manifest;
  TensorMap calib;  // holds kCalibInputName
};

inline std::string layer_tensor(Index l, const char* suffix) { return "layers." + std::to_string(l) + "." + suffix; }

inline ToyModel gen_toy(const ToyModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ToyModel out;
  out.manifest.seq_len = spec.seq_len;
  const Index d = spec.d_model, a = spec.n_head * spec.d_head, f = spec.d_ff;
  for (Index l = 0; l < spec.n_layers; ++l) {
    LayerEntry e;
    e.attn_out = layer_tensor(l, "attn.wo");
    e.attn_coupled = {layer_tensor(l, "attn.wq"), layer_tensor(l, "attn.wk"), layer_tensor(l, "attn.wv")};
    e.ffn_down = layer_tensor(l, "ffn.w_down");
    e.ffn_coupled = {layer_tensor(l, "ffn.w_gate"), layer_tensor(l, "ffn.w_up")};
    e.head_layout = {spec.n_head, spec.d_head};
    e.attn_norm = layer_tensor(l, "attn_norm");
    e.ffn_norm = layer_tensor(l, "ffn_norm");

    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    for (const auto& name : e.attn_coupled) out.tensors[name] = rng.normal_matrix(a, d, in_std);
    // Heads and channels carry unequal importance through log-normal scales.
    Matrix wo = rng.normal_matrix(d, a, spec.residual_gain / std::sqrt(static_cast<double>(a)));
    for (Index h = 0; h < spec.n_head; ++h) wo.middleCols(h * spec.d_head, spec.d_head) *= std::exp(0.5 * rng.normal());
    out.tensors[e.attn_out] = std::move(wo);
    for (const auto& name : e.ffn_coupled) out.tensors[name] = rng.normal_matrix(f, d, in_std);
    Matrix wd = rng.normal_matrix(d, f, spec.residual_gain / std::sqrt(static_cast<double>(f)));
    for (Index c = 0; c < f; ++c) wd.col(c) *= std::exp(0.5 * rng.normal());
    out.tensors[e.ffn_down] = std::move(wd);
    out.tensors[e.attn_norm] = (Matrix::Ones(1, d) + rng.normal_matrix(1, d, 0.1));
    out.tensors[e.ffn_norm] = (Matrix::Ones(1, d) + rng.normal_matrix(1, d, 0.1));
    out.manifest.layers.push_back(std::move(e));
  }

  // Anisotropic token embeddings: x_t = G * (sigma .* z_t) + mu.
  const Index t = spec.seq_len * spec.n_seqs;
  const Matrix g = rng.normal_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  Vector sigma(d);
  for (Index k = 0; k < d; ++k) sigma(k) = std::exp(-2.0 * static_cast<double>(k) / static_cast<double>(d));
  const Vector mu = rng.normal_matrix(d, 1, 0.3);
  Matrix z = rng.normal_matrix(d, t);
  Matrix x = g * (sigma.asDiagonal() * z);
  x.colwise() += mu;
  out.calib[kCalibInputName] = std::move(x);
  return out;
}

// Weights of one block, loaded through the manifest. Coupled lists are read as
// (q, k, v) and (gate, up).
struct LayerWeights {
  Matrix wq, wk, wv, wo, w_gate, w_up, w_down;
  Vector attn_norm, ffn_norm;
  HeadLayout layout;

  static LayerWeights load(const TensorMap& t, const LayerEntry& e) {
    if (e.attn_coupled.size() != 3 || e.ffn_coupled.size() != 2) {
      throw InvalidArgument("forward: layer needs attn_coupled = [q, k, v] and ffn_coupled = [gate, up]");
    }
    LayerWeights w;
    w.wq = require_tensor(t, e.attn_coupled[0]);
    w.wk = require_tensor(t, e.attn_coupled[1]);
    w.wv = require_tensor(t, e.attn_coupled[2]);
    w.wo = require_tensor(t, e.attn_out);
    w.w_gate = require_tensor(t, e.ffn_coupled[0]);
    w.w_up = require_tensor(t, e.ffn_coupled[1]);
    w.w_down = require_tensor(t, e.ffn_down);
    w.layout = e.head_layout;
    const Index d = w.wo.rows();
    w.attn_norm = e.attn_norm.empty() ? Vector::Ones(d) : Vector(require_tensor(t, e.attn_norm).reshaped());
    w.ffn_norm = e.ffn_norm.empty() ? Vector::Ones(d) : Vector(require_tensor(t, e.ffn_norm).reshaped());
    w.validate();
    return w;
  }

  void validate() const {
    const Index d = wo.rows(), a = wo.cols(), f = w_down.cols();
    layout.validate(a, "forward");
    auto need = [](bool ok, const char* what) {
      if (!ok) throw InvalidArgument(std::string("forward: shape mismatch in ") + what);
    };
    need(wq.rows() == a && wk.rows() == a && wv.rows() == a, "q/k/v rows");
    need(wq.cols() == d && wk.cols() == d && wv.cols() == d, "q/k/v columns");
    need(w_gate.rows() == f && w_up.rows() == f && w_gate.cols() == d && w_up.cols() == d, "gate/up");
    need(w_down.rows() == d, "down rows");
    need(attn_norm.size() == d && ffn_norm.size() == d, "norm gains");
  }
};

namespace detail {

// C = A * B, each entry summed over k in increasing order. Zero columns of A
// therefore leave results identical to slicing them away.
inline Matrix matmul(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Index t = 0; t < b.cols(); ++t)
    for (Index k = 0; k < a.cols(); ++k) {
      const double bk = b(k, t);
      for (Index i = 0; i < a.rows(); ++i) c(i, t) += a(i, k) * bk;
    }
  return c;
}

inline Matrix rms_norm(const Eigen::Ref<const Matrix>& x, const Vector& gain) {
  Matrix out(x.rows(), x.cols());
  for (Index t = 0; t < x.cols(); ++t) {
    const double ms = x.col(t).squaredNorm() / static_cast<double>(x.rows());
    const double inv = 1.0 / std::sqrt(ms + 1e-6);
    for (Index i = 0; i < x.rows(); ++i) out(i, t) = gain(i) * x(i, t) * inv;
  }
  return out;
}

}  // namespace detail

struct LayerForward {
  Matrix z;        // attention output before Wo (input of attn_out)
  Matrix h;        // residual stream after attention
  Matrix ffn_act;  // silu(gate) .* up (input of ffn_down)
  Matrix y;        // block output
};

inline Matrix attention_heads(const LayerWeights& w, const Eigen::Ref<const Matrix>& normed, Index seq_len) {
  const Index t_total = normed.cols();
  if (seq_len <= 0 || t_total % seq_len != 0) {
    throw InvalidArgument("forward: token count " + std::to_string(t_total) + " is not a multiple of seq_len " +
                          std::to_string(seq_len));
  }
  const Matrix q = detail::matmul(w.wq, normed);
  const Matrix k = detail::matmul(w.wk, normed);
  const Matrix v = detail::matmul(w.wv, normed);
  const Index dh = w.layout.d_head;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix z = Matrix::Zero(w.wq.rows(), t_total);
  std::vector<double> p(static_cast<std::size_t>(seq_len));
  for (Index hd = 0; hd < w.layout.n_head; ++hd) {
    const Index r0 = hd * dh;
    for (Index s0 = 0; s0 < t_total; s0 += seq_len) {
      for (Index i = 0; i < seq_len; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (Index c = 0; c < dh; ++c) dot += q(r0 + c, s0 + i) * k(r0 + c, s0 + j);
          p[static_cast<std::size_t>(j)] = dot * scale;
          mx = std::max(mx, p[static_cast<std::size_t>(j)]);
        }
        double den = 0.0;
        for (Index j = 0; j <= i; ++j) den += (p[static_cast<std::size_t>(j)] = std::exp(p[static_cast<std::size_t>(j)] - mx));
        for (Index j = 0; j <= i; ++j) {
          const double aij = p[static_cast<std::size_t>(j)] / den;
          for (Index c = 0; c < dh; ++c) z(r0 + c, s0 + i) += aij * v(r0 + c, s0 + j);
        }
      }
    }
  }
  return z;
}

inline LayerForward forward_layer(const LayerWeights& w, const Eigen::Ref<const Matrix>& x, Index seq_len) {
  w.validate();
  if (x.rows() != w.wo.rows()) throw InvalidArgument("forward: input has wrong feature count");
  LayerForward out;
  out.z = attention_heads(w, detail::rms_norm(x, w.attn_norm), seq_len);
  out.h = x + detail::matmul(w.wo, out.z);
  const Matrix n = detail::rms_norm(out.h, w.ffn_norm);
  const Matrix gate = detail::matmul(w.w_gate, n);
  const Matrix up = detail::matmul(w.w_up, n);
  out.ffn_act.resize(gate.rows(), gate.cols());
  for (Index j = 0; j < gate.cols(); ++j)
    for (Index i = 0; i < gate.rows(); ++i) {
      const double g = gate(i, j);
      out.ffn_act(i, j) = g / (1.0 + std::exp(-g)) * up(i, j);
    }
  out.y = out.h + detail::matmul(w.w_down, out.ffn_act);
  return out;
}

}  // namespace obsprune
