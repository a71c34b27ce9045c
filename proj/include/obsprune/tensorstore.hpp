// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor container:
//
//   bytes [0, 8)      magic "OBSLIMV1"
//   bytes [8, 16)     header length N, unsigned 64-bit little endian
//   bytes [16, 16+N)  JSON object {name: {dtype, shape: [rows, cols],
//                                         byte_offset, byte_len}}
//   remainder         payload; offsets are relative to its first byte and
//                     elements are little-endian, row-major.
//
// All matrices are held as f64 in memory; f32 tensors are widened on load.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "obsprune/errors.hpp"
#include "obsprune/head_pruner.hpp"
#include "obsprune/linalg.hpp"

namespace obsprune {

using TensorMap = std::map<std::string, Matrix>;

inline constexpr std::string_view kTensorMagic = "OBSLIMV1";

enum class Dtype { f32, f64 };

inline std::size_t element_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }
inline std::string_view to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

namespace detail {

inline void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorFileError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw TensorFileError("read failure on " + path.string());
  return bytes;
}

inline void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorFileError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TensorFileError("write failure on " + path.string());
}

}  // namespace detail

// Serializes a tensor map to bytes. Names are stored in sorted order, so equal
// inputs always give identical bytes.
inline std::vector<unsigned char> encode_tensor_file(const TensorMap& tensors, Dtype dtype = Dtype::f64) {
  nlohmann::json header = nlohmann::json::object();
  std::vector<unsigned char> payload;
  for (const auto& [name, m] : tensors) {
    if (!m.allFinite()) throw InvalidArgument("tensor '" + name + "' has non-finite values");
    const std::size_t offset = payload.size();
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        if (dtype == Dtype::f64) {
          detail::put_u64_le(payload, std::bit_cast<std::uint64_t>(m(r, c)));
        } else {
          const auto f = static_cast<float>(m(r, c));
          if (!std::isfinite(f)) throw InvalidArgument("tensor '" + name + "' overflows f32");
          detail::put_u32_le(payload, std::bit_cast<std::uint32_t>(f));
        }
      }
    }
    header[name] = {{"dtype", to_string(dtype)},
                    {"shape", {m.rows(), m.cols()}},
                    {"byte_offset", offset},
                    {"byte_len", payload.size() - offset}};
  }
  const std::string text = header.dump();
  std::vector<unsigned char> out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline TensorMap decode_tensor_file(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kTensorMagic.size() ||
      std::memcmp(bytes.data(), kTensorMagic.data(), kTensorMagic.size()) != 0) {
    throw TensorFileError("bad magic");
  }
  if (bytes.size() < 16) throw TensorFileError("header/payload length mismatch: truncated header length");
  const std::uint64_t header_len = detail::get_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw TensorFileError("header/payload length mismatch: header overruns file");
  const auto* hbeg = reinterpret_cast<const char*>(bytes.data() + 16);
  const std::string_view text(hbeg, static_cast<std::size_t>(header_len));
  const unsigned char* payload = bytes.data() + 16 + header_len;
  const std::uint64_t payload_len = bytes.size() - 16 - header_len;

  std::set<std::string> seen;
  bool duplicate = false;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text, [&](int depth, nlohmann::json::parse_event_t ev, nlohmann::json& j) {
      if (ev == nlohmann::json::parse_event_t::key && depth == 1 && !seen.insert(j.get<std::string>()).second) {
        duplicate = true;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw TensorFileError(std::string("malformed header: ") + e.what());
  }
  if (duplicate) throw TensorFileError("duplicate tensor name in header");
  if (!header.is_object()) throw TensorFileError("malformed header: expected an object");

  struct Extent {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Extent> extents;
  TensorMap out;
  for (const auto& [name, info] : header.items()) {
    Dtype dtype;
    std::uint64_t rows = 0, cols = 0, offset = 0, len = 0;
    try {
      const std::string dt = info.at("dtype").get<std::string>();
      if (dt == "f64") {
        dtype = Dtype::f64;
      } else if (dt == "f32") {
        dtype = Dtype::f32;
      } else {
        throw TensorFileError("unknown dtype '" + dt + "' for tensor '" + name + "'");
      }
      const auto& shape = info.at("shape");
      if (!shape.is_array() || shape.size() != 2) throw TensorFileError("tensor '" + name + "': shape must be [rows, cols]");
      rows = shape[0].get<std::uint64_t>();
      cols = shape[1].get<std::uint64_t>();
      offset = info.at("byte_offset").get<std::uint64_t>();
      len = info.at("byte_len").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw TensorFileError("malformed header entry '" + name + "': " + e.what());
    }
    const std::uint64_t esz = element_size(dtype);
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw TensorFileError("tensor '" + name + "': shape too large");
    if (rows * cols * esz != len) throw TensorFileError("header/payload length mismatch for tensor '" + name + "'");
    if (offset > payload_len || len > payload_len - offset) throw TensorFileError("payload bounds: tensor '" + name + "'");
    extents.push_back({offset, offset + len, name});

    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    const unsigned char* p = payload + offset;
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        if (dtype == Dtype::f64) {
          m(r, c) = std::bit_cast<double>(detail::get_u64_le(p));
          p += 8;
        } else {
          m(r, c) = static_cast<double>(std::bit_cast<float>(detail::get_u32_le(p)));
          p += 4;
        }
      }
    }
    out.emplace(name, std::move(m));
  }
  std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
  std::uint64_t covered = 0;
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (i > 0 && extents[i].begin < extents[i - 1].end) {
      throw TensorFileError("payload bounds: tensors '" + extents[i - 1].name + "' and '" + extents[i].name + "' overlap");
    }
    covered = std::max(covered, extents[i].end);
  }
  if (covered != payload_len) throw TensorFileError("header/payload length mismatch: trailing payload bytes");
  return out;
}

inline void write_tensor_file(const TensorMap& tensors, const std::filesystem::path& path, Dtype dtype = Dtype::f64) {
  detail::write_all(path, encode_tensor_file(tensors, dtype));
}

inline TensorMap read_tensor_file(const std::filesystem::path& path) { return decode_tensor_file(detail::read_all(path)); }

inline const Matrix& require_tensor(const TensorMap& tensors, const std::string& name) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidArgument("tensor '" + name + "' not found");
  return it->second;
}

// ---------------------------------------------------------------------------
// Model manifest

struct LayerEntry {
  std::string attn_out;
  std::vector<std::string> attn_coupled;  // rows follow attn_out columns (q, k, v)
  std::string ffn_down;
  std::vector<std::string> ffn_coupled;   // rows follow ffn_down columns (gate, up)
  HeadLayout head_layout;
  std::string attn_norm;                  // optional 1 x d_model gains
  std::string ffn_norm;
  std::string attn_activations;           // optional recorded X for attn_out
  std::string ffn_activations;            // optional recorded X for ffn_down
};

struct ModelManifest {
  std::string architecture = "prenorm-gated";
  Index seq_len = 0;  // calibration sequence length for the causal forward
  std::vector<LayerEntry> layers;

  Index n_layers() const noexcept { return static_cast<Index>(layers.size()); }

  // Checks tensor presence and the anchor/coupled shape rules.
  void validate(const TensorMap& tensors) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LayerEntry& e = layers[l];
      const std::string where = "layer " + std::to_string(l) + ": ";
      const Matrix& wo = require_tensor(tensors, e.attn_out);
      if (wo.cols() != e.head_layout.columns() || e.head_layout.n_head <= 0 || e.head_layout.d_head <= 0) {
        throw InvalidArgument(where + "attn_out '" + e.attn_out + "' has " + std::to_string(wo.cols()) +
                              " columns, head layout needs " + std::to_string(e.head_layout.columns()));
      }
      for (const auto& c : e.attn_coupled) {
        if (require_tensor(tensors, c).rows() != wo.cols()) {
          throw InvalidArgument(where + "coupled tensor '" + c + "' row count != attn_out column count");
        }
      }
      const Matrix& wd = require_tensor(tensors, e.ffn_down);
      for (const auto& c : e.ffn_coupled) {
        if (require_tensor(tensors, c).rows() != wd.cols()) {
          throw InvalidArgument(where + "coupled tensor '" + c + "' row count != ffn_down column count");
        }
      }
    }
  }
};

inline nlohmann::json to_json(const ModelManifest& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& e : m.layers) {
    nlohmann::json j = {{"attn_out", e.attn_out},
                        {"attn_coupled", e.attn_coupled},
                        {"ffn_down", e.ffn_down},
                        {"ffn_coupled", e.ffn_coupled},
                        {"head_layout", {{"n_head", e.head_layout.n_head}, {"d_head", e.head_layout.d_head}}}};
    if (!e.attn_norm.empty()) j["attn_norm"] = e.attn_norm;
    if (!e.ffn_norm.empty()) j["ffn_norm"] = e.ffn_norm;
    if (!e.attn_activations.empty() || !e.ffn_activations.empty()) {
      j["activations"] = {{"attn", e.attn_activations}, {"ffn", e.ffn_activations}};
    }
    layers.push_back(std::move(j));
  }
  return {{"architecture", m.architecture},
          {"n_layers", m.layers.size()},
          {"seq_len", m.seq_len},
          {"layers", std::move(layers)}};
}

inline ModelManifest manifest_from_json(const nlohmann::json& j) {
  ModelManifest m;
  try {
    m.architecture = j.value("architecture", std::string("prenorm-gated"));
    m.seq_len = j.value("seq_len", Index{0});
    const auto n = j.at("n_layers").get<std::size_t>();
    const auto& layers = j.at("layers");
    if (layers.size() != n) throw InvalidArgument("manifest: n_layers does not match the layer list");
    for (const auto& l : layers) {
      LayerEntry e;
      e.attn_out = l.at("attn_out").get<std::string>();
      e.attn_coupled = l.value("attn_coupled", std::vector<std::string>{});
      e.ffn_down = l.at("ffn_down").get<std::string>();
      e.ffn_coupled = l.value("ffn_coupled", std::vector<std::string>{});
      e.head_layout.n_head = l.at("head_layout").at("n_head").get<Index>();
      e.head_layout.d_head = l.at("head_layout").at("d_head").get<Index>();
      e.attn_norm = l.value("attn_norm", std::string{});
      e.ffn_norm = l.value("ffn_norm", std::string{});
      if (l.contains("activations")) {
        e.attn_activations = l["activations"].value("attn", std::string{});
        e.ffn_activations = l["activations"].value("ffn", std::string{});
      }
      m.layers.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline void write_manifest(const ModelManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  out << to_json(m).dump(2) << '\n';
}

inline ModelManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open manifest " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace obsprune
