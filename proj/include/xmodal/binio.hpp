// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/matrix.hpp"

namespace xmodal {

// Binary containers. All integers and floats are little-endian; payloads are
// IEEE-754 32-bit. Feature files ("XMFS") hold one utterance: header
// magic, version, l, k, D, then l*k*D floats layer-major then frame-major.
// Embedding files ("XMEV") hold one E-dim vector.

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError(path + ": truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32s(std::ostream& out, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

inline void read_f32s(std::istream& in, float* data, std::size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
  if (!in) throw FormatError(path + ": truncated payload");
}

inline void expect_magic(std::istream& in, const char* magic, const std::string& path) {
  char got[4];
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(path + ": bad magic (expected " + std::string(magic, 4) + ")");
  }
}

}  // namespace detail

struct FeatureFileHeader {
  std::uint32_t layer_count = 0;
  std::uint32_t frame_count = 0;
  std::uint32_t feature_dim = 0;
};

inline void write_feature_file(const std::string& path,
                               const std::vector<Matrix<float>>& layers) {
  if (layers.empty()) throw DimensionError("write_feature_file: no layers");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file: " + path);
  out.write("XMFS", 4);
  detail::write_u32(out, kFeatureFileVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(layers.size()));
  detail::write_u32(out, static_cast<std::uint32_t>(layers.front().rows()));
  detail::write_u32(out, static_cast<std::uint32_t>(layers.front().cols()));
  for (const auto& layer : layers) {
    if (!layer.same_shape(layers.front())) {
      throw DimensionError("write_feature_file: ragged layer shapes");
    }
    detail::write_f32s(out, layer.data(), layer.size());
  }
  if (!out) throw IoError("failed writing feature file: " + path);
}

inline std::vector<Matrix<float>> read_feature_file(const std::string& path,
                                                    FeatureFileHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path);
  detail::expect_magic(in, "XMFS", path);
  const std::uint32_t version = detail::read_u32(in, path);
  if (version != kFeatureFileVersion) {
    throw FormatError(path + ": unsupported feature file version " + std::to_string(version));
  }
  FeatureFileHeader h;
  h.layer_count = detail::read_u32(in, path);
  h.frame_count = detail::read_u32(in, path);
  h.feature_dim = detail::read_u32(in, path);
  if (h.layer_count < 1 || h.frame_count < 1 || h.feature_dim < 1) {
    throw FormatError(path + ": degenerate dimensions in header");
  }
  std::vector<Matrix<float>> layers;
  layers.reserve(h.layer_count);
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    Matrix<float> m(h.frame_count, h.feature_dim);
    detail::read_f32s(in, m.data(), m.size(), path);
    layers.push_back(std::move(m));
  }
  if (header_out) *header_out = h;
  return layers;
}

inline void write_embedding_file(const std::string& path, const std::vector<float>& values) {
  if (values.empty()) throw DimensionError("write_embedding_file: empty vector");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out.write("XMEV", 4);
  detail::write_u32(out, kEmbeddingFileVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(values.size()));
  detail::write_f32s(out, values.data(), values.size());
  if (!out) throw IoError("failed writing embedding file: " + path);
}

inline std::vector<float> read_embedding_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + path);
  detail::expect_magic(in, "XMEV", path);
  const std::uint32_t version = detail::read_u32(in, path);
  if (version != kEmbeddingFileVersion) {
    throw FormatError(path + ": unsupported embedding file version " + std::to_string(version));
  }
  const std::uint32_t dim = detail::read_u32(in, path);
  if (dim < 1) throw FormatError(path + ": degenerate dimension");
  std::vector<float> values(dim);
  detail::read_f32s(in, values.data(), dim, path);
  return values;
}

}  // namespace xmodal
