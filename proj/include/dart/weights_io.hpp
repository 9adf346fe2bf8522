#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dart/error.hpp"
#include "dart/model.hpp"

// Weight file layout:
//   "DARTW1"
//   8 x uint32 LE: layers, hidden, ffn, heads, kv_groups, head_dim, vocab, max_seq
//   embed (vocab x d)
//   per layer: W_Q[h] ..., W_K[g] ..., W_V[g] ..., W_O, W_up, W_gate, W_down
//   unembed (d x vocab)
// Every matrix is row-major float32 LE.

namespace dart {

inline constexpr std::array<char, 6> kWeightMagic{'D', 'A', 'R', 'T', 'W', '1'};

inline std::uint64_t weight_file_size(const ModelConfig& c) {
  const std::uint64_t d = c.hidden_dim, m = c.ffn_dim, dh = c.head_dim;
  const std::uint64_t per_layer = c.num_heads * d * dh + 2ull * c.num_kv_groups * d * dh + c.num_heads * dh * d + 3 * d * m;
  const std::uint64_t floats = 2ull * c.vocab_size * d + c.num_layers * per_layer;
  return kWeightMagic.size() + 8 * sizeof(std::uint32_t) + 4 * floats;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("weight file truncated in header");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
  for (float f : m.data()) put_u32(os, std::bit_cast<std::uint32_t>(f));
}

inline Matrix get_matrix(std::istream& is, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (auto& f : m.data()) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("weight file truncated in matrix data");
    f = std::bit_cast<float>(std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
                             std::uint32_t{b[3]} << 24);
    if (!std::isfinite(f)) throw FormatError("weight file contains a non-finite value");
  }
  return m;
}

}  // namespace detail

inline void write_weights(std::ostream& os, const ModelWeights& w) {
  const auto& c = w.config;
  os.write(kWeightMagic.data(), kWeightMagic.size());
  for (std::uint32_t v : {c.num_layers, c.hidden_dim, c.ffn_dim, c.num_heads, c.num_kv_groups, c.head_dim, c.vocab_size,
                          c.max_seq})
    detail::put_u32(os, v);
  detail::put_matrix(os, w.embed);
  for (const auto& layer : w.layers) {
    for (const auto& m : layer.w_q) detail::put_matrix(os, m);
    for (const auto& m : layer.w_k) detail::put_matrix(os, m);
    for (const auto& m : layer.w_v) detail::put_matrix(os, m);
    detail::put_matrix(os, layer.w_o);
    detail::put_matrix(os, layer.w_up);
    detail::put_matrix(os, layer.w_gate);
    detail::put_matrix(os, layer.w_down);
  }
  detail::put_matrix(os, w.unembed);
}

inline ModelWeights read_weights(std::istream& is) {
  std::array<char, 6> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kWeightMagic) throw FormatError("not a DARTW1 weight file");
  ModelWeights w;
  auto& c = w.config;
  c.num_layers = detail::get_u32(is);
  c.hidden_dim = detail::get_u32(is);
  c.ffn_dim = detail::get_u32(is);
  c.num_heads = detail::get_u32(is);
  c.num_kv_groups = detail::get_u32(is);
  c.head_dim = detail::get_u32(is);
  c.vocab_size = detail::get_u32(is);
  c.max_seq = detail::get_u32(is);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weight file header: ") + e.what());
  }
  const std::size_t d = c.hidden_dim, m = c.ffn_dim, dh = c.head_dim;
  w.embed = detail::get_matrix(is, c.vocab_size, d);
  w.layers.resize(c.num_layers);
  for (auto& layer : w.layers) {
    for (std::uint32_t h = 0; h < c.num_heads; ++h) layer.w_q.push_back(detail::get_matrix(is, d, dh));
    for (std::uint32_t g = 0; g < c.num_kv_groups; ++g) layer.w_k.push_back(detail::get_matrix(is, d, dh));
    for (std::uint32_t g = 0; g < c.num_kv_groups; ++g) layer.w_v.push_back(detail::get_matrix(is, d, dh));
    layer.w_o = detail::get_matrix(is, c.num_heads * dh, d);
    layer.w_up = detail::get_matrix(is, d, m);
    layer.w_gate = detail::get_matrix(is, d, m);
    layer.w_down = detail::get_matrix(is, m, d);
  }
  w.unembed = detail::get_matrix(is, d, c.vocab_size);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("weight file has trailing bytes");
  return w;
}

inline void save_weights(const std::string& path, const ModelWeights& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open weight file for writing: " + path);
  write_weights(os, w);
  if (!os) throw ConfigError("failed writing weight file: " + path);
}

inline ModelWeights load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open weight file: " + path);
  return read_weights(is);
}

}  // namespace dart
