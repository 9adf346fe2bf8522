#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dart/error.hpp"

namespace dart {

/// Binary keep-mask over the FFN neurons of one layer.
struct NeuronMask {
  std::size_t layer = 0;
  std::vector<std::uint8_t> bits;  // 1 = kept
  std::size_t k = 0;

  static NeuronMask dense(std::size_t layer, std::size_t m) {
    return {layer, std::vector<std::uint8_t>(m, 1), m};
  }

  std::size_t size() const { return bits.size(); }
  bool kept(std::size_t i) const { return bits[i] != 0; }
  double density() const { return bits.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(bits.size()); }

  bool valid() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1})) == k &&
           std::all_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b <= 1; });
  }

  /// Kept neuron indices in increasing order.
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) out.push_back(i);
    return out;
  }

  friend bool operator==(const NeuronMask&, const NeuronMask&) = default;
};

using MaskSet = std::vector<NeuronMask>;

/// Bit-packed hex encoding: neuron i lives in byte i/8, bit i%8 (LSB first).
inline std::string pack_mask_hex(const NeuronMask& mask) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  const std::size_t nbytes = (mask.size() + 7) / 8;
  out.reserve(nbytes * 2);
  for (std::size_t b = 0; b < nbytes; ++b) {
    unsigned byte = 0;
    for (std::size_t bit = 0; bit < 8 && b * 8 + bit < mask.size(); ++bit)
      if (mask.bits[b * 8 + bit]) byte |= 1u << bit;
    out.push_back(kHex[byte >> 4]);
    out.push_back(kHex[byte & 0xf]);
  }
  return out;
}

inline NeuronMask unpack_mask_hex(const std::string& hex, std::size_t layer, std::size_t m) {
  if (hex.size() != 2 * ((m + 7) / 8)) throw FormatError("mask hex length does not match neuron count");
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    throw FormatError("mask hex: invalid digit");
  };
  NeuronMask mask{layer, std::vector<std::uint8_t>(m, 0), 0};
  for (std::size_t i = 0; i < m; ++i) {
    const unsigned byte = nibble(hex[2 * (i / 8)]) << 4 | nibble(hex[2 * (i / 8) + 1]);
    if (byte >> (i % 8) & 1u) {
      mask.bits[i] = 1;
      ++mask.k;
    }
  }
  return mask;
}

}  // namespace dart
