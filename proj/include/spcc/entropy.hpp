#pragma once

#include "spcc/common.hpp"
#include "spcc/morton.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace spcc {

using Bytes = std::vector<std::uint8_t>;

/// Cumulative bounds over occupancy symbols 1..255: symbol s owns [c[s-1], c[s]).
struct FixedCdf {
  std::array<std::uint32_t, kNumSymbols + 1> bounds{};

  std::uint32_t start(int symbol) const { return bounds[static_cast<std::size_t>(symbol - 1)]; }
  std::uint32_t mass(int symbol) const {
    return bounds[static_cast<std::size_t>(symbol)] - bounds[static_cast<std::size_t>(symbol - 1)];
  }
  /// Symbol s with c[s-1] <= u < c[s].
  int lookup(std::uint32_t u) const;
};

/// Prefix sums of a Q16 mass row; rejects rows not totalling 2^16 or with a zero mass.
FixedCdf cdf_from_fixed_probs(std::span<const std::int32_t> masses);

/// Carry-propagating range encoder: 32-bit range, byte renormalization below
/// 2^24, 4-byte flush.
class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t size, std::uint32_t total);
  void encode(const FixedCdf& cdf, int symbol) { encode(cdf.start(symbol), cdf.mass(symbol), 1u << 16); }
  /// Flushes and returns the stream. The encoder is spent afterwards.
  Bytes finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  bool leading_ = true;
  Bytes out_;
};

class RangeDecoder {
 public:
  /// With `lenient`, reads past the end yield zero bytes instead of throwing.
  explicit RangeDecoder(std::span<const std::uint8_t> bytes, bool lenient = false);

  /// Target value in [0, total); follow with consume().
  std::uint32_t decode_target(std::uint32_t total);
  void consume(std::uint32_t start, std::uint32_t size);
  int decode(const FixedCdf& cdf);

  std::size_t position() const { return pos_; }

 private:
  std::uint8_t next();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  bool lenient_;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
  std::uint32_t step_ = 1;
};

Bytes range_encode(std::span<const std::uint8_t> symbols, std::span<const FixedCdf> cdfs);

/// cdf_provider(i, decoded) supplies the i-th CDF after symbols 0..i-1.
using CdfProvider = std::function<const FixedCdf&(std::size_t, std::span<const std::uint8_t>)>;
std::vector<std::uint8_t> range_decode(std::span<const std::uint8_t> bytes, std::size_t n,
                                       const CdfProvider& cdf_provider);

/// Adaptive frequency table, counts start at 1 and are halved (rounding up)
/// once the total exceeds the threshold.
class AdaptiveFreqModel {
 public:
  static constexpr std::uint32_t kIncrement = 32;
  static constexpr std::uint32_t kRescaleThreshold = 1u << 15;

  explicit AdaptiveFreqModel(int alphabet = 256);

  void encode(RangeEncoder& enc, int symbol);
  int decode(RangeDecoder& dec);

  std::uint32_t total() const { return total_; }
  std::span<const std::uint32_t> counts() const { return counts_; }

 private:
  void update(int symbol);

  std::vector<std::uint32_t> counts_;
  std::uint32_t total_ = 0;
};

/// Byte-plane coding of lattice coordinates, one adaptive model per axis and plane.
Bytes encode_raw_coords(const KeyList& keys, int bits_per_axis);
KeyList decode_raw_coords(std::span<const std::uint8_t> bytes, std::size_t count, int bits_per_axis);

/// Total ideal code length in bits, sum of -log2(mass / 2^16).
double fixed_cross_entropy_bits(std::span<const std::uint8_t> symbols, std::span<const FixedCdf> cdfs);

}  // namespace spcc
