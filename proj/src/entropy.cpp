#include "spcc/entropy.hpp"

#include <algorithm>
#include <cmath>

namespace spcc {

int FixedCdf::lookup(std::uint32_t u) const {
  // first bound strictly greater than u
  const auto it = std::upper_bound(bounds.begin() + 1, bounds.end(), u);
  return static_cast<int>(it - bounds.begin());
}

FixedCdf cdf_from_fixed_probs(std::span<const std::int32_t> masses) {
  require(masses.size() == static_cast<std::size_t>(kNumSymbols), ErrorCode::InvalidMass, "expected 255 masses");
  FixedCdf cdf;
  std::uint32_t acc = 0;
  for (int s = 0; s < kNumSymbols; ++s) {
    require(masses[static_cast<std::size_t>(s)] >= 1, ErrorCode::InvalidMass, "every symbol needs mass >= 1");
    acc += static_cast<std::uint32_t>(masses[static_cast<std::size_t>(s)]);
    cdf.bounds[static_cast<std::size_t>(s + 1)] = acc;
  }
  require(acc == (1u << 16), ErrorCode::InvalidMass, "masses must total 2^16");
  return cdf;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t size, std::uint32_t total) {
  const std::uint32_t r = range_ / total;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * size;
  while (range_ < (1u << 24)) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t byte = cache_;
    do {
      // the very first pending byte is a placeholder that never receives a carry
      if (leading_) {
        leading_ = false;
      } else {
        out_.push_back(static_cast<std::uint8_t>(byte + carry));
      }
      byte = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++pending_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

Bytes RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes, bool lenient) : bytes_(bytes), lenient_(lenient) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
}

std::uint8_t RangeDecoder::next() {
  if (pos_ < bytes_.size()) return bytes_[pos_++];
  require(lenient_, ErrorCode::TruncatedStream, "range decoder ran past end of payload");
  ++pos_;
  return 0;
}

std::uint32_t RangeDecoder::decode_target(std::uint32_t total) {
  step_ = range_ / total;
  return std::min(code_ / step_, total - 1);
}

void RangeDecoder::consume(std::uint32_t start, std::uint32_t size) {
  code_ -= step_ * start;
  range_ = step_ * size;
  while (range_ < (1u << 24)) {
    code_ = (code_ << 8) | next();
    range_ <<= 8;
  }
}

int RangeDecoder::decode(const FixedCdf& cdf) {
  const int s = cdf.lookup(decode_target(1u << 16));
  consume(cdf.start(s), cdf.mass(s));
  return s;
}

Bytes range_encode(std::span<const std::uint8_t> symbols, std::span<const FixedCdf> cdfs) {
  require(symbols.size() == cdfs.size(), ErrorCode::ShapeMismatch, "one CDF per symbol");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    require(symbols[i] >= 1, ErrorCode::InvalidOccupancy, "symbol 0 is not codable");
    enc.encode(cdfs[i], symbols[i]);
  }
  return enc.finish();
}

std::vector<std::uint8_t> range_decode(std::span<const std::uint8_t> bytes, std::size_t n,
                                       const CdfProvider& cdf_provider) {
  std::vector<std::uint8_t> out;
  out.reserve(n);
  if (n == 0) return out;
  RangeDecoder dec(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    const FixedCdf& cdf = cdf_provider(i, std::span<const std::uint8_t>(out.data(), out.size()));
    out.push_back(static_cast<std::uint8_t>(dec.decode(cdf)));
  }
  return out;
}

AdaptiveFreqModel::AdaptiveFreqModel(int alphabet) : counts_(static_cast<std::size_t>(alphabet), 1u) {
  require(alphabet >= 2 && alphabet <= 4096, ErrorCode::InvalidArgument, "alphabet size out of range");
  total_ = static_cast<std::uint32_t>(alphabet);
}

void AdaptiveFreqModel::update(int symbol) {
  counts_[static_cast<std::size_t>(symbol)] += kIncrement;
  total_ += kIncrement;
  if (total_ > kRescaleThreshold) {
    total_ = 0;
    for (auto& c : counts_) {
      c = (c + 1) / 2;
      total_ += c;
    }
  }
}

void AdaptiveFreqModel::encode(RangeEncoder& enc, int symbol) {
  require(symbol >= 0 && symbol < static_cast<int>(counts_.size()), ErrorCode::OutOfRange, "symbol out of range");
  std::uint32_t start = 0;
  for (int s = 0; s < symbol; ++s) start += counts_[static_cast<std::size_t>(s)];
  enc.encode(start, counts_[static_cast<std::size_t>(symbol)], total_);
  update(symbol);
}

int AdaptiveFreqModel::decode(RangeDecoder& dec) {
  const std::uint32_t target = dec.decode_target(total_);
  std::uint32_t start = 0;
  int s = 0;
  while (start + counts_[static_cast<std::size_t>(s)] <= target) start += counts_[static_cast<std::size_t>(s++)];
  dec.consume(start, counts_[static_cast<std::size_t>(s)]);
  update(s);
  return s;
}

namespace {
int plane_count(int bits_per_axis) { return (bits_per_axis + 7) / 8; }
}  // namespace

Bytes encode_raw_coords(const KeyList& keys, int bits_per_axis) {
  require(bits_per_axis >= 1 && bits_per_axis <= kMaxDepth, ErrorCode::InvalidArgument, "bits per axis in [1, 21]");
  const int planes = plane_count(bits_per_axis);
  std::vector<AdaptiveFreqModel> models(static_cast<std::size_t>(3 * planes));
  RangeEncoder enc;
  for (MortonKey k : keys) {
    const Coord c = morton_decode(k);
    require(c.maxCoeff() < (1 << bits_per_axis), ErrorCode::OutOfRange, "coordinate exceeds bits per axis");
    for (int a = 0; a < 3; ++a)
      for (int p = planes - 1; p >= 0; --p)
        models[static_cast<std::size_t>(a * planes + p)].encode(enc, (c[a] >> (8 * p)) & 0xFF);
  }
  return enc.finish();
}

KeyList decode_raw_coords(std::span<const std::uint8_t> bytes, std::size_t count, int bits_per_axis) {
  require(bits_per_axis >= 1 && bits_per_axis <= kMaxDepth, ErrorCode::InvalidArgument, "bits per axis in [1, 21]");
  const int planes = plane_count(bits_per_axis);
  std::vector<AdaptiveFreqModel> models(static_cast<std::size_t>(3 * planes));
  RangeDecoder dec(bytes);
  KeyList keys;
  keys.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Coord c = Coord::Zero();
    for (int a = 0; a < 3; ++a)
      for (int p = planes - 1; p >= 0; --p)
        c[a] |= models[static_cast<std::size_t>(a * planes + p)].decode(dec) << (8 * p);
    require(c.maxCoeff() < (1 << bits_per_axis), ErrorCode::CorruptStream, "decoded coordinate out of range");
    keys.push_back(morton_encode(c));
  }
  return keys;
}

double fixed_cross_entropy_bits(std::span<const std::uint8_t> symbols, std::span<const FixedCdf> cdfs) {
  require(symbols.size() == cdfs.size(), ErrorCode::ShapeMismatch, "one CDF per symbol");
  double bits = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i)
    bits -= std::log2(static_cast<double>(cdfs[i].mass(symbols[i])) / 65536.0);
  return bits;
}

}  // namespace spcc
