#pragma once

#include "spcc/io_quant.hpp"
#include "spcc/model.hpp"
#include "spcc/network.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace spcc {

inline constexpr std::uint16_t kBitstreamVersion = 1;

struct BitstreamHeader {
  std::uint16_t version = kBitstreamVersion;
  /// Produced by the float model; not portable across platforms.
  bool float_path = false;
  int depth = 0;
  int l_min = 0;
  int decision_level = 0;
  QuantTransform transform;
  ModelHash model_hash{};
  /// Node counts for levels raw_level()..depth.
  std::vector<std::uint32_t> node_counts;
  /// Raw-coordinate payload first, then one payload per coded level.
  std::vector<std::uint32_t> payload_lengths;

  int raw_level() const { return std::min(l_min, depth); }
  bool operator==(const BitstreamHeader&) const = default;
};

Bytes write_header(const BitstreamHeader& header);
/// Parses a header; `consumed` receives its byte length.
BitstreamHeader read_header(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

enum class Regime : std::uint8_t { Raw, Shallow, Deep };

struct LevelStat {
  int level = 0;  ///< depth of the nodes whose codes this payload carries
  Regime regime = Regime::Raw;
  std::size_t nodes = 0;
  std::size_t payload_bytes = 0;
  /// Ideal code length under the Q16 distributions actually used.
  double estimated_bits = 0.0;
};

struct CodecOptions {
  int workers = 1;
  CausalityTrace* trace = nullptr;
  std::vector<LevelStat>* level_stats = nullptr;
};

/// Decoded symbols per coded level, for diagnostics.
struct DecodeReport {
  std::vector<CodeList> codes;
  bool aborted = false;
  /// Deepest level whose keys were materialized.
  int deepest_level = 0;
  KeyList deepest_keys;
};

struct DecodeOptions {
  int workers = 1;
  CausalityTrace* trace = nullptr;
  /// Decoder-side +-epsilon logit perturbation (float path only; the integer
  /// runtime has no such hook).
  double logit_epsilon = 0.0;
  std::uint64_t perturb_seed = 0;
  /// Keep decoding through inconsistencies instead of raising. Decoding stops
  /// once a level holds more than 4x the node count recorded in the header.
  bool lenient = false;
  DecodeReport* report = nullptr;
};

Bytes encode(const QuantizedCloud& cloud, const IntegerModel& model, const CodecOptions& options = {});
Bytes encode(const QuantizedCloud& cloud, const FloatModel& model, const CodecOptions& options = {});

QuantizedCloud decode(std::span<const std::uint8_t> stream, const IntegerModel& model,
                      const DecodeOptions& options = {});
QuantizedCloud decode(std::span<const std::uint8_t> stream, const FloatModel& model,
                      const DecodeOptions& options = {});

/// Bits per input point, header included.
double bpp(std::size_t stream_bytes, std::size_t point_count);

}  // namespace spcc
