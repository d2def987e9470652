#pragma once

#include "spcc/common.hpp"
#include "spcc/fixed_point.hpp"
#include "spcc/octree.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spcc {

using ModelHash = std::array<std::uint8_t, 8>;
using Bytes = std::vector<std::uint8_t>;

/// First 8 bytes of SHA-256.
ModelHash content_hash(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

struct ModelConfig {
  int channels = 32;
  int resblock_depth = 2;
  /// Decision level t = depth - t_offset.
  int t_offset = 4;
  /// Shallowest neurally coded level; coordinates at this level are raw-coded.
  int l_min = 8;
  /// Octree depth L the per-level weights were built for.
  int depth = 12;

  int decision_level() const { return depth - t_offset; }
  /// Effective raw-coded level; clouds shallower than l_min are raw-coded whole.
  int raw_level() const { return std::min(l_min, depth); }
  bool is_deep(int level) const { return level > decision_level(); }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Layer names are hierarchical ("d9.res.conv0.w"). Coded levels d run over
/// [raw_level(), depth - 1]; the block for level d produces the occupancy
/// distribution of the level-d nodes.
namespace layer_names {
std::string level_prefix(int level);
}

struct FloatModel {
  ModelConfig config;
  std::map<std::string, MatrixF> tensors;

  const MatrixF& at(const std::string& name) const;
  MatrixF& at(const std::string& name);
};

enum class LayerKind : std::uint8_t {
  Table = 0,   ///< lookup rows (embeddings, seed)
  Linear = 1,  ///< dense or sparse-conv weights, bias, one output requant
  PRelu = 2,   ///< per-channel slope requants
  Add = 3,     ///< two input rescales sharing one shift
  Concat = 4,  ///< per-part rescales into a common grid
};

struct IntLayer {
  LayerKind kind = LayerKind::Linear;
  MatrixI weights;  ///< int8 range
  RowVector<std::int32_t> bias;
  std::vector<RequantParams> requant;
  QuantParams input;
  QuantParams output;

  bool operator==(const IntLayer& o) const {
    return kind == o.kind && weights == o.weights && bias == o.bias && requant == o.requant && input == o.input &&
           output == o.output;
  }
};

struct IntegerModel {
  ModelConfig config;
  std::map<std::string, IntLayer> layers;
  ExpLut lut;
  ModelHash hash{};

  const IntLayer& at(const std::string& name) const;
};

FloatModel read_float_model(const std::filesystem::path& path);
void write_float_model(const FloatModel& model, const std::filesystem::path& path);
Bytes serialize_float_model(const FloatModel& model);
FloatModel parse_float_model(std::span<const std::uint8_t> bytes);
ModelHash float_model_hash(const FloatModel& model);

IntegerModel read_integer_model(const std::filesystem::path& path);
void write_integer_model(const IntegerModel& model, const std::filesystem::path& path);
/// Serialized bytes; the trailing 8 bytes are the content hash.
Bytes serialize_integer_model(const IntegerModel& model);
IntegerModel parse_integer_model(std::span<const std::uint8_t> bytes);

/// Recomputes `model.hash` from its serialized content.
void stamp_hash(IntegerModel& model);

/// Reads the 4-byte magic of a model file ("PCWF" or "PCWQ").
std::string peek_magic(const std::filesystem::path& path);

struct WeightGenOptions {
  std::uint64_t seed = 1;
  float gain = 1.0f;
  float output_gain = 0.25f;
  float prelu_slope = 0.25f;
};

/// Deterministic pseudorandom weights for every layer the config implies.
FloatModel generate_float_model(const ModelConfig& config, const WeightGenOptions& options = {});

/// Sets each predictor's output bias to the log of the smoothed per-level
/// occupancy-code frequencies observed in `trees`.
void fit_output_prior(FloatModel& model, const std::vector<OctreeLevels>& trees);

}  // namespace spcc
