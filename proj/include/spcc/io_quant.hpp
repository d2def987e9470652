#pragma once

#include "spcc/common.hpp"
#include "spcc/morton.hpp"

#include <filesystem>

namespace spcc {

struct RawCloud {
  PointList points;
};

enum class PointFormat { KittiBin, PlyAscii, PlyBinary, Auto };

enum class QuantMode : std::uint8_t {
  BboxNorm = 0,   ///< 400 m cube centered at the origin mapped onto [0, 2^L - 1]
  ScalePosQ = 1,  ///< floor(p * scale) + offset, offset makes the minimum zero
};

struct QuantTransform {
  QuantMode mode = QuantMode::BboxNorm;
  double scale = 1.0;
  Coord offset = Coord::Zero();
  /// Octree depth. For ScalePosQ a value of 0 means "fit to the data".
  int precision = 16;

  bool operator==(const QuantTransform&) const = default;
};

/// Half-width of the BboxNorm cube, in meters.
inline constexpr double kBboxHalfExtent = 200.0;

struct QuantizedCloud {
  /// Strictly increasing Morton keys of the occupied lattice cells.
  KeyList keys;
  QuantTransform transform;
  /// Points clipped into the cube under BboxNorm.
  std::size_t clipped = 0;

  std::size_t size() const { return keys.size(); }
  CoordList coords() const { return to_coords(keys); }
};

RawCloud load_points(const std::filesystem::path& path, PointFormat format = PointFormat::Auto);
void save_points(const RawCloud& cloud, const std::filesystem::path& path, PointFormat format = PointFormat::Auto);

QuantizedCloud quantize_points(const RawCloud& cloud, const QuantTransform& transform);
RawCloud dequantize_points(const QuantizedCloud& cloud);

/// Builds a QuantizedCloud from arbitrary lattice coordinates (sorted, deduplicated).
QuantizedCloud make_quantized(const CoordList& coords, const QuantTransform& transform);
QuantizedCloud make_quantized(KeyList keys, const QuantTransform& transform);

}  // namespace spcc
