#pragma once

#include "spcc/io_quant.hpp"
#include "spcc/morton.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace spcc {

using CodeList = std::vector<std::uint8_t>;

/// Morton-ordered octree. Level 0 is the implicit root; level l holds the
/// occupied cells of the 2^l lattice. codes[l] has one byte per level-(l-1)
/// node describing which of its children exist at level l.
struct OctreeLevels {
  int depth = 0;
  std::vector<KeyList> keys;    ///< keys[l], l = 0..depth
  std::vector<CodeList> codes;  ///< codes[l], l = 1..depth (codes[0] unused)

  std::size_t node_count(int level) const { return keys.at(level).size(); }
  /// Occupancy codes of the nodes at `level` (children live at level + 1).
  const CodeList& codes_of(int level) const { return codes.at(level + 1); }
};

OctreeLevels build_octree(const QuantizedCloud& cloud);
OctreeLevels build_octree(const KeyList& keys, int depth);

/// Children of `parents` under `codes`, parents in order and children by
/// ascending child index. Preserves Morton order.
KeyList expand_children(const KeyList& parents, const CodeList& codes);

/// Sorted, deduplicated parent keys of a Morton-sorted key list.
KeyList downsample_keys(const KeyList& keys);

/// Occupancy codes of the parents of a Morton-sorted key list.
CodeList occupancy_codes(const KeyList& children);

/// Rebuilds the deepest level from the codes alone, validating popcounts.
QuantizedCloud reconstruct_points(const OctreeLevels& tree, const QuantTransform& transform);

std::array<bool, 8> occupancy_mask(std::uint8_t code);

struct HrcsLevel {
  int level = 0;
  std::size_t node_count = 0;
  double mean_occupied_neighbors = 0.0;
};
using HrcsStats = std::vector<HrcsLevel>;

/// Per-level node counts and mean occupied 26-neighborhood size.
HrcsStats hrcs_stats(const OctreeLevels& tree);

}  // namespace spcc
