#include "spcc/octree.hpp"

#include <bit>

namespace spcc {

KeyList downsample_keys(const KeyList& keys) {
  KeyList parents;
  parents.reserve(keys.size());
  for (MortonKey k : keys) {
    const MortonKey p = parent_key(k);
    if (parents.empty() || parents.back() != p) parents.push_back(p);
  }
  return parents;
}

CodeList occupancy_codes(const KeyList& children) {
  CodeList codes;
  codes.reserve(children.size());
  MortonKey current = ~MortonKey{0};
  for (MortonKey k : children) {
    const MortonKey p = parent_key(k);
    if (codes.empty() || p != current) {
      codes.push_back(0);
      current = p;
    }
    codes.back() |= static_cast<std::uint8_t>(1u << child_index(k));
  }
  return codes;
}

OctreeLevels build_octree(const KeyList& keys, int depth) {
  require(!keys.empty(), ErrorCode::EmptyCloud, "cannot build an octree of an empty cloud");
  require(depth >= 1 && depth <= kMaxDepth, ErrorCode::InvalidArgument, "depth must be in [1, 21]");
  require(strictly_increasing(keys), ErrorCode::UnsortedCoords, "keys must be strictly Morton-increasing");
  require(keys.back() >> (3 * depth) == 0, ErrorCode::CoordinateOverflow, "key exceeds octree depth");
  OctreeLevels tree;
  tree.depth = depth;
  tree.keys.resize(depth + 1);
  tree.codes.resize(depth + 1);
  tree.keys[depth] = keys;
  for (int l = depth; l >= 1; --l) {
    tree.codes[l] = occupancy_codes(tree.keys[l]);
    tree.keys[l - 1] = downsample_keys(tree.keys[l]);
  }
  return tree;
}

OctreeLevels build_octree(const QuantizedCloud& cloud) { return build_octree(cloud.keys, cloud.transform.precision); }

KeyList expand_children(const KeyList& parents, const CodeList& codes) {
  require(parents.size() == codes.size(), ErrorCode::ShapeMismatch, "one code per parent required");
  KeyList children;
  std::size_t total = 0;
  for (auto c : codes) total += std::popcount(c);
  children.reserve(total);
  for (std::size_t i = 0; i < parents.size(); ++i) {
    require(codes[i] != 0, ErrorCode::InvalidOccupancy, "occupancy code 0");
    const MortonKey base = parents[i] << 3;
    for (int c = 0; c < 8; ++c)
      if ((codes[i] >> c) & 1) children.push_back(base | static_cast<MortonKey>(c));
  }
  return children;
}

QuantizedCloud reconstruct_points(const OctreeLevels& tree, const QuantTransform& transform) {
  require(tree.depth >= 1 && static_cast<int>(tree.codes.size()) == tree.depth + 1, ErrorCode::CorruptTree,
          "tree shape inconsistent with depth");
  KeyList current{0};
  for (int l = 1; l <= tree.depth; ++l) {
    const auto& codes = tree.codes[l];
    require(codes.size() == current.size(), ErrorCode::CorruptTree,
            "level " + std::to_string(l) + ": code count does not match parent count");
    if (static_cast<int>(tree.keys.size()) > l && !tree.keys[l].empty()) {
      std::size_t pop = 0;
      for (auto c : codes) pop += std::popcount(c);
      require(pop == tree.keys[l].size(), ErrorCode::CorruptTree,
              "level " + std::to_string(l) + ": popcount does not match node count");
    }
    try {
      current = expand_children(current, codes);
    } catch (const Error& e) {
      fail(ErrorCode::CorruptTree, e.what());
    }
  }
  QuantizedCloud q;
  q.keys = std::move(current);
  q.transform = transform;
  q.transform.precision = tree.depth;
  return q;
}

std::array<bool, 8> occupancy_mask(std::uint8_t code) {
  std::array<bool, 8> mask{};
  for (int c = 0; c < 8; ++c) mask[c] = ((code >> c) & 1) != 0;
  return mask;
}

HrcsStats hrcs_stats(const OctreeLevels& tree) {
  HrcsStats stats;
  for (int l = 1; l <= tree.depth; ++l) {
    const KeyList& keys = tree.keys[l];
    const KeyIndex index(keys);
    const std::int64_t hi = (std::int64_t{1} << l) - 1;
    std::uint64_t total = 0;
    for (MortonKey k : keys) {
      const Coord c = morton_decode(k);
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dz = -1; dz <= 1; ++dz) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const Coord n = c + Coord(dx, dy, dz);
            if (n.minCoeff() < 0 || n.maxCoeff() > hi) continue;
            total += index.contains(morton_encode(n)) ? 1 : 0;
          }
    }
    stats.push_back({l, keys.size(), keys.empty() ? 0.0 : static_cast<double>(total) / keys.size()});
  }
  return stats;
}

}  // namespace spcc
