#pragma once

#include "spcc/common.hpp"

#include <cstdint>
#include <vector>

namespace spcc {

/// Interleaved 63-bit key, 21 bits per axis. Within each bit triple x is the
/// most significant, so `key & 7` is the child index 4*bx + 2*by + bz.
using MortonKey = std::uint64_t;
using KeyList = std::vector<MortonKey>;

inline constexpr int kMaxDepth = 21;

namespace detail {
inline std::uint64_t spread3(std::uint64_t v) {
  v &= 0x1fffff;
  v = (v | (v << 32)) & 0x1f00000000ffffULL;
  v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
  v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
  v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
  v = (v | (v << 2)) & 0x1249249249249249ULL;
  return v;
}
inline std::uint32_t compact3(std::uint64_t v) {
  v &= 0x1249249249249249ULL;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
  v = (v ^ (v >> 32)) & 0x1fffffULL;
  return static_cast<std::uint32_t>(v);
}
}  // namespace detail

inline MortonKey morton_encode(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  return (detail::spread3(x) << 2) | (detail::spread3(y) << 1) | detail::spread3(z);
}

inline MortonKey morton_encode(const Coord& c) {
  return morton_encode(static_cast<std::uint32_t>(c.x()), static_cast<std::uint32_t>(c.y()),
                       static_cast<std::uint32_t>(c.z()));
}

inline Coord morton_decode(MortonKey key) {
  return Coord(static_cast<int>(detail::compact3(key >> 2)), static_cast<int>(detail::compact3(key >> 1)),
               static_cast<int>(detail::compact3(key)));
}

inline int child_index(MortonKey key) { return static_cast<int>(key & 7); }
inline MortonKey parent_key(MortonKey key) { return key >> 3; }

/// Offset of child `c` under the x-major child-bit convention.
inline Coord child_offset(int c) { return Coord((c >> 2) & 1, (c >> 1) & 1, c & 1); }

KeyList to_keys(const CoordList& coords);
CoordList to_coords(const KeyList& keys);

inline bool strictly_increasing(const KeyList& keys) {
  for (std::size_t i = 1; i < keys.size(); ++i)
    if (keys[i - 1] >= keys[i]) return false;
  return true;
}

/// Open-addressing key -> row index table for neighbor lookups.
class KeyIndex {
 public:
  KeyIndex() = default;
  explicit KeyIndex(const KeyList& keys);

  /// Row index of `key`, or -1.
  std::int32_t find(MortonKey key) const {
    if (slots_.empty()) return -1;
    std::size_t h = hash(key) & mask_;
    while (true) {
      const Slot& s = slots_[h];
      if (s.index < 0) return -1;
      if (s.key == key) return s.index;
      h = (h + 1) & mask_;
    }
  }
  bool contains(MortonKey key) const { return find(key) >= 0; }

 private:
  struct Slot {
    MortonKey key = 0;
    std::int32_t index = -1;
  };
  static std::size_t hash(MortonKey k) {
    k ^= k >> 31;
    k *= 0x7fb5d329728ea185ULL;
    k ^= k >> 27;
    k *= 0x81dadef4bc2dd44dULL;
    k ^= k >> 33;
    return static_cast<std::size_t>(k);
  }
  std::vector<Slot> slots_;
  std::size_t mask_ = 0;
};

}  // namespace spcc
