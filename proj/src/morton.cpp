#include "spcc/morton.hpp"

#include <algorithm>
#include <bit>

namespace spcc {

KeyList to_keys(const CoordList& coords) {
  KeyList keys;
  keys.reserve(coords.size());
  for (const auto& c : coords) keys.push_back(morton_encode(c));
  return keys;
}

CoordList to_coords(const KeyList& keys) {
  CoordList coords;
  coords.reserve(keys.size());
  for (MortonKey k : keys) coords.push_back(morton_decode(k));
  return coords;
}

KeyIndex::KeyIndex(const KeyList& keys) {
  const std::size_t cap = std::bit_ceil(std::max<std::size_t>(16, keys.size() * 2));
  slots_.assign(cap, Slot{});
  mask_ = cap - 1;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::size_t h = hash(keys[i]) & mask_;
    while (slots_[h].index >= 0 && slots_[h].key != keys[i]) h = (h + 1) & mask_;
    slots_[h] = Slot{keys[i], static_cast<std::int32_t>(i)};
  }
}

}  // namespace spcc
