#include "spcc/sparse.hpp"

namespace spcc {

KernelMap build_kernel_map(const KeyList& in_keys, const KeyList& out_keys, Kernel kernel) {
  require(strictly_increasing(in_keys) && strictly_increasing(out_keys), ErrorCode::UnsortedCoords,
          "kernel map inputs must be Morton-sorted");
  KernelMap map;
  map.kernel = kernel;
  map.n_in = in_keys.size();
  map.n_out = out_keys.size();
  const int taps = kernel_volume(kernel);
  map.in.resize(taps);
  map.out.resize(taps);

  if (kernel == Kernel::K3S1) {
    const KeyIndex index(in_keys);
    for (std::size_t j = 0; j < out_keys.size(); ++j) {
      const Coord c = morton_decode(out_keys[j]);
      for (int o = 0; o < 27; ++o) {
        const Coord n = c + kernel_offset(kernel, o);
        if (n.minCoeff() < 0 || n.maxCoeff() >= (1 << kMaxDepth)) continue;
        const std::int32_t i = index.find(morton_encode(n));
        if (i < 0) continue;
        map.in[o].push_back(i);
        map.out[o].push_back(static_cast<std::int32_t>(j));
      }
    }
  } else {
    const KeyIndex index(out_keys);
    for (std::size_t i = 0; i < in_keys.size(); ++i) {
      const std::int32_t j = index.find(parent_key(in_keys[i]));
      if (j < 0) continue;
      const int o = child_index(in_keys[i]);
      map.in[o].push_back(static_cast<std::int32_t>(i));
      map.out[o].push_back(j);
    }
  }
  return map;
}

}  // namespace spcc
