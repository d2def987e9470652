#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace spcc {

/// Splits [0, n) into contiguous row blocks, one per worker. Work items must be
/// row-independent so the result does not depend on the worker count.
template <typename Fn>
void parallel_rows(std::ptrdiff_t n, int workers, Fn&& fn) {
  constexpr std::ptrdiff_t kMinRowsPerWorker = 256;
  const std::ptrdiff_t max_workers = std::max<std::ptrdiff_t>(1, n / kMinRowsPerWorker);
  const std::ptrdiff_t w = std::clamp<std::ptrdiff_t>(workers, 1, max_workers);
  if (w == 1) {
    fn(std::ptrdiff_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w - 1));
  const std::ptrdiff_t chunk = (n + w - 1) / w;
  for (std::ptrdiff_t k = 1; k < w; ++k) {
    const std::ptrdiff_t b = k * chunk;
    const std::ptrdiff_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::ptrdiff_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace spcc
