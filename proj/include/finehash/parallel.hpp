#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace finehash {

// Worker count for the heavy kernels. Overridable via FINEHASH_THREADS.
inline std::size_t worker_count() {
  static const std::size_t n = [] {
    if (const char* env = std::getenv("FINEHASH_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<std::size_t>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return static_cast<std::size_t>(hc == 0 ? 1 : std::min(hc, 16u));
  }();
  return n;
}

// Runs fn over contiguous chunks of [0, n). Each index is handled by exactly
// one invocation, so writes keyed by index are race-free and the result does
// not depend on scheduling. Reductions must still be ordered by the caller.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, begin, end);
  }
  for (auto& t : pool) t.join();
}

}  // namespace finehash
