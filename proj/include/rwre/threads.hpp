// Replica-level parallelism. Work is cut into fixed-size blocks whose
// boundaries do not depend on the thread count, and callers combine per-block
// partials in block order, so results are bit-identical for any RWRE_THREADS.
#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace rwre {

inline int configured_threads() {
  if (const char* env = std::getenv("RWRE_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

inline void parallel_blocks(long long n_blocks,
                            const std::function<void(long long)>& fn) {
  const long long nt = std::min<long long>(configured_threads(), n_blocks);
  if (nt <= 1) {
    for (long long b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::atomic<long long> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nt));
  for (long long t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const long long b = next.fetch_add(1);
        if (b >= n_blocks) break;
        fn(b);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace rwre
