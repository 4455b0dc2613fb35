#pragma once

#include <thread>
#include <vector>

#include "mipseg/common.hpp"

namespace mipseg {

// Runs fn(begin, end) over a partition of [0, n). With num_threads() == 1
// this is a plain call; otherwise contiguous chunks go to worker threads.
// The partition depends only on (n, thread count), and chunks never share
// output elements, so numeric results do not depend on the thread count.
template <class Fn>
void parallel_for(long long n, Fn&& fn) {
  const int workers = num_threads();
  if (workers <= 1 || n <= 1) {
    fn(0LL, n);
    return;
  }
  const int used = static_cast<int>(workers < n ? workers : n);
  const long long chunk = (n + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(used));
  for (int t = 0; t < used; ++t) {
    const long long b = t * chunk;
    const long long e = (b + chunk < n) ? b + chunk : n;
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mipseg
