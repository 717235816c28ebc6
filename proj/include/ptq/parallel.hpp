#pragma once

#include <cstddef>
#include <functional>

namespace ptq {

// Worker budget: PTQ_THREADS if set (positive integer), otherwise hardware
// concurrency. Always >= 1.
int thread_budget();

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks across at
// most max_threads workers (0 = thread_budget()). The first exception thrown
// by any worker is rethrown after all workers join. Callers are responsible
// for writing results into disjoint slots so output order stays deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int max_threads = 0);

}  // namespace ptq
