#pragma once

#include <cstdint>
#include <functional>

namespace gsf {

// Worker thread cap: GSF_THREADS env var if set, else hardware concurrency.
int max_threads();

// Runs fn(begin, end) over [0, n) in contiguous chunks, possibly on several
// threads. Chunks never overlap, so writes to disjoint output ranges are
// race-free and results are bitwise independent of the thread count.
// min_work is an estimate of total scalar ops; small jobs run inline.
void parallel_for(int64_t n, int64_t min_work,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace gsf
