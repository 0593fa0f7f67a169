#include "core/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace gsf {

int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("GSF_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

void parallel_for(int64_t n, int64_t min_work,
                  const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = max_threads();
  // Thread spawn costs ~tens of microseconds; only split sizable jobs.
  constexpr int64_t kInlineThreshold = 1 << 20;
  if (workers <= 1 || min_work < kInlineThreshold || n < 2) {
    fn(0, n);
    return;
  }
  const int chunks = static_cast<int>(std::min<int64_t>(workers, n));
  std::vector<std::thread> threads;
  threads.reserve(chunks - 1);
  const int64_t step = (n + chunks - 1) / chunks;
  for (int c = 1; c < chunks; ++c) {
    const int64_t b = c * step;
    const int64_t e = std::min<int64_t>(n, b + step);
    if (b >= e) break;
    threads.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min<int64_t>(step, n));
  for (auto& t : threads) t.join();
}

}  // namespace gsf
