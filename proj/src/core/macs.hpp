#pragma once

#include <cstdint>

namespace gsf {

// Scoped multiply-accumulate counter. While a scope is alive on a thread,
// kernels report the MACs they execute to it. The convention matches the
// cost model in accounting/: convolution and dense layers count one MAC per
// kernel tap per output element, elementwise multiply and subtract count one
// per element, the weighted blend counts three per element, and everything
// else (pooling, activations, shifts, copies, normalization) counts zero.
class MacCounterScope {
 public:
  MacCounterScope();
  ~MacCounterScope();
  MacCounterScope(const MacCounterScope&) = delete;
  MacCounterScope& operator=(const MacCounterScope&) = delete;

  int64_t total() const { return total_; }

  // Called from kernels; no-op when no scope is active on this thread.
  static void add(int64_t n);

 private:
  int64_t total_ = 0;
  MacCounterScope* prev_ = nullptr;
};

}  // namespace gsf
