#include "core/macs.hpp"

namespace gsf {

namespace {
thread_local MacCounterScope* g_active = nullptr;
}

MacCounterScope::MacCounterScope() : prev_(g_active) {
  g_active = this;
}

MacCounterScope::~MacCounterScope() {
  g_active = prev_;
}

void MacCounterScope::add(int64_t n) {
  if (g_active != nullptr) g_active->total_ += n;
}

}  // namespace gsf
