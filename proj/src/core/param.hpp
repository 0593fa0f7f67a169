#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace gsf {

// Named handle to a trainable tensor owned by a module.
struct Param {
  std::string name;
  Tensor* value = nullptr;
};

inline int64_t total_scalars(const std::vector<Param>& params) {
  int64_t n = 0;
  for (const Param& p : params) n += p.value->numel();
  return n;
}

}  // namespace gsf
