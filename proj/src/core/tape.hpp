#pragma once

#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace gsf {

// Reverse-mode gradient tape. Ops append nodes during the forward pass; each
// node keeps the handles of its inputs and a closure computing the
// vector-Jacobian product. The tape is append-only while recording and
// read-only during backward; use one tape per forward/backward pass.
class Tape {
 public:
  // Per-node VJP: given d(loss)/d(output), return d(loss)/d(input) aligned
  // with the recorded input list. Entries for untracked inputs are ignored.
  using VjpFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  // Registers a trainable leaf and stamps its node handle.
  int watch(Tensor& t);

  // Records an interior node; returns its handle.
  int record(std::vector<int> inputs, VjpFn vjp);

  // Walks the tape in reverse from a scalar loss. Returns gradients indexed
  // by node handle; untouched nodes hold empty tensors.
  std::vector<Tensor> backward(const Tensor& loss) const;

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    std::vector<int> inputs;
    VjpFn vjp;  // null for leaves
  };
  std::vector<Node> nodes_;
};

// True when any argument is tracked on a tape.
inline bool any_tracked(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->node >= 0) return true;
  }
  return false;
}

}  // namespace gsf
