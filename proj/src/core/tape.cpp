#include "core/tape.hpp"

#include "core/errors.hpp"

namespace gsf {

int Tape::watch(Tensor& t) {
  nodes_.push_back(Node{{}, nullptr});
  t.node = static_cast<int>(nodes_.size()) - 1;
  return t.node;
}

int Tape::record(std::vector<int> inputs, VjpFn vjp) {
  nodes_.push_back(Node{std::move(inputs), std::move(vjp)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<Tensor> Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  if (loss.node < 0 || loss.node >= size()) {
    throw UsageError("loss tensor is not on this tape");
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<size_t>(loss.node)] = Tensor(Shape{1}, 1.0f);

  for (int id = loss.node; id >= 0; --id) {
    const Node& node = nodes_[static_cast<size_t>(id)];
    Tensor& gout = grads[static_cast<size_t>(id)];
    if (gout.numel() == 0 || !node.vjp) continue;
    std::vector<Tensor> gin = node.vjp(gout);
    if (gin.size() != node.inputs.size()) {
      throw UsageError("vjp arity mismatch on tape node " + std::to_string(id));
    }
    for (size_t k = 0; k < gin.size(); ++k) {
      const int in = node.inputs[k];
      if (in < 0 || gin[k].numel() == 0) continue;
      Tensor& slot = grads[static_cast<size_t>(in)];
      if (slot.numel() == 0) {
        slot = std::move(gin[k]);
      } else {
        for (int64_t i = 0; i < slot.numel(); ++i) slot[i] += gin[k][i];
      }
    }
  }
  return grads;
}

}  // namespace gsf
