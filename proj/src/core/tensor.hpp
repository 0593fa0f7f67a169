#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gsf {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float32 tensor of rank 1..5 (up to B x C x T x H x W).
// Tensors are treated as immutable once they enter the op layer: every op
// allocates a fresh output. `node` links a tensor to its position on a
// GradTape; -1 means untracked.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  void fill(float v);

  int node = -1;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// max |a-b| over all elements; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// max relative error with absolute fallback below `floor` magnitude.
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-6);

}  // namespace gsf
