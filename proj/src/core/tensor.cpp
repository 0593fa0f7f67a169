#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace gsf {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 5) {
    throw ShapeError("tensor rank must be 1..5, got " + shape_str(shape));
  }
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("value count " + std::to_string(data_.size()) +
                     " does not fill shape " + shape_str(shape_));
  }
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(float v) {
  std::fill(data_.begin(), data_.end(), v);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff shape mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_rel_diff shape mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    const double scale = std::max(std::abs(static_cast<double>(a[i])),
                                  std::abs(static_cast<double>(b[i])));
    m = std::max(m, scale < floor ? d : d / scale);
  }
  return m;
}

}  // namespace gsf
