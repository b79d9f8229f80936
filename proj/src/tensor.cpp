#include "xplt/tensor.hpp"

namespace xplt {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor Tensor::full(Shape shape, float value) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.v_ = ArrayF::Constant(numel(t.shape_), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<float> values) {
  ArrayF v(static_cast<int64_t>(values.size()));
  int64_t i = 0;
  for (float x : values) v(i++) = x;
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace xplt
