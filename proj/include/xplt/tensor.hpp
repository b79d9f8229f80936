#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace xplt {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

using ArrayF = Eigen::ArrayXf;
using MatrixRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

/// Dense float32 array with a row-major shape. Pure value type; all
/// autodiff bookkeeping lives in graph.hpp.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    v_ = ArrayF::Zero(numel(shape_));
  }
  Tensor(Shape shape, ArrayF values) : shape_(std::move(shape)), v_(std::move(values)) {
    if (numel(shape_) != v_.size())
      throw ShapeError("tensor: " + shape_str(shape_) + " does not hold " +
                       std::to_string(v_.size()) + " values");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return full({1}, value); }
  static Tensor from(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return v_.size(); }

  ArrayF& array() { return v_; }
  const ArrayF& array() const { return v_; }
  float* data() { return v_.data(); }
  const float* data() const { return v_.data(); }

  float operator[](int64_t i) const { return v_(i); }
  float& operator[](int64_t i) { return v_(i); }

  /// Value of a one-element tensor.
  float item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return v_(0);
  }

  bool all_finite() const { return v_.allFinite(); }

  /// Same storage reinterpreted under a new shape (element count must match).
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), v_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(v_)); }

  /// Row-major matrix views over the flat storage.
  MatMap mat(int rows, int cols) {
    check_mat(rows, cols);
    return MatMap(v_.data(), rows, cols);
  }
  ConstMatMap mat(int rows, int cols) const {
    check_mat(rows, cols);
    return ConstMatMap(v_.data(), rows, cols);
  }

  /// Interprets the tensor as [batch, rest]: dim 0 is the batch for ndim >= 2,
  /// otherwise the whole tensor is one example.
  std::pair<int, int> batch_view() const {
    if (size() == 0) throw ShapeError("batch_view: empty tensor");
    if (ndim() < 2) return {1, static_cast<int>(size())};
    const int n = shape_[0];
    return {n, static_cast<int>(size() / n)};
  }

private:
  void check_mat(int rows, int cols) const {
    if (static_cast<int64_t>(rows) * cols != v_.size())
      throw ShapeError("mat view " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " over " + std::to_string(v_.size()) +
                       " elements");
  }

  Shape shape_;
  ArrayF v_;
};

}  // namespace xplt
