#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mirn/errors.hpp"

namespace mirn {

/// Dense row-major n-dimensional array of doubles with an explicit shape.
/// The universal value type for signals, activations, weights and gradients.
class Tensor {
 public:
  Tensor() = default;  // empty sentinel ("no value"), distinct from any valid tensor

  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool empty() const { return shape_.empty(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);  // shape-checked
  Tensor& operator*=(double s);

  std::string shape_str() const;  // e.g. "[9,20,12]"

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

inline void check_shape(const Tensor& t, const std::vector<std::size_t>& want,
                        const char* what) {
  if (t.shape() != want) {
    throw ShapeError(std::string(what) + ": expected shape " +
                     shape_to_string(want) + ", got " + t.shape_str());
  }
}

}  // namespace mirn
