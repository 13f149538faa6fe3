#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cereid {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-2 tensors.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const double& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  void fill(double value);
  bool all_finite() const;
  /// Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws NumericError naming `what` when the tensor holds NaN or Inf.
void require_finite(const Tensor& t, const std::string& what);

/// Trainable tensor together with its gradient and Adam moments.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::size_t step_count = 0;

  Param() = default;
  Param(std::string name, Tensor initial);

  void zero_grad() { grad.fill(0.0); }
};

void zero_grads(std::span<Param* const> params);

}  // namespace cereid
