#include "cereid/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cereid/error.hpp"

namespace cereid {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t cols = shape_.back();
  return std::span<double>(data_).subspan(r * cols, cols);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t cols = shape_.back();
  return std::span<const double>(data_).subspan(r * cols, cols);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

Param::Param(std::string n, Tensor initial)
    : name(std::move(n)),
      value(std::move(initial)),
      grad(value.shape()),
      adam_m(value.shape()),
      adam_v(value.shape()) {}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

}  // namespace cereid
