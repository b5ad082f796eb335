#include "triseg/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "triseg/error.hpp"

namespace triseg {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::size_t shape_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  require(data_.size() == shape_count(shape_), ErrorCode::ShapeError,
          "value count does not match shape " + shape_string(shape_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require(same_shape(other), ErrorCode::ShapeError,
          "cannot add " + shape_string(other.shape_) + " to " + shape_string(shape_));
  std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::plus<>());
  return *this;
}

std::string Dims3::str() const {
  std::ostringstream out;
  out << x << 'x' << y << 'x' << z;
  return out.str();
}

}  // namespace triseg
