#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace triseg {

using Shape = std::vector<int>;
/// Aligned so that equal shapes always take the same SIMD code path, which
/// keeps floating-point results independent of where a buffer was allocated.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

std::string shape_string(const Shape& shape);
std::size_t shape_count(const Shape& shape);

/// Dense row-major array of doubles. Rank-4 tensors follow (N, C, H, W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-4 accessors.
  int n() const { return dim(0); }
  int c() const { return dim(1); }
  int h() const { return dim(2); }
  int w() const { return dim(3); }
  std::size_t plane() const { return static_cast<std::size_t>(h()) * static_cast<std::size_t>(w()); }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  double* channel(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* channel(int n, int c) const { return data_.data() + index(n, c, 0, 0); }
  double* sample(int n) { return channel(n, 0); }
  const double* sample(int n) const { return channel(n, 0); }

  void fill(double value);
  void set_zero() { fill(0.0); }
  Tensor& operator+=(const Tensor& other);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_;
  Storage data_;
};

struct Dims3 {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  bool operator==(const Dims3&) const = default;
  std::string str() const;
};

/// 3D scalar grid with x varying fastest (NIfTI voxel order).
template <class T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(Dims3 dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {}

  const Dims3& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.x) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.y) * z);
  }
  T& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool operator==(const Volume&) const = default;

 private:
  Dims3 dims_;
  std::vector<T> data_;
};

}  // namespace triseg
