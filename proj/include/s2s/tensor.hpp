#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "s2s/errors.hpp"

namespace s2s {

// Dense row-major tensor of doubles. All numerics in this library are f64;
// the gradient tolerances in the test suite assume it.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long long>(data_.size()) != count(shape_))
      throw UsageError("tensor: data size does not match shape");
  }

  static Tensor vec(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  long long size() const { return static_cast<long long>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  double& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

  // rank-3 accessors, layout (channels, height, width)
  double& at3(int c, int y, int x) {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double at3(int c, int y, int x) const {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static long long count(const std::vector<int>& shape) {
    long long n = 1;
    for (int e : shape) {
      if (e <= 0) throw UsageError("tensor: non-positive extent " + std::to_string(e));
      n *= e;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace s2s
