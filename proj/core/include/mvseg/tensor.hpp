#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mvseg/error.hpp"

namespace mvseg::nn {

using Shape4 = std::array<int, 4>;

template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

std::string shape_string(const Shape4& s);

// Dense NCHW activation / parameter storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape4{n, c, h, w}, fill) {}
  explicit Tensor(const Shape4& shape, T fill = T(0)) : shape_(shape) {
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative tensor dimension in " + shape_string(shape));
    }
    data_.assign(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3], fill);
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
  std::size_t sample_size() const { return plane() * shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T* sample(int i) { return data_.data() + sample_size() * i; }
  const T* sample(int i) const { return data_.data() + sample_size() * i; }

  T& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { data_.assign(data_.size(), v); }
  void reshape(const Shape4& s);

  Tensor& operator+=(const Tensor& o);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

// Throws ShapeError naming `what` when the shapes differ.
void expect_shape(const Shape4& actual, const Shape4& expected, const std::string& what);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Inverse of concat_channels: splits `g` into the first `c_first` channels
// and the remainder.
template <typename T>
void split_channels(const Tensor<T>& g, int c_first, Tensor<T>& first, Tensor<T>& second);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

}  // namespace mvseg::nn
