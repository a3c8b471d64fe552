#include "mvseg/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace mvseg::nn {

std::string shape_string(const Shape4& s) {
  std::ostringstream os;
  os << '(' << s[0] << ',' << s[1] << ',' << s[2] << ',' << s[3] << ')';
  return os.str();
}

void expect_shape(const Shape4& actual, const Shape4& expected, const std::string& what) {
  if (actual != expected) {
    throw ShapeError(what + ": expected shape " + shape_string(expected) + ", got " +
                     shape_string(actual));
  }
}

template <typename T>
void Tensor<T>::reshape(const Shape4& s) {
  const std::size_t n = static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
  if (n != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
  }
  shape_ = s;
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& o) {
  expect_shape(o.shape(), shape_, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels: incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::copy_n(a.sample(i), a.sample_size(), out.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), out.sample(i) + a.sample_size());
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& g, int c_first, Tensor<T>& first, Tensor<T>& second) {
  first = Tensor<T>(g.n(), c_first, g.h(), g.w());
  second = Tensor<T>(g.n(), g.c() - c_first, g.h(), g.w());
  for (int i = 0; i < g.n(); ++i) {
    std::copy_n(g.sample(i), first.sample_size(), first.sample(i));
    std::copy_n(g.sample(i) + first.sample_size(), second.sample_size(), second.sample(i));
  }
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> concat_channels(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_channels(const Tensor<double>&, const Tensor<double>&);
template void split_channels(const Tensor<float>&, int, Tensor<float>&, Tensor<float>&);
template void split_channels(const Tensor<double>&, int, Tensor<double>&, Tensor<double>&);

}  // namespace mvseg::nn
