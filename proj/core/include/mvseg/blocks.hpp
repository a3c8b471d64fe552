#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvseg/rng.hpp"
#include "mvseg/tensor.hpp"

// Differentiable layers with explicit forward/backward passes. Each layer
// caches what its backward pass needs during forward, so one instance
// serves one in-flight forward at a time.

namespace mvseg::nn {

enum class Mode { kTrain, kEval };
enum class NormKind { kNone, kInstance, kBatch };
enum class ActKind { kNone, kLeakyRelu, kRelu };

const char* to_string(NormKind k);
const char* to_string(ActKind k);

// Numerical constants shared by every block; recorded in checkpoints.
struct BlockConstants {
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;
  double bn_momentum = 0.1;
};

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  // Convolution / transposed-convolution kernel (counted by
  // count_conv_weights); biases and norm affines are not.
  bool conv_kernel = false;

  void resize(const Shape4& s) {
    value = Tensor<T>(s);
    grad = Tensor<T>(s);
  }
  void zero_grad() { grad.fill(T(0)); }
};

// Flat, ordered view of a model's named parameters and buffers.
template <typename T>
struct ParamList {
  struct Entry {
    std::string name;
    Parameter<T>* param;
  };
  struct Buffer {
    std::string name;
    Tensor<T>* tensor;
  };
  std::vector<Entry> params;
  std::vector<Buffer> buffers;

  void add(std::string name, Parameter<T>& p) { params.push_back({std::move(name), &p}); }
  void add_buffer(std::string name, Tensor<T>& t) { buffers.push_back({std::move(name), &t}); }
  void zero_grad() {
    for (auto& e : params) e.param->zero_grad();
  }
  std::size_t parameter_count() const;
  std::size_t conv_weight_count() const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for kernels and biases.
template <typename T>
void fan_in_uniform(Tensor<T>& t, int fan_in, Rng& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);
  void init(Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

  Parameter<T> weight;  // (out, in, k, k)
  Parameter<T> bias;    // (1, out, 1, 1)

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }
  void im2col(const T* x, int h, int w, T* col) const;
  void col2im(const T* col, int h, int w, T* dx) const;

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor<T> input_;
  AlignedVector<T> col_;
};

// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsampling).
template <typename T>
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(int in_channels, int out_channels);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void init(Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out);

  Parameter<T> weight;  // (in, out, 2, 2)
  Parameter<T> bias;    // (1, out, 1, 1)

 private:
  int in_ = 0, out_ = 0;
  Tensor<T> input_;
};

// Instance or batch normalization with a per-channel affine. Batch mode
// keeps running statistics used in evaluation mode.
template <typename T>
class Normalization {
 public:
  Normalization() = default;
  Normalization(NormKind kind, int channels, const BlockConstants& k);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void init();
  void collect(const std::string& prefix, ParamList<T>& out);

  NormKind kind() const { return kind_; }

  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

 private:
  NormKind kind_ = NormKind::kNone;
  int channels_ = 0;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  bool used_batch_stats_ = false;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

template <typename T>
class Activation {
 public:
  Activation() = default;
  Activation(ActKind kind, double leaky_slope) : kind_(kind), slope_(leaky_slope) {}

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  T negative_slope() const { return kind_ == ActKind::kLeakyRelu ? T(slope_) : T(0); }
  ActKind kind_ = ActKind::kNone;
  double slope_ = 0.01;
  std::vector<std::uint8_t> positive_;
};

template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape4 input_shape_{};
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> output_;
};

// conv -> norm -> activation.
template <typename T>
class ConvNormAct {
 public:
  ConvNormAct() = default;
  ConvNormAct(int in, int out, int kernel, int stride, int pad, NormKind norm, ActKind act,
              const BlockConstants& k);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);
  void init(Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out);

  Conv2d<T> conv;
  Normalization<T> norm;

 private:
  Activation<T> act_;
};

// Residual block: y = x + conv2(act(norm(conv1(x)))), 3x3 kernels, padding 1.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int channels, NormKind norm, ActKind act, const BlockConstants& k);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void init(Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out);

  int channels() const { return channels_; }

  Conv2d<T> conv1;
  Normalization<T> norm1;
  Conv2d<T> conv2;

 private:
  int channels_ = 0;
  Activation<T> act1_;
};

// Per-pixel softmax over the channel axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Per-pixel class index with the highest logit; ties resolve to the lower
// class index. Output holds N*H*W labels.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits);

// Cross entropy averaged over the pixels of each sample. `labels` holds
// N*H*W class indices.
template <typename T>
std::vector<double> cross_entropy_per_sample(const Tensor<T>& logits,
                                             std::span<const std::uint8_t> labels);

// Mean cross entropy over every pixel of every sample.
template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

// Gradient of sum_n weight[n] * cross_entropy_per_sample[n] w.r.t. logits.
template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                             std::span<const double> sample_weights);

}  // namespace mvseg::nn
