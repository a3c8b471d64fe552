#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvseg/blocks.hpp"
#include "mvseg/datastore.hpp"

namespace mvseg {

struct UNetConfig {
  int base_filters = 16;
  int image_size = 128;
  int num_classes = 2;
  bool fuse_enabled = true;
  // Shape-code layout expected by the Fuse Block: 4 codes of
  // code_channels x g x g each, g = image_size / 16.
  int code_channels = 8;
  nn::BlockConstants constants;

  int filters(int level) const { return base_filters << level; }  // level 0..4
  int bottleneck_grid() const { return image_size / 16; }
  int prior_channels() const { return kNumSourceViews * code_channels; }
  void validate() const;
};

// Conv weights of the Fuse Block for a given configuration.
std::size_t fuse_block_conv_weights(const UNetConfig& cfg);

// p1 = act(norm(conv3x3(priors))), p2 = conv3x3(p1), out = bottleneck + p1 + p2.
template <typename T>
class FuseBlock {
 public:
  FuseBlock() = default;
  FuseBlock(int prior_channels, int channels, const nn::BlockConstants& k);

  nn::Tensor<T> forward(const nn::Tensor<T>& priors, const nn::Tensor<T>& bottleneck, nn::Mode mode);
  // Returns d(loss)/d(priors); d(loss)/d(bottleneck) equals `dy`.
  nn::Tensor<T> backward(const nn::Tensor<T>& dy);
  void init(Rng& rng);
  void collect(const std::string& prefix, nn::ParamList<T>& out);

  nn::ConvNormAct<T> project;
  nn::Conv2d<T> refine;
};

// 2D U-Net with 4 pooling levels; the Fuse Block at the bottleneck turns
// it into the MV U-Net. With fuse_enabled = false it is the plain baseline.
template <typename T>
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg = {});
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const UNetConfig& config() const { return cfg_; }
  void init(std::uint64_t seed);

  // x: (N, 1, S, S); priors: (N, 32, g, g) or empty. Returns (N, 2, S, S).
  nn::Tensor<T> forward(const nn::Tensor<T>& x, const nn::Tensor<T>& priors,
                        nn::Mode mode = nn::Mode::kEval);
  nn::Tensor<T> forward(const nn::Tensor<T>& x, nn::Mode mode = nn::Mode::kEval) {
    return forward(x, nn::Tensor<T>(), mode);
  }
  // Accumulates parameter grads; returns d(loss)/d(priors) (empty without
  // the Fuse Block).
  nn::Tensor<T> backward(const nn::Tensor<T>& dlogits);

  nn::ParamList<T> params();
  std::size_t count_conv_weights();
  // Sets every Fuse Block parameter to zero.
  void zero_fuse();

 private:
  struct Level {
    nn::ConvNormAct<T> a, b;
  };

  UNetConfig cfg_;
  std::array<Level, 4> down_;
  std::array<nn::MaxPool2<T>, 4> pool_;
  nn::ConvNormAct<T> bottleneck_;
  FuseBlock<T> fuse_;
  std::array<nn::ConvTranspose2x2<T>, 4> up_;
  std::array<Level, 4> up_conv_;
  nn::Conv2d<T> head_;
  bool used_priors_ = false;
};

// Stacks four 512-d codes per sample into (N, 32, 8, 8), channel order
// LA1, LA2, LA3, Mid-V. Throws InputError naming a missing view.
template <typename T>
nn::Tensor<T> make_prior_tensor(const std::vector<const PriorCodes*>& codes, const UNetConfig& cfg);

std::size_t count_conv_weights(const UNetConfig& cfg);

}  // namespace mvseg
