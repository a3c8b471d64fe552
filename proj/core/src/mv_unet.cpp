#include "mvseg/mv_unet.hpp"

#include <spdlog/spdlog.h>

#include "mvseg/error.hpp"

namespace mvseg {

using nn::ActKind;
using nn::Mode;
using nn::NormKind;
using nn::Tensor;

void UNetConfig::validate() const {
  if (base_filters <= 0) throw ConfigError("base_filters must be positive");
  if (image_size <= 0 || image_size % 16 != 0) {
    throw ConfigError("segmenter image size must be a positive multiple of 16");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (code_channels <= 0) throw ConfigError("code channels must be positive");
}

std::size_t fuse_block_conv_weights(const UNetConfig& cfg) {
  const std::size_t c = cfg.filters(4);
  return 9 * (static_cast<std::size_t>(cfg.prior_channels()) * c + c * c);
}

// ---------------------------------------------------------------- fuse

template <typename T>
FuseBlock<T>::FuseBlock(int prior_channels, int channels, const nn::BlockConstants& k)
    : project(prior_channels, channels, 3, 1, 1, NormKind::kBatch, ActKind::kRelu, k),
      refine(channels, channels, 3, 1, 1) {}

template <typename T>
Tensor<T> FuseBlock<T>::forward(const Tensor<T>& priors, const Tensor<T>& bottleneck, Mode mode) {
  if (priors.n() != bottleneck.n() || priors.h() != bottleneck.h() || priors.w() != bottleneck.w()) {
    throw ShapeError("fuse block: priors " + nn::shape_string(priors.shape()) +
                     " do not match bottleneck " + nn::shape_string(bottleneck.shape()));
  }
  const Tensor<T> p1 = project.forward(priors, mode);
  const Tensor<T> p2 = refine.forward(p1);
  Tensor<T> out = bottleneck;
  out += p1;
  out += p2;
  return out;
}

template <typename T>
Tensor<T> FuseBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dp1 = refine.backward(dy);
  dp1 += dy;
  return project.backward(dp1);
}

template <typename T>
void FuseBlock<T>::init(Rng& rng) {
  project.init(rng);
  refine.init(rng);
}

template <typename T>
void FuseBlock<T>::collect(const std::string& prefix, nn::ParamList<T>& out) {
  project.collect(prefix + ".project", out);
  refine.collect(prefix + ".refine", out);
}

// ---------------------------------------------------------------- unet

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& k = cfg_.constants;
  auto cna = [&k](int in, int out) {
    return nn::ConvNormAct<T>(in, out, 3, 1, 1, NormKind::kBatch, ActKind::kRelu, k);
  };
  int in = 1;
  for (int l = 0; l < 4; ++l) {
    down_[l].a = cna(in, cfg_.filters(l));
    down_[l].b = cna(cfg_.filters(l), cfg_.filters(l));
    in = cfg_.filters(l);
  }
  bottleneck_ = cna(cfg_.filters(3), cfg_.filters(4));
  if (cfg_.fuse_enabled) fuse_ = FuseBlock<T>(cfg_.prior_channels(), cfg_.filters(4), k);
  for (int l = 3; l >= 0; --l) {
    up_[l] = nn::ConvTranspose2x2<T>(cfg_.filters(l + 1), cfg_.filters(l));
    up_conv_[l].a = cna(2 * cfg_.filters(l), cfg_.filters(l));
    up_conv_[l].b = cna(cfg_.filters(l), cfg_.filters(l));
  }
  head_ = nn::Conv2d<T>(cfg_.filters(0), cfg_.num_classes, 1, 1, 0);
}

template <typename T>
void UNet<T>::init(std::uint64_t seed) {
  // Separate streams keep the shared layers identical with or without the
  // Fuse Block.
  Rng rng(mix_seed(seed, 300));
  for (auto& l : down_) {
    l.a.init(rng);
    l.b.init(rng);
  }
  bottleneck_.init(rng);
  for (int l = 3; l >= 0; --l) {
    up_[l].init(rng);
    up_conv_[l].a.init(rng);
    up_conv_[l].b.init(rng);
  }
  head_.init(rng);
  if (cfg_.fuse_enabled) {
    Rng fuse_rng(mix_seed(seed, 301));
    fuse_.init(fuse_rng);
  }
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, const Tensor<T>& priors, Mode mode) {
  const int s = cfg_.image_size;
  if (x.c() != 1 || x.h() != s || x.w() != s || x.n() < 1) {
    throw ShapeError("segmenter input must be (N, 1, " + std::to_string(s) + ", " +
                     std::to_string(s) + "), got " + nn::shape_string(x.shape()));
  }
  used_priors_ = false;
  if (cfg_.fuse_enabled) {
    const int g = cfg_.bottleneck_grid();
    if (priors.size() == 0) throw InputError("MV U-Net needs shape priors for every sample");
    nn::expect_shape(priors.shape(), {x.n(), cfg_.prior_channels(), g, g}, "shape priors");
  } else if (priors.size() != 0) {
    static bool warned = false;
    if (!warned) {
      spdlog::warn("Fuse Block disabled; supplied shape priors are ignored");
      warned = true;
    }
  }
  std::array<Tensor<T>, 4> skips;
  Tensor<T> h = x;
  for (int l = 0; l < 4; ++l) {
    h = down_[l].b.forward(down_[l].a.forward(h, mode), mode);
    skips[l] = h;
    h = pool_[l].forward(h);
  }
  h = bottleneck_.forward(h, mode);
  if (cfg_.fuse_enabled) {
    h = fuse_.forward(priors, h, mode);
    used_priors_ = true;
  }
  for (int l = 3; l >= 0; --l) {
    h = nn::concat_channels(skips[l], up_[l].forward(h));
    h = up_conv_[l].b.forward(up_conv_[l].a.forward(h, mode), mode);
  }
  return head_.forward(h);
}

template <typename T>
Tensor<T> UNet<T>::backward(const Tensor<T>& dlogits) {
  Tensor<T> d = head_.backward(dlogits);
  std::array<Tensor<T>, 4> dskip;
  for (int l = 0; l < 4; ++l) {
    d = up_conv_[l].a.backward(up_conv_[l].b.backward(d));
    Tensor<T> dup;
    nn::split_channels(d, cfg_.filters(l), dskip[l], dup);
    d = up_[l].backward(dup);
  }
  Tensor<T> dpriors;
  if (used_priors_) dpriors = fuse_.backward(d);
  d = bottleneck_.backward(d);
  for (int l = 3; l >= 0; --l) {
    d = pool_[l].backward(d);
    d += dskip[l];
    d = down_[l].a.backward(down_[l].b.backward(d), l > 0);
  }
  return dpriors;
}

template <typename T>
nn::ParamList<T> UNet<T>::params() {
  nn::ParamList<T> out;
  for (int l = 0; l < 4; ++l) {
    down_[l].a.collect("down" + std::to_string(l) + ".a", out);
    down_[l].b.collect("down" + std::to_string(l) + ".b", out);
  }
  bottleneck_.collect("bottleneck", out);
  if (cfg_.fuse_enabled) fuse_.collect("fuse", out);
  for (int l = 3; l >= 0; --l) {
    up_[l].collect("up" + std::to_string(l), out);
    up_conv_[l].a.collect("up" + std::to_string(l) + ".a", out);
    up_conv_[l].b.collect("up" + std::to_string(l) + ".b", out);
  }
  head_.collect("head", out);
  return out;
}

template <typename T>
std::size_t UNet<T>::count_conv_weights() {
  return params().conv_weight_count();
}

template <typename T>
void UNet<T>::zero_fuse() {
  if (!cfg_.fuse_enabled) return;
  nn::ParamList<T> p;
  fuse_.collect("fuse", p);
  for (auto& e : p.params) e.param->value.fill(T(0));
}

template <typename T>
Tensor<T> make_prior_tensor(const std::vector<const PriorCodes*>& codes, const UNetConfig& cfg) {
  const int g = cfg.bottleneck_grid();
  const std::size_t len = static_cast<std::size_t>(cfg.code_channels) * g * g;
  Tensor<T> out(static_cast<int>(codes.size()), cfg.prior_channels(), g, g);
  for (std::size_t n = 0; n < codes.size(); ++n) {
    T* dst = out.sample(static_cast<int>(n));
    for (int v = 0; v < kNumSourceViews; ++v) {
      const auto& z = (*codes[n])[v];
      if (z.empty()) throw InputError(std::string("missing shape code for view ") + kViewNames[v]);
      if (z.size() != len) {
        throw ShapeError(std::string("shape code for view ") + kViewNames[v] + " has " +
                         std::to_string(z.size()) + " values, expected " + std::to_string(len));
      }
      for (std::size_t k = 0; k < len; ++k) dst[v * len + k] = static_cast<T>(z[k]);
    }
  }
  return out;
}

std::size_t count_conv_weights(const UNetConfig& cfg) {
  UNet<float> model(cfg);
  return model.count_conv_weights();
}

template class FuseBlock<float>;
template class FuseBlock<double>;
template class UNet<float>;
template class UNet<double>;
template Tensor<float> make_prior_tensor(const std::vector<const PriorCodes*>&, const UNetConfig&);
template Tensor<double> make_prior_tensor(const std::vector<const PriorCodes*>&, const UNetConfig&);

}  // namespace mvseg
