#include "mvseg/shape_mae.hpp"

#include <algorithm>
#include <cmath>

#include "mvseg/error.hpp"

namespace mvseg {

using nn::ActKind;
using nn::Mode;
using nn::NormKind;
using nn::Tensor;

namespace {

template <typename T>
Tensor<T> stack_batches(const std::vector<Tensor<T>>& parts) {
  nn::Shape4 s = parts.at(0).shape();
  s[0] = 0;
  for (const auto& p : parts) s[0] += p.n();
  Tensor<T> out(s);
  T* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

template <typename T>
void add_slice(const Tensor<T>& src, int first, Tensor<T>& dst) {
  const T* s = src.sample(first);
  T* d = dst.data();
  for (std::size_t k = 0; k < dst.size(); ++k) d[k] += s[k];
}

template <typename T>
void copy_image(const Image& img, T* dst) {
  std::transform(img.values().begin(), img.values().end(), dst,
                 [](float v) { return static_cast<T>(v); });
}

}  // namespace

void ShapeMaeConfig::validate() const {
  if (image_size <= 0 || image_size % 16 != 0) {
    throw ConfigError("shape_mae image size must be a positive multiple of 16");
  }
  for (int w : widths) {
    if (w <= 0) throw ConfigError("shape_mae widths must be positive");
  }
  if (code_channels <= 0) throw ConfigError("shape_mae code channels must be positive");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
}

// ------------------------------------------------------------- encoder

template <typename T>
ViewEncoder<T>::ViewEncoder(const ShapeMaeConfig& cfg) {
  const auto& k = cfg.constants;
  int in = 1;
  for (int s = 0; s < 4; ++s) {
    down_[s] = nn::ConvNormAct<T>(in, cfg.widths[s], 3, 2, 1, NormKind::kInstance,
                                  ActKind::kLeakyRelu, k);
    res_[s] = nn::ResBlock<T>(cfg.widths[s], NormKind::kInstance, ActKind::kLeakyRelu, k);
    in = cfg.widths[s];
  }
  head_ = nn::Conv2d<T>(in, cfg.code_channels, 1, 1, 0);
}

template <typename T>
Tensor<T> ViewEncoder<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (int s = 0; s < 4; ++s) {
    h = down_[s].forward(h, mode);
    h = res_[s].forward(h, mode);
  }
  return sigmoid_.forward(head_.forward(h));
}

template <typename T>
void ViewEncoder<T>::backward(const Tensor<T>& dcode) {
  Tensor<T> d = head_.backward(sigmoid_.backward(dcode));
  for (int s = 3; s >= 0; --s) {
    d = res_[s].backward(d);
    d = down_[s].backward(d, s > 0);
  }
}

template <typename T>
void ViewEncoder<T>::init(Rng& rng) {
  for (int s = 0; s < 4; ++s) {
    down_[s].init(rng);
    res_[s].init(rng);
  }
  head_.init(rng);
}

template <typename T>
void ViewEncoder<T>::collect(const std::string& prefix, nn::ParamList<T>& out) {
  for (int s = 0; s < 4; ++s) {
    down_[s].collect(prefix + ".down" + std::to_string(s), out);
    res_[s].collect(prefix + ".res" + std::to_string(s), out);
  }
  head_.collect(prefix + ".head", out);
}

// ------------------------------------------------------------- decoder

template <typename T>
ViewDecoder<T>::ViewDecoder(const ShapeMaeConfig& cfg) {
  const auto& k = cfg.constants;
  std::array<int, 5> d{};
  for (int s = 0; s < 4; ++s) d[s] = cfg.widths[3 - s];
  d[4] = d[3];
  stem_ = nn::ConvNormAct<T>(cfg.code_channels, d[0], 1, 1, 0, NormKind::kInstance,
                             ActKind::kLeakyRelu, k);
  for (int s = 0; s < 4; ++s) {
    res_[s] = nn::ResBlock<T>(d[s], NormKind::kInstance, ActKind::kLeakyRelu, k);
    up_[s] = nn::ConvTranspose2x2<T>(d[s], d[s + 1]);
    up_norm_[s] = nn::Normalization<T>(NormKind::kInstance, d[s + 1], k);
    up_act_[s] = nn::Activation<T>(ActKind::kLeakyRelu, k.leaky_slope);
  }
  head_ = nn::Conv2d<T>(d[4], 2, 1, 1, 0);
}

template <typename T>
Tensor<T> ViewDecoder<T>::forward(const Tensor<T>& code, Mode mode) {
  Tensor<T> h = stem_.forward(code, mode);
  for (int s = 0; s < 4; ++s) {
    h = res_[s].forward(h, mode);
    h = up_act_[s].forward(up_norm_[s].forward(up_[s].forward(h), mode));
  }
  return head_.forward(h);
}

template <typename T>
Tensor<T> ViewDecoder<T>::backward(const Tensor<T>& dlogits) {
  Tensor<T> d = head_.backward(dlogits);
  for (int s = 3; s >= 0; --s) {
    d = up_[s].backward(up_norm_[s].backward(up_act_[s].backward(d)));
    d = res_[s].backward(d);
  }
  return stem_.backward(d);
}

template <typename T>
void ViewDecoder<T>::init(Rng& rng) {
  stem_.init(rng);
  for (int s = 0; s < 4; ++s) {
    res_[s].init(rng);
    up_[s].init(rng);
    up_norm_[s].init();
  }
  head_.init(rng);
}

template <typename T>
void ViewDecoder<T>::collect(const std::string& prefix, nn::ParamList<T>& out) {
  stem_.collect(prefix + ".stem", out);
  for (int s = 0; s < 4; ++s) {
    res_[s].collect(prefix + ".res" + std::to_string(s), out);
    up_[s].collect(prefix + ".up" + std::to_string(s), out);
    up_norm_[s].collect(prefix + ".upnorm" + std::to_string(s), out);
  }
  head_.collect(prefix + ".head", out);
}

// ---------------------------------------------------------------- loss

template <typename T>
ShapeMaeBatch<T> make_shape_mae_batch(const std::vector<const Subject*>& subjects) {
  if (subjects.empty()) throw InputError("empty Shape MAE batch");
  const int n = static_cast<int>(subjects.size());
  const Image& ref = subjects[0]->source_view(0);
  const int h = ref.rows(), w = ref.cols();
  ShapeMaeBatch<T> b;
  for (int i = 0; i < kNumSourceViews; ++i) b.sources[i] = Tensor<T>(n, 1, h, w);
  for (int k = 0; k < n; ++k) {
    const Subject& s = *subjects[k];
    for (int i = 0; i < kNumSourceViews; ++i) {
      const Image& img = s.source_view(i);
      if (img.empty()) throw InputError("subject " + s.id + " is missing source view " + kViewNames[i]);
      if (img.rows() != h || img.cols() != w) throw ShapeError("source views differ in size");
      copy_image(img, b.sources[i].sample(k));
    }
    for (int j = 0; j < kNumTargetViews; ++j) {
      const Mask& m = s.target_mask(j);
      if (m.rows() != h || m.cols() != w) {
        throw ShapeError("target view " + std::string(kViewNames[j]) + " of " + s.id +
                         " does not match the source size");
      }
      b.targets[j].insert(b.targets[j].end(), m.values().begin(), m.values().end());
    }
  }
  return b;
}

template <typename T>
double code_regularizer(const std::vector<Tensor<T>>& codes) {
  if (codes.size() != kNumSourceViews) throw InputError("code regularizer needs 4 codes");
  const int n = codes[0].n();
  const std::size_t len = codes[0].sample_size();
  double total = 0.0;
  for (int s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < len; ++k) {
      double mean = 0.0;
      for (const auto& z : codes) mean += z.sample(s)[k];
      mean /= kNumSourceViews;
      for (const auto& z : codes) {
        const double d = z.sample(s)[k] - mean;
        total += d * d;
      }
    }
  }
  return total / kNumSourceViews / n;
}

template <typename T>
std::vector<Tensor<T>> code_regularizer_grad(const std::vector<Tensor<T>>& codes) {
  if (codes.size() != kNumSourceViews) throw InputError("code regularizer needs 4 codes");
  const int n = codes[0].n();
  const std::size_t len = codes[0].sample_size();
  std::vector<Tensor<T>> grads;
  for (const auto& z : codes) grads.emplace_back(z.shape());
  const double scale = 2.0 / kNumSourceViews / n;
  for (int s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < len; ++k) {
      double mean = 0.0;
      for (const auto& z : codes) mean += z.sample(s)[k];
      mean /= kNumSourceViews;
      for (int i = 0; i < kNumSourceViews; ++i) {
        grads[i].sample(s)[k] = static_cast<T>(scale * (codes[i].sample(s)[k] - mean));
      }
    }
  }
  return grads;
}

template <typename T>
double mean_pairwise_code_distance(const std::vector<Tensor<T>>& codes) {
  if (codes.size() != kNumSourceViews) throw InputError("code distance needs 4 codes");
  const int n = codes[0].n();
  const std::size_t len = codes[0].sample_size();
  double total = 0.0;
  int pairs = 0;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < kNumSourceViews; ++a) {
      for (int b = a + 1; b < kNumSourceViews; ++b) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          const double d = static_cast<double>(codes[a].sample(s)[k]) - codes[b].sample(s)[k];
          d2 += d * d;
        }
        total += std::sqrt(d2);
        ++pairs;
      }
    }
  }
  return total / pairs;
}

template <typename T>
ShapeMaeLoss shape_mae_loss(const std::vector<std::vector<Tensor<T>>>& logits,
                            const std::vector<std::vector<std::uint8_t>>& targets,
                            const std::vector<Tensor<T>>& codes, const LossWeights& w) {
  w.validate();
  if (logits.size() != kNumSourceViews || codes.size() != kNumSourceViews ||
      targets.size() != kNumTargetViews) {
    throw InputError("Shape MAE loss needs 4 x 6 predictions, 6 targets and 4 codes");
  }
  ShapeMaeLoss out;
  for (int i = 0; i < kNumSourceViews; ++i) {
    if (logits[i].size() != kNumTargetViews) {
      throw InputError("Shape MAE loss: source " + std::string(kViewNames[i]) +
                       " does not have 6 predictions");
    }
    for (int j = 0; j < kNumTargetViews; ++j) {
      const auto ce = nn::cross_entropy_per_sample(logits[i][j], targets[j]);
      double mean = 0.0;
      for (double v : ce) mean += v;
      mean /= static_cast<double>(ce.size());
      if (i == j) {
        out.intra += mean;
        ++out.intra_pairs;
      } else {
        out.inter += mean;
        ++out.inter_pairs;
      }
    }
  }
  out.reg = code_regularizer(codes);
  out.total = out.intra + w.alpha * out.inter + w.beta * out.reg;
  return out;
}

// --------------------------------------------------------------- model

template <typename T>
ShapeMae<T>::ShapeMae(const ShapeMaeConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  for (auto& e : encoders_) e = ViewEncoder<T>(cfg_);
  for (auto& d : decoders_) d = ViewDecoder<T>(cfg_);
}

template <typename T>
void ShapeMae<T>::init(std::uint64_t seed) {
  for (int i = 0; i < kNumSourceViews; ++i) {
    Rng rng(mix_seed(seed, 100 + i));
    encoders_[i].init(rng);
  }
  for (int j = 0; j < kNumTargetViews; ++j) {
    Rng rng(mix_seed(seed, 200 + j));
    decoders_[j].init(rng);
  }
}

template <typename T>
void ShapeMae<T>::check_source(const Tensor<T>& x, int i) const {
  if (i < 0 || i >= kNumSourceViews) {
    throw IndexError("source view index " + std::to_string(i) + " out of range [0, 4)");
  }
  if (x.c() != 1 || x.h() != cfg_.image_size || x.w() != cfg_.image_size || x.n() < 1) {
    throw ShapeError("encoder input must be (N, 1, " + std::to_string(cfg_.image_size) + ", " +
                     std::to_string(cfg_.image_size) + "), got " + nn::shape_string(x.shape()));
  }
}

template <typename T>
Tensor<T> ShapeMae<T>::encode(const Tensor<T>& x, int i, Mode mode) {
  check_source(x, i);
  return encoders_[i].forward(x, mode);
}

template <typename T>
std::vector<float> ShapeMae<T>::encode(const Image& image, int i) {
  if (image.rows() != cfg_.image_size || image.cols() != cfg_.image_size) {
    throw ShapeError("encoder input must be " + std::to_string(cfg_.image_size) + "x" +
                     std::to_string(cfg_.image_size));
  }
  Tensor<T> x(1, 1, image.rows(), image.cols());
  copy_image(image, x.data());
  const Tensor<T> z = encode(x, i, Mode::kEval);
  return std::vector<float>(z.data(), z.data() + z.size());
}

template <typename T>
Tensor<T> ShapeMae<T>::decode(const Tensor<T>& code, int j, Mode mode) {
  if (j < 0 || j >= kNumTargetViews) {
    throw IndexError("target view index " + std::to_string(j) + " out of range [0, 6)");
  }
  const int g = cfg_.code_grid();
  if (code.c() != cfg_.code_channels || code.h() != g || code.w() != g) {
    throw ShapeError("decoder input must be (N, " + std::to_string(cfg_.code_channels) + ", " +
                     std::to_string(g) + ", " + std::to_string(g) + "), got " +
                     nn::shape_string(code.shape()));
  }
  return decoders_[j].forward(code, mode);
}

template <typename T>
ShapeMaeOutputs<T> ShapeMae<T>::forward_all(
    const std::array<Tensor<T>, kNumSourceViews>& sources, Mode mode) {
  ShapeMaeOutputs<T> out;
  for (int i = 0; i < kNumSourceViews; ++i) out.codes.push_back(encode(sources[i], i, mode));
  out.logits.resize(kNumSourceViews);
  for (int i = 0; i < kNumSourceViews; ++i) {
    for (int j = 0; j < kNumTargetViews; ++j) out.logits[i].push_back(decode(out.codes[i], j, mode));
  }
  return out;
}

template <typename T>
ShapeMaeOutputs<T> ShapeMae<T>::forward_all(const Subject& subject) {
  const auto batch = make_shape_mae_batch<T>({&subject});
  return forward_all(batch.sources, Mode::kEval);
}

template <typename T>
ShapeMaeLoss ShapeMae<T>::loss(const ShapeMaeBatch<T>& batch, const LossWeights& w) {
  const auto out = forward_all(batch.sources, Mode::kEval);
  return shape_mae_loss(out.logits,
                        std::vector<std::vector<std::uint8_t>>(batch.targets.begin(), batch.targets.end()),
                        out.codes, w);
}

template <typename T>
ShapeMaeLoss ShapeMae<T>::accumulate_gradients(const ShapeMaeBatch<T>& batch, const LossWeights& w,
                                               std::vector<Tensor<T>>* dcodes_out) {
  w.validate();
  const int n = batch.size();
  std::vector<Tensor<T>> codes;
  for (int i = 0; i < kNumSourceViews; ++i) codes.push_back(encode(batch.sources[i], i, Mode::kTrain));
  std::vector<Tensor<T>> dcodes;
  for (const auto& z : codes) dcodes.emplace_back(z.shape());

  // Every decoder sees the codes of all four sources at once.
  const Tensor<T> stacked = stack_batches(codes);
  std::vector<double> weights(static_cast<std::size_t>(kNumSourceViews) * n);
  ShapeMaeLoss out;
  for (int j = 0; j < kNumTargetViews; ++j) {
    std::vector<std::uint8_t> labels;
    labels.reserve(batch.targets[j].size() * kNumSourceViews);
    for (int i = 0; i < kNumSourceViews; ++i) {
      labels.insert(labels.end(), batch.targets[j].begin(), batch.targets[j].end());
    }
    const Tensor<T> logits = decoders_[j].forward(stacked, Mode::kTrain);
    const auto ce = nn::cross_entropy_per_sample(logits, labels);
    for (int i = 0; i < kNumSourceViews; ++i) {
      double mean = 0.0;
      for (int s = 0; s < n; ++s) mean += ce[i * n + s];
      mean /= n;
      const double wt = i == j ? 1.0 : w.alpha;
      if (i == j) {
        out.intra += mean;
        ++out.intra_pairs;
      } else {
        out.inter += mean;
        ++out.inter_pairs;
      }
      for (int s = 0; s < n; ++s) weights[i * n + s] = wt / n;
    }
    const Tensor<T> dstack = decoders_[j].backward(nn::cross_entropy_grad(logits, labels, weights));
    for (int i = 0; i < kNumSourceViews; ++i) add_slice(dstack, i * n, dcodes[i]);
  }
  out.reg = code_regularizer(codes);
  out.total = out.intra + w.alpha * out.inter + w.beta * out.reg;
  if (w.beta != 0.0) {
    const auto rg = code_regularizer_grad(codes);
    for (int i = 0; i < kNumSourceViews; ++i) {
      for (std::size_t k = 0; k < rg[i].size(); ++k) dcodes[i][k] += static_cast<T>(w.beta * rg[i][k]);
    }
  }
  for (int i = 0; i < kNumSourceViews; ++i) encoders_[i].backward(dcodes[i]);
  if (dcodes_out) *dcodes_out = std::move(dcodes);
  return out;
}

template <typename T>
nn::ParamList<T> ShapeMae<T>::params() {
  nn::ParamList<T> out;
  for (int i = 0; i < kNumSourceViews; ++i) encoders_[i].collect("enc" + std::to_string(i + 1), out);
  for (int j = 0; j < kNumTargetViews; ++j) decoders_[j].collect("dec" + std::to_string(j + 1), out);
  return out;
}

template <typename T>
std::size_t ShapeMae<T>::count_conv_weights() {
  return params().conv_weight_count();
}

template <typename T>
PriorCodes encode_subject(ShapeMae<T>& model, const Subject& subject) {
  PriorCodes codes;
  for (int i = 0; i < kNumSourceViews; ++i) {
    const Image& img = subject.source_view(i);
    if (img.empty()) {
      throw InputError("subject " + subject.id + " is missing source view " + kViewNames[i]);
    }
    codes[i] = model.encode(img, i);
  }
  return codes;
}

EncodeSummary encode_priors(const DatasetManifest& manifest, ShapeMae<float>& model,
                            const fs::path& priors_dir) {
  fs::create_directories(priors_dir);
  EncodeSummary summary;
  for (const auto& e : manifest.subjects) {
    try {
      const Subject s = read_subject(manifest.subject_dir(e.id));
      write_priors(prior_path(priors_dir, e.id), encode_subject(model, s));
      ++summary.written;
    } catch (const Error& err) {
      summary.failures.emplace_back(e.id, err.what());
    }
  }
  return summary;
}

#define MVSEG_INSTANTIATE(T)                                                                  \
  template class ViewEncoder<T>;                                                              \
  template class ViewDecoder<T>;                                                              \
  template class ShapeMae<T>;                                                                 \
  template ShapeMaeBatch<T> make_shape_mae_batch(const std::vector<const Subject*>&);         \
  template ShapeMaeLoss shape_mae_loss(const std::vector<std::vector<Tensor<T>>>&,            \
                                       const std::vector<std::vector<std::uint8_t>>&,         \
                                       const std::vector<Tensor<T>>&, const LossWeights&);    \
  template double code_regularizer(const std::vector<Tensor<T>>&);                            \
  template std::vector<Tensor<T>> code_regularizer_grad(const std::vector<Tensor<T>>&);       \
  template double mean_pairwise_code_distance(const std::vector<Tensor<T>>&);                 \
  template PriorCodes encode_subject(ShapeMae<T>&, const Subject&);

MVSEG_INSTANTIATE(float)
MVSEG_INSTANTIATE(double)

}  // namespace mvseg
