#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvseg/blocks.hpp"
#include "mvseg/datastore.hpp"
#include "mvseg/phantom.hpp"

namespace mvseg {

struct ShapeMaeConfig {
  int image_size = 128;
  // Encoder stage widths; the decoder runs them in reverse.
  std::array<int, 4> widths{16, 32, 64, 64};
  int code_channels = 8;
  nn::BlockConstants constants;

  int code_grid() const { return image_size / 16; }
  int code_size() const { return code_channels * code_grid() * code_grid(); }
  void validate() const;
};

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.001;
  void validate() const;
};

struct ShapeMaeLoss {
  double total = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double reg = 0.0;
  int intra_pairs = 0;
  int inter_pairs = 0;
};

// E_i: image (N, 1, S, S) -> code (N, C, S/16, S/16) in (0, 1).
template <typename T>
class ViewEncoder {
 public:
  ViewEncoder() = default;
  explicit ViewEncoder(const ShapeMaeConfig& cfg);

  nn::Tensor<T> forward(const nn::Tensor<T>& x, nn::Mode mode);
  void backward(const nn::Tensor<T>& dcode);
  void init(Rng& rng);
  void collect(const std::string& prefix, nn::ParamList<T>& out);

 private:
  std::array<nn::ConvNormAct<T>, 4> down_;
  std::array<nn::ResBlock<T>, 4> res_;
  nn::Conv2d<T> head_;
  nn::Sigmoid<T> sigmoid_;
};

// D_j: code -> 2-class logits (N, 2, S, S).
template <typename T>
class ViewDecoder {
 public:
  ViewDecoder() = default;
  explicit ViewDecoder(const ShapeMaeConfig& cfg);

  nn::Tensor<T> forward(const nn::Tensor<T>& code, nn::Mode mode);
  nn::Tensor<T> backward(const nn::Tensor<T>& dlogits);
  void init(Rng& rng);
  void collect(const std::string& prefix, nn::ParamList<T>& out);

 private:
  nn::ConvNormAct<T> stem_;
  std::array<nn::ResBlock<T>, 4> res_;
  std::array<nn::ConvTranspose2x2<T>, 4> up_;
  std::array<nn::Normalization<T>, 4> up_norm_;
  std::array<nn::Activation<T>, 4> up_act_;
  nn::Conv2d<T> head_;
};

// One training batch: source views stacked per view, target masks as
// flattened label maps (N * S * S).
template <typename T>
struct ShapeMaeBatch {
  std::array<nn::Tensor<T>, kNumSourceViews> sources;
  std::array<std::vector<std::uint8_t>, kNumTargetViews> targets;
  int size() const { return sources[0].n(); }
};

template <typename T>
ShapeMaeBatch<T> make_shape_mae_batch(const std::vector<const Subject*>& subjects);

template <typename T>
struct ShapeMaeOutputs {
  std::vector<nn::Tensor<T>> codes;                // 4 x (N, C, g, g)
  std::vector<std::vector<nn::Tensor<T>>> logits;  // [i][j] = D_j(E_i(X_i))
};

// Batch-mean loss: per sample, intra sums the 4 pairs i == j, inter the 20
// pairs i != j, reg = mean_i ||z_i - z_mean||^2.
template <typename T>
ShapeMaeLoss shape_mae_loss(const std::vector<std::vector<nn::Tensor<T>>>& logits,
                            const std::vector<std::vector<std::uint8_t>>& targets,
                            const std::vector<nn::Tensor<T>>& codes, const LossWeights& w);

// Batch-mean code regularizer and its gradient w.r.t. each code.
template <typename T>
double code_regularizer(const std::vector<nn::Tensor<T>>& codes);
template <typename T>
std::vector<nn::Tensor<T>> code_regularizer_grad(const std::vector<nn::Tensor<T>>& codes);

// Mean pairwise Euclidean distance between the four codes of each sample,
// averaged over samples.
template <typename T>
double mean_pairwise_code_distance(const std::vector<nn::Tensor<T>>& codes);

template <typename T>
class ShapeMae {
 public:
  explicit ShapeMae(const ShapeMaeConfig& cfg = {});
  ShapeMae(const ShapeMae&) = delete;
  ShapeMae& operator=(const ShapeMae&) = delete;

  const ShapeMaeConfig& config() const { return cfg_; }
  void init(std::uint64_t seed);

  // View indices are 0-based: sources 0..3, targets 0..5.
  nn::Tensor<T> encode(const nn::Tensor<T>& x, int i, nn::Mode mode = nn::Mode::kEval);
  std::vector<float> encode(const Image& image, int i);
  nn::Tensor<T> decode(const nn::Tensor<T>& code, int j, nn::Mode mode = nn::Mode::kEval);

  ShapeMaeOutputs<T> forward_all(const std::array<nn::Tensor<T>, kNumSourceViews>& sources,
                                 nn::Mode mode = nn::Mode::kEval);
  ShapeMaeOutputs<T> forward_all(const Subject& subject);

  ShapeMaeLoss loss(const ShapeMaeBatch<T>& batch, const LossWeights& w);

  // Forward + backward; accumulates d(loss)/d(param) into the parameter
  // grads. When `dcodes` is given it receives d(loss)/d(code) per view.
  ShapeMaeLoss accumulate_gradients(const ShapeMaeBatch<T>& batch, const LossWeights& w,
                                    std::vector<nn::Tensor<T>>* dcodes = nullptr);

  nn::ParamList<T> params();
  std::size_t count_conv_weights();

 private:
  void check_source(const nn::Tensor<T>& x, int i) const;

  ShapeMaeConfig cfg_;
  std::array<ViewEncoder<T>, kNumSourceViews> encoders_;
  std::array<ViewDecoder<T>, kNumTargetViews> decoders_;
};

template <typename T>
PriorCodes encode_subject(ShapeMae<T>& model, const Subject& subject);

struct EncodeSummary {
  int written = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // id, message
};

// Writes <priors_dir>/<id>.f32le for every subject of the manifest.
EncodeSummary encode_priors(const DatasetManifest& manifest, ShapeMae<float>& model,
                            const fs::path& priors_dir);

}  // namespace mvseg
