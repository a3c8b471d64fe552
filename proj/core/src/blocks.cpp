#include "mvseg/blocks.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace mvseg::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void check_channels(const Tensor<T>& x, int c, const char* what) {
  if (x.c() != c) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(c) +
                     " input channels, got shape " + shape_string(x.shape()));
  }
}

// First / one-past-last output index whose input tap (o*stride + k - pad)
// falls inside [0, n).
inline void valid_range(int n, int out_n, int k, int stride, int pad, int& lo, int& hi) {
  const int off = k - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = n - 1 - off;
  hi = last < 0 ? 0 : std::min(out_n, last / stride + 1);
  lo = std::min(lo, hi);
}

}  // namespace

const char* to_string(NormKind k) {
  switch (k) {
    case NormKind::kNone: return "none";
    case NormKind::kInstance: return "instance";
    case NormKind::kBatch: return "batch";
  }
  return "?";
}

const char* to_string(ActKind k) {
  switch (k) {
    case ActKind::kNone: return "none";
    case ActKind::kLeakyRelu: return "leaky_relu";
    case ActKind::kRelu: return "relu";
  }
  return "?";
}

template <typename T>
std::size_t ParamList<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : params) n += e.param->value.size();
  return n;
}

template <typename T>
std::size_t ParamList<T>::conv_weight_count() const {
  std::size_t n = 0;
  for (const auto& e : params) {
    if (e.param->conv_kernel) n += e.param->value.size();
  }
  return n;
}

template <typename T>
void fan_in_uniform(Tensor<T>& t, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad) {
  if (in_ <= 0 || out_ <= 0 || k_ <= 0 || stride_ <= 0 || pad_ < 0) {
    throw ConfigError("invalid Conv2d geometry");
  }
  weight.resize({out_, in_, k_, k_});
  weight.conv_kernel = true;
  bias.resize({1, out_, 1, 1});
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const int fan_in = in_ * k_ * k_;
  fan_in_uniform(weight.value, fan_in, rng);
  fan_in_uniform(bias.value, fan_in, rng);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

template <typename T>
void Conv2d<T>::im2col(const T* x, int h, int w, T* col) const {
  const int ho = output_size(h);
  const int wo = output_size(w);
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < in_; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k_; ++ky) {
      int oy_lo, oy_hi;
      valid_range(h, ho, ky, stride_, pad_, oy_lo, oy_hi);
      for (int kx = 0; kx < k_; ++kx) {
        int ox_lo, ox_hi;
        valid_range(w, wo, kx, stride_, pad_, ox_lo, ox_hi);
        T* dst = col + ((static_cast<std::size_t>(ci) * k_ + ky) * k_ + kx) * p;
        std::fill(dst, dst + static_cast<std::size_t>(oy_lo) * wo, T(0));
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          T* row = dst + static_cast<std::size_t>(oy) * wo;
          const T* src = xc + static_cast<std::size_t>(oy * stride_ + ky - pad_) * w;
          std::fill(row, row + ox_lo, T(0));
          if (stride_ == 1) {
            std::copy(src + ox_lo + kx - pad_, src + ox_hi + kx - pad_, row + ox_lo);
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox) row[ox] = src[ox * stride_ + kx - pad_];
          }
          std::fill(row + ox_hi, row + wo, T(0));
        }
        std::fill(dst + static_cast<std::size_t>(oy_hi) * wo, dst + p, T(0));
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, int h, int w, T* dx) const {
  const int ho = output_size(h);
  const int wo = output_size(w);
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  std::fill(dx, dx + static_cast<std::size_t>(in_) * h * w, T(0));
  for (int ci = 0; ci < in_; ++ci) {
    T* xc = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k_; ++ky) {
      int oy_lo, oy_hi;
      valid_range(h, ho, ky, stride_, pad_, oy_lo, oy_hi);
      for (int kx = 0; kx < k_; ++kx) {
        int ox_lo, ox_hi;
        valid_range(w, wo, kx, stride_, pad_, ox_lo, ox_hi);
        const T* src = col + ((static_cast<std::size_t>(ci) * k_ + ky) * k_ + kx) * p;
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          const T* row = src + static_cast<std::size_t>(oy) * wo;
          T* dst = xc + static_cast<std::size_t>(oy * stride_ + ky - pad_) * w;
          for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox * stride_ + kx - pad_] += row[ox];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  check_channels(x, in_, "Conv2d");
  const int ho = output_size(x.h());
  const int wo = output_size(x.w());
  if (ho <= 0 || wo <= 0) throw ShapeError("Conv2d: input too small " + shape_string(x.shape()));
  input_ = x;
  Tensor<T> y(x.n(), out_, ho, wo);
  const int kk = in_ * k_ * k_;
  const int p = ho * wo;
  ConstMatMap<T> wm(weight.value.data(), out_, kk);
  if (!pointwise()) col_.resize(static_cast<std::size_t>(kk) * p);
  for (int i = 0; i < x.n(); ++i) {
    const T* colp = x.sample(i);
    if (!pointwise()) {
      im2col(x.sample(i), x.h(), x.w(), col_.data());
      colp = col_.data();
    }
    MatMap<T> ym(y.sample(i), out_, p);
    ym.noalias() = wm * ConstMatMap<T>(colp, kk, p);
    for (int co = 0; co < out_; ++co) ym.row(co).array() += bias.value[co];
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_dx) {
  const int ho = output_size(input_.h());
  const int wo = output_size(input_.w());
  expect_shape(dy.shape(), {input_.n(), out_, ho, wo}, "Conv2d backward");
  const int kk = in_ * k_ * k_;
  const int p = ho * wo;
  ConstMatMap<T> wm(weight.value.data(), out_, kk);
  MatMap<T> dw(weight.grad.data(), out_, kk);
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(input_.shape());
  AlignedVector<T> dcol;
  if (need_dx && !pointwise()) dcol.resize(static_cast<std::size_t>(kk) * p);
  if (!pointwise()) col_.resize(static_cast<std::size_t>(kk) * p);
  for (int i = 0; i < input_.n(); ++i) {
    ConstMatMap<T> dym(dy.sample(i), out_, p);
    const T* colp = input_.sample(i);
    if (!pointwise()) {
      im2col(input_.sample(i), input_.h(), input_.w(), col_.data());
      colp = col_.data();
    }
    dw.noalias() += dym * ConstMatMap<T>(colp, kk, p).transpose();
    for (int co = 0; co < out_; ++co) bias.grad[co] += dym.row(co).sum();
    if (!need_dx) continue;
    if (pointwise()) {
      MatMap<T>(dx.sample(i), kk, p).noalias() = wm.transpose() * dym;
    } else {
      MatMap<T>(dcol.data(), kk, p).noalias() = wm.transpose() * dym;
      col2im(dcol.data(), input_.h(), input_.w(), dx.sample(i));
    }
  }
  return dx;
}

// ------------------------------------------------------ ConvTranspose2x2

template <typename T>
ConvTranspose2x2<T>::ConvTranspose2x2(int in_channels, int out_channels)
    : in_(in_channels), out_(out_channels) {
  if (in_ <= 0 || out_ <= 0) throw ConfigError("invalid ConvTranspose2x2 channels");
  weight.resize({in_, out_, 2, 2});
  weight.conv_kernel = true;
  bias.resize({1, out_, 1, 1});
}

template <typename T>
void ConvTranspose2x2<T>::init(Rng& rng) {
  // Each output pixel receives exactly `in_` taps.
  fan_in_uniform(weight.value, in_, rng);
  fan_in_uniform(bias.value, in_, rng);
}

template <typename T>
void ConvTranspose2x2<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

template <typename T>
Tensor<T> ConvTranspose2x2<T>::forward(const Tensor<T>& x) {
  check_channels(x, in_, "ConvTranspose2x2");
  input_ = x;
  const int h = x.h(), w = x.w(), p = h * w;
  Tensor<T> y(x.n(), out_, 2 * h, 2 * w);
  ConstMatMap<T> wm(weight.value.data(), in_, out_ * 4);
  RowMat<T> tmp(out_ * 4, p);
  for (int i = 0; i < x.n(); ++i) {
    tmp.noalias() = wm.transpose() * ConstMatMap<T>(x.sample(i), in_, p);
    T* ys = y.sample(i);
    for (int co = 0; co < out_; ++co) {
      const T b = bias.value[co];
      T* yc = ys + static_cast<std::size_t>(co) * 4 * p;
      for (int d = 0; d < 4; ++d) {
        const int dy = d / 2, dx = d % 2;
        const T* src = tmp.data() + static_cast<std::size_t>(co * 4 + d) * p;
        for (int r = 0; r < h; ++r) {
          T* dst = yc + static_cast<std::size_t>(2 * r + dy) * 2 * w + dx;
          const T* s = src + static_cast<std::size_t>(r) * w;
          for (int c = 0; c < w; ++c) dst[2 * c] = s[c] + b;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2x2<T>::backward(const Tensor<T>& dy) {
  const int h = input_.h(), w = input_.w(), p = h * w;
  expect_shape(dy.shape(), {input_.n(), out_, 2 * h, 2 * w}, "ConvTranspose2x2 backward");
  ConstMatMap<T> wm(weight.value.data(), in_, out_ * 4);
  MatMap<T> dw(weight.grad.data(), in_, out_ * 4);
  Tensor<T> dx(input_.shape());
  RowMat<T> g(out_ * 4, p);
  for (int i = 0; i < input_.n(); ++i) {
    const T* ds = dy.sample(i);
    for (int co = 0; co < out_; ++co) {
      const T* dc = ds + static_cast<std::size_t>(co) * 4 * p;
      double bsum = 0.0;
      for (int d = 0; d < 4; ++d) {
        const int oy = d / 2, ox = d % 2;
        T* dst = g.data() + static_cast<std::size_t>(co * 4 + d) * p;
        for (int r = 0; r < h; ++r) {
          const T* src = dc + static_cast<std::size_t>(2 * r + oy) * 2 * w + ox;
          for (int c = 0; c < w; ++c) {
            dst[r * w + c] = src[2 * c];
            bsum += src[2 * c];
          }
        }
      }
      bias.grad[co] += static_cast<T>(bsum);
    }
    ConstMatMap<T> xm(input_.sample(i), in_, p);
    dw.noalias() += xm * g.transpose();
    MatMap<T>(dx.sample(i), in_, p).noalias() = wm * g;
  }
  return dx;
}

// --------------------------------------------------------- Normalization

template <typename T>
Normalization<T>::Normalization(NormKind kind, int channels, const BlockConstants& k)
    : kind_(kind), channels_(channels), eps_(k.norm_eps), momentum_(k.bn_momentum) {
  if (kind_ == NormKind::kNone) return;
  gamma.resize({1, channels, 1, 1});
  beta.resize({1, channels, 1, 1});
  init();
  if (kind_ == NormKind::kBatch) {
    running_mean = Tensor<T>(1, channels, 1, 1, T(0));
    running_var = Tensor<T>(1, channels, 1, 1, T(1));
  }
}

template <typename T>
void Normalization<T>::init() {
  if (kind_ == NormKind::kNone) return;
  gamma.value.fill(T(1));
  beta.value.fill(T(0));
}

template <typename T>
void Normalization<T>::collect(const std::string& prefix, ParamList<T>& out) {
  if (kind_ == NormKind::kNone) return;
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  if (kind_ == NormKind::kBatch) {
    out.add_buffer(prefix + ".running_mean", running_mean);
    out.add_buffer(prefix + ".running_var", running_var);
  }
}

template <typename T>
Tensor<T> Normalization<T>::forward(const Tensor<T>& x, Mode mode) {
  if (kind_ == NormKind::kNone) return x;
  check_channels(x, channels_, "Normalization");
  const int n = x.n(), c = channels_;
  const std::size_t hw = x.plane();
  xhat_ = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());

  auto apply = [&](int ch, std::size_t offset, double mean, double inv_std) {
    const T g = gamma.value[ch], b = beta.value[ch];
    for (std::size_t k = 0; k < hw; ++k) {
      const T xh = static_cast<T>((x[offset + k] - mean) * inv_std);
      xhat_[offset + k] = xh;
      y[offset + k] = g * xh + b;
    }
  };

  if (kind_ == NormKind::kInstance) {
    used_batch_stats_ = true;
    inv_std_.assign(static_cast<std::size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
        double mean = 0.0;
        for (std::size_t k = 0; k < hw; ++k) mean += x[off + k];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = x[off + k] - mean;
          var += d * d;
        }
        var /= static_cast<double>(hw);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[static_cast<std::size_t>(i) * c + ch] = inv;
        apply(ch, off, mean, inv);
      }
    }
    return y;
  }

  // Batch normalization.
  inv_std_.assign(c, 0.0);
  used_batch_stats_ = mode == Mode::kTrain;
  const double m = static_cast<double>(n) * static_cast<double>(hw);
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (used_batch_stats_) {
      mean = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) mean += x[off + k];
      }
      mean /= m;
      var = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = x[off + k] - mean;
          var += d * d;
        }
      }
      var /= m;
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      running_mean[ch] = static_cast<T>((1.0 - momentum_) * running_mean[ch] + momentum_ * mean);
      running_var[ch] = static_cast<T>((1.0 - momentum_) * running_var[ch] + momentum_ * unbiased);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[ch] = inv;
    for (int i = 0; i < n; ++i) apply(ch, (static_cast<std::size_t>(i) * c + ch) * hw, mean, inv);
  }
  return y;
}

template <typename T>
Tensor<T> Normalization<T>::backward(const Tensor<T>& dy) {
  if (kind_ == NormKind::kNone) return dy;
  expect_shape(dy.shape(), xhat_.shape(), "Normalization backward");
  const int n = dy.n(), c = channels_;
  const std::size_t hw = dy.plane();
  Tensor<T> dx(dy.shape());

  // Affine gradients.
  for (int ch = 0; ch < c; ++ch) {
    double dg = 0.0, db = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        dg += static_cast<double>(dy[off + k]) * xhat_[off + k];
        db += dy[off + k];
      }
    }
    gamma.grad[ch] += static_cast<T>(dg);
    beta.grad[ch] += static_cast<T>(db);
  }

  if (!used_batch_stats_) {
    for (int ch = 0; ch < c; ++ch) {
      const double s = gamma.value[ch] * inv_std_[ch];
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) dx[off + k] = static_cast<T>(dy[off + k] * s);
      }
    }
    return dx;
  }

  // dx = inv_std/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)) per group.
  auto group_backward = [&](int ch, const std::vector<std::size_t>& offsets, double inv) {
    const double g = gamma.value[ch];
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t off : offsets) {
      for (std::size_t k = 0; k < hw; ++k) {
        const double d = dy[off + k] * g;
        s1 += d;
        s2 += d * xhat_[off + k];
      }
    }
    const double m = static_cast<double>(offsets.size() * hw);
    const double mean1 = s1 / m, mean2 = s2 / m;
    for (std::size_t off : offsets) {
      for (std::size_t k = 0; k < hw; ++k) {
        const double d = dy[off + k] * g;
        dx[off + k] = static_cast<T>(inv * (d - mean1 - xhat_[off + k] * mean2));
      }
    }
  };

  std::vector<std::size_t> offsets;
  if (kind_ == NormKind::kInstance) {
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        offsets.assign(1, (static_cast<std::size_t>(i) * c + ch) * hw);
        group_backward(ch, offsets, inv_std_[static_cast<std::size_t>(i) * c + ch]);
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      offsets.clear();
      for (int i = 0; i < n; ++i) offsets.push_back((static_cast<std::size_t>(i) * c + ch) * hw);
      group_backward(ch, offsets, inv_std_[ch]);
    }
  }
  return dx;
}

// ----------------------------------------------------------- Activation

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x) {
  if (kind_ == ActKind::kNone) return x;
  const T slope = negative_slope();
  Tensor<T> y(x.shape());
  positive_.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool pos = x[i] > T(0);
    positive_[i] = pos;
    y[i] = pos ? x[i] : (slope == T(0) ? T(0) : x[i] * slope);
  }
  return y;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& dy) const {
  if (kind_ == ActKind::kNone) return dy;
  if (dy.size() != positive_.size()) throw ShapeError("Activation backward: size mismatch");
  const T slope = negative_slope();
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = positive_[i] ? dy[i] : dy[i] * slope;
  return dx;
}

// -------------------------------------------------------------- MaxPool2

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ShapeError("MaxPool2 needs even spatial size, got " + shape_string(x.shape()));
  }
  input_shape_ = x.shape();
  const int ho = x.h() / 2, wo = x.w() / 2;
  Tensor<T> y(x.n(), x.c(), ho, wo);
  argmax_.resize(y.size());
  std::size_t o = 0;
  for (int i = 0; i < x.n(); ++i) {
    for (int ch = 0; ch < x.c(); ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * x.c() + ch) * x.plane();
      for (int r = 0; r < ho; ++r) {
        for (int c = 0; c < wo; ++c, ++o) {
          std::size_t best = base + static_cast<std::size_t>(2 * r) * x.w() + 2 * c;
          const std::size_t cand[3] = {best + 1, best + x.w(), best + x.w() + 1};
          for (std::size_t k : cand) {
            if (x[k] > x[best]) best = k;
          }
          y[o] = x[best];
          argmax_[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) const {
  if (dy.size() != argmax_.size()) throw ShapeError("MaxPool2 backward: size mismatch");
  Tensor<T> dx(input_shape_);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
  return dx;
}

// --------------------------------------------------------------- Sigmoid

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
  output_ = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    output_[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
  }
  return output_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& dy) const {
  expect_shape(dy.shape(), output_.shape(), "Sigmoid backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * output_[i] * (T(1) - output_[i]);
  return dx;
}

// ----------------------------------------------------------- ConvNormAct

template <typename T>
ConvNormAct<T>::ConvNormAct(int in, int out, int kernel, int stride, int pad, NormKind norm_kind,
                            ActKind act, const BlockConstants& k)
    : conv(in, out, kernel, stride, pad), norm(norm_kind, out, k), act_(act, k.leaky_slope) {}

template <typename T>
Tensor<T> ConvNormAct<T>::forward(const Tensor<T>& x, Mode mode) {
  return act_.forward(norm.forward(conv.forward(x), mode));
}

template <typename T>
Tensor<T> ConvNormAct<T>::backward(const Tensor<T>& dy, bool need_dx) {
  return conv.backward(norm.backward(act_.backward(dy)), need_dx);
}

template <typename T>
void ConvNormAct<T>::init(Rng& rng) {
  conv.init(rng);
  norm.init();
}

template <typename T>
void ConvNormAct<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv.collect(prefix + ".conv", out);
  norm.collect(prefix + ".norm", out);
}

// -------------------------------------------------------------- ResBlock

template <typename T>
ResBlock<T>::ResBlock(int channels, NormKind norm, ActKind act, const BlockConstants& k)
    : conv1(channels, channels, 3, 1, 1),
      norm1(norm, channels, k),
      conv2(channels, channels, 3, 1, 1),
      channels_(channels),
      act1_(act, k.leaky_slope) {}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  check_channels(x, channels_, "ResBlock");
  Tensor<T> y = conv2.forward(act1_.forward(norm1.forward(conv1.forward(x), mode)));
  y += x;
  return y;
}

template <typename T>
Tensor<T> ResBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx = conv1.backward(norm1.backward(act1_.backward(conv2.backward(dy))));
  dx += dy;
  return dx;
}

template <typename T>
void ResBlock<T>::init(Rng& rng) {
  conv1.init(rng);
  norm1.init();
  conv2.init(rng);
}

template <typename T>
void ResBlock<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
}

// ------------------------------------------------------------ losses

namespace {

template <typename T>
void check_logits(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  if (labels.size() != static_cast<std::size_t>(logits.n()) * logits.plane()) {
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) +
                     " labels for logits of shape " + shape_string(logits.shape()));
  }
  for (auto v : logits.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericalError("cross entropy: non-finite logit");
    }
  }
  for (auto l : labels) {
    if (l >= logits.c()) throw InputError("cross entropy: label out of range");
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  const std::size_t hw = logits.plane();
  const int c = logits.c();
  for (int i = 0; i < logits.n(); ++i) {
    const T* s = logits.sample(i);
    T* o = out.sample(i);
    for (std::size_t k = 0; k < hw; ++k) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, static_cast<double>(s[ch * hw + k]));
      double z = 0.0;
      for (int ch = 0; ch < c; ++ch) z += std::exp(s[ch * hw + k] - mx);
      for (int ch = 0; ch < c; ++ch) o[ch * hw + k] = static_cast<T>(std::exp(s[ch * hw + k] - mx) / z);
    }
  }
  return out;
}

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  const std::size_t hw = logits.plane();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(logits.n()) * hw);
  for (int i = 0; i < logits.n(); ++i) {
    const T* s = logits.sample(i);
    for (std::size_t k = 0; k < hw; ++k) {
      int best = 0;
      for (int ch = 1; ch < logits.c(); ++ch) {
        if (s[ch * hw + k] > s[best * hw + k]) best = ch;
      }
      out[i * hw + k] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template <typename T>
std::vector<double> cross_entropy_per_sample(const Tensor<T>& logits,
                                             std::span<const std::uint8_t> labels) {
  check_logits(logits, labels);
  const std::size_t hw = logits.plane();
  const int c = logits.c();
  std::vector<double> out(logits.n(), 0.0);
  for (int i = 0; i < logits.n(); ++i) {
    const T* s = logits.sample(i);
    double sum = 0.0;
    for (std::size_t k = 0; k < hw; ++k) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, static_cast<double>(s[ch * hw + k]));
      double z = 0.0;
      for (int ch = 0; ch < c; ++ch) z += std::exp(s[ch * hw + k] - mx);
      sum += mx + std::log(z) - s[labels[i * hw + k] * hw + k];
    }
    out[i] = sum / static_cast<double>(hw);
  }
  return out;
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const auto per = cross_entropy_per_sample(logits, labels);
  double s = 0.0;
  for (double v : per) s += v;
  return per.empty() ? 0.0 : s / static_cast<double>(per.size());
}

template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                             std::span<const double> sample_weights) {
  check_logits(logits, labels);
  if (sample_weights.size() != static_cast<std::size_t>(logits.n())) {
    throw ShapeError("cross_entropy_grad: one weight per sample required");
  }
  Tensor<T> p = softmax(logits);
  const std::size_t hw = logits.plane();
  for (int i = 0; i < logits.n(); ++i) {
    const double scale = sample_weights[i] / static_cast<double>(hw);
    T* g = p.sample(i);
    for (std::size_t k = 0; k < hw; ++k) g[labels[i * hw + k] * hw + k] -= T(1);
    for (std::size_t k = 0; k < p.sample_size(); ++k) g[k] = static_cast<T>(g[k] * scale);
  }
  return p;
}

#define MVSEG_INSTANTIATE(T)                                                                     \
  template struct ParamList<T>;                                                                  \
  template void fan_in_uniform(Tensor<T>&, int, Rng&);                                           \
  template class Conv2d<T>;                                                                      \
  template class ConvTranspose2x2<T>;                                                            \
  template class Normalization<T>;                                                               \
  template class Activation<T>;                                                                  \
  template class MaxPool2<T>;                                                                    \
  template class Sigmoid<T>;                                                                     \
  template class ConvNormAct<T>;                                                                 \
  template class ResBlock<T>;                                                                    \
  template Tensor<T> softmax(const Tensor<T>&);                                                  \
  template std::vector<std::uint8_t> argmax_labels(const Tensor<T>&);                            \
  template std::vector<double> cross_entropy_per_sample(const Tensor<T>&,                        \
                                                        std::span<const std::uint8_t>);          \
  template double cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>);                \
  template Tensor<T> cross_entropy_grad(const Tensor<T>&, std::span<const std::uint8_t>,         \
                                        std::span<const double>);

MVSEG_INSTANTIATE(float)
MVSEG_INSTANTIATE(double)

}  // namespace mvseg::nn
