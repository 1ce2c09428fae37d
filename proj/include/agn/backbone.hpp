#pragma once

// Toy convolutional backbone: three 3x3 convolutions (strides 1, 2, 2) with
// ReLU, producing a feature map at 1/4 resolution. Activations are stored
// pixel-major (HW x C), the same layout graph code uses for FeatureMap.
// Convolutions run as im2col + GEMM.

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

#include "agn/image.hpp"
#include "agn/numcore.hpp"

namespace agn {

/// Spatial features, row-major pixels by channels.
struct FeatureMap {
  int height = 0;
  int width = 0;
  Matrix values;  // (height * width) x C

  [[nodiscard]] std::size_t channels() const noexcept { return values.cols(); }
};

namespace detail {
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// (C x P) column-major view over a row-major (P x C) matrix.
inline Eigen::Map<ColMat> channels_by_pixels(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.cols()), static_cast<Eigen::Index>(m.rows())};
}
inline Eigen::Map<const ColMat> channels_by_pixels(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.cols()), static_cast<Eigen::Index>(m.rows())};
}
inline Eigen::Map<RowMat> as_eigen(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const RowMat> as_eigen(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
}  // namespace detail

struct ConvGeometry {
  int in_h = 0, in_w = 0, in_c = 0;
  int out_h = 0, out_w = 0;
  int stride = 1;
};

/// 3x3 convolution, zero padding 1. Weights are (Cout x 9*Cin) with column
/// index (ky*3 + kx)*Cin + c.
struct ConvLayer {
  Param weight;
  Param bias;  // 1 x Cout
  int stride = 1;

  [[nodiscard]] int in_channels() const { return static_cast<int>(weight.value.cols() / 9); }
  [[nodiscard]] int out_channels() const { return static_cast<int>(weight.value.rows()); }
};

struct ConvCache {
  ConvGeometry geo;
  detail::ColMat col;  // (9*Cin) x P
  Matrix out;          // post-ReLU, P x Cout
};

namespace detail {
/// Zero-padded (H+2) x (W+2) copy, pixel-major.
inline std::vector<double> pad1(const Matrix& in, const ConvGeometry& g) {
  const std::size_t pw = g.in_w + 2, c = g.in_c;
  std::vector<double> out((g.in_h + 2) * pw * c, 0.0);
  for (int y = 0; y < g.in_h; ++y)
    std::copy(in.data() + static_cast<std::size_t>(y) * g.in_w * c, in.data() + static_cast<std::size_t>(y + 1) * g.in_w * c,
              out.data() + ((y + 1) * pw + 1) * c);
  return out;
}

inline ColMat im2col(const Matrix& in, const ConvGeometry& g) {
  const std::size_t k = 9 * g.in_c, c = g.in_c, pw = g.in_w + 2, run = 3 * c;
  const auto padded = pad1(in, g);
  ColMat col(k, static_cast<Eigen::Index>(g.out_h) * g.out_w);
  double* dst = col.data();
  for (int yo = 0; yo < g.out_h; ++yo)
    for (int xo = 0; xo < g.out_w; ++xo)
      for (int ky = 0; ky < 3; ++ky, dst += run) {
        // Padded row yo*s + ky holds input row yo*s + ky - 1; three taps are contiguous.
        const double* src = padded.data() + ((static_cast<std::size_t>(yo) * g.stride + ky) * pw + xo * g.stride) * c;
        std::copy(src, src + run, dst);
      }
  return col;
}

inline void col2im_add(const ColMat& dcol, const ConvGeometry& g, Matrix& din) {
  const std::size_t c = g.in_c, pw = g.in_w + 2, run = 3 * c;
  std::vector<double> padded((g.in_h + 2) * pw * c, 0.0);
  const double* src = dcol.data();
  for (int yo = 0; yo < g.out_h; ++yo)
    for (int xo = 0; xo < g.out_w; ++xo)
      for (int ky = 0; ky < 3; ++ky, src += run) {
        double* dst = padded.data() + ((static_cast<std::size_t>(yo) * g.stride + ky) * pw + xo * g.stride) * c;
        for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
      }
  for (int y = 0; y < g.in_h; ++y) {
    const double* row = padded.data() + ((y + 1) * pw + 1) * c;
    double* out = din.data() + static_cast<std::size_t>(y) * g.in_w * c;
    for (std::size_t i = 0; i < static_cast<std::size_t>(g.in_w) * c; ++i) out[i] += row[i];
  }
}
}  // namespace detail

/// Forward through one conv + ReLU; `in` is (H*W) x Cin.
inline Matrix conv_forward(const ConvLayer& layer, const Matrix& in, int h, int w, ConvCache* cache) {
  const int cin = layer.in_channels(), cout = layer.out_channels();
  if (static_cast<int>(in.cols()) != cin || in.rows() != static_cast<std::size_t>(h) * w)
    fail("conv_forward: input is ", in.rows(), "x", in.cols(), ", expected ", h * w, "x", cin);
  ConvGeometry g{h, w, cin, (h - 1) / layer.stride + 1, (w - 1) / layer.stride + 1, layer.stride};
  detail::ColMat col = detail::im2col(in, g);
  Matrix out(static_cast<std::size_t>(g.out_h) * g.out_w, cout);
  auto o = detail::channels_by_pixels(out);
  o.noalias() = detail::as_eigen(layer.weight.value) * col;
  const auto b = layer.bias.value.row(0);
  for (std::size_t p = 0; p < out.rows(); ++p) {
    auto r = out.row(p);
    for (int c = 0; c < cout; ++c) r[c] = std::max(0.0, r[c] + b[c]);
  }
  if (cache) {
    cache->geo = g;
    cache->col = std::move(col);
    cache->out = out;
  }
  return out;
}

/// Accumulates weight/bias grads; returns dL/d(input) unless `need_input_grad`
/// is false (first layer).
inline Matrix conv_backward(ConvLayer& layer, const ConvCache& cache, const Matrix& d_out, bool need_input_grad) {
  const auto& g = cache.geo;
  Matrix d_pre = d_out;
  for (std::size_t i = 0; i < d_pre.size(); ++i)
    if (cache.out[i] <= 0.0) d_pre[i] = 0.0;
  const auto dp = detail::channels_by_pixels(d_pre);  // Cout x P
  Matrix dw(layer.weight.value.rows(), layer.weight.value.cols());
  detail::as_eigen(dw).noalias() = dp * cache.col.transpose();
  layer.weight.accumulate(dw);
  Matrix db(1, layer.out_channels());
  for (std::size_t p = 0; p < d_pre.rows(); ++p) {
    const auto r = d_pre.row(p);
    for (std::size_t c = 0; c < r.size(); ++c) db[c] += r[c];
  }
  layer.bias.accumulate(db);
  if (!need_input_grad) return {};
  detail::ColMat dcol = detail::as_eigen(layer.weight.value).transpose() * dp;
  Matrix din(static_cast<std::size_t>(g.in_h) * g.in_w, g.in_c);
  detail::col2im_add(dcol, g, din);
  return din;
}

struct BackboneConfig {
  std::array<int, 3> widths = {8, 16, 16};
  std::array<int, 3> strides = {1, 2, 2};
};

struct BackboneCache {
  std::array<ConvCache, 3> layers;
};

inline Matrix standardize(const GrayImage& img) {
  const double n = static_cast<double>(img.pixels.size());
  double mean = 0.0, var = 0.0;
  for (auto p : img.pixels) mean += p;
  mean /= n;
  for (auto p : img.pixels) var += (p - mean) * (p - mean);
  const double sd = std::sqrt(var / n);
  Matrix x(img.pixels.size(), 1);
  // A flat image maps to zeros rather than dividing by zero.
  for (std::size_t i = 0; i < img.pixels.size(); ++i) x[i] = sd > 0.0 ? (img.pixels[i] - mean) / sd : 0.0;
  return x;
}

class Backbone {
 public:
  Backbone() : Backbone(BackboneConfig{}) {}
  explicit Backbone(const BackboneConfig& cfg) {
    int cin = 1;
    for (int l = 0; l < 3; ++l) {
      const std::string n = "backbone.conv" + std::to_string(l + 1);
      layers_[l].weight = Param(n + ".w", cfg.widths[l], 9 * cin);
      layers_[l].bias = Param(n + ".b", 1, cfg.widths[l]);
      layers_[l].stride = cfg.strides[l];
      cin = cfg.widths[l];
    }
  }

  /// He-style uniform init for the weights, zero biases.
  void init(Rng& rng) {
    for (auto& l : layers_) {
      const double a = std::sqrt(6.0 / static_cast<double>(l.weight.value.cols()));
      for (double& v : l.weight.value.values()) v = rng.uniform(-a, a);
      l.bias.value.fill(0.0);
    }
  }

  [[nodiscard]] int out_channels() const { return layers_[2].out_channels(); }
  [[nodiscard]] int total_stride() const { return layers_[0].stride * layers_[1].stride * layers_[2].stride; }

  /// The image is standardized to zero mean, unit variance before conv1.
  FeatureMap forward(const GrayImage& img, BackboneCache* cache = nullptr) const {
    const int s = total_stride();
    if (img.width % s != 0 || img.height % s != 0)
      fail("backbone: image size ", img.width, "x", img.height, " not divisible by ", s);
    Matrix x = standardize(img);
    int h = img.height, w = img.width;
    for (int l = 0; l < 3; ++l) {
      x = conv_forward(layers_[l], x, h, w, cache ? &cache->layers[l] : nullptr);
      h = (h - 1) / layers_[l].stride + 1;
      w = (w - 1) / layers_[l].stride + 1;
    }
    return {h, w, std::move(x)};
  }

  void backward(const BackboneCache& cache, const Matrix& d_features) {
    Matrix d = d_features;
    for (int l = 2; l >= 0; --l) d = conv_backward(layers_[l], cache.layers[l], d, l > 0);
  }

  std::vector<Param*> params() {
    std::vector<Param*> p;
    for (auto& l : layers_) {
      p.push_back(&l.weight);
      p.push_back(&l.bias);
    }
    return p;
  }

  ConvLayer& layer(int i) { return layers_[i]; }

 private:
  std::array<ConvLayer, 3> layers_;
};

}  // namespace agn
