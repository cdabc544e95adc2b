#pragma once

#include "patchssl/image.hpp"
#include "patchssl/nn.hpp"
#include "patchssl/vit.hpp"

#include <string>
#include <vector>

// ResNet-50 truncated after its third residual stage: stem, then bottleneck
// stages of 3, 4 and 6 blocks (widths 256, 512, 1024), then a global mean
// pool. Inference only; batch norm is carried as a per-channel affine.
namespace patchssl::cnn {

inline constexpr int kEmbedDim = 1024;
inline constexpr int kInputSize = 256;

template <typename T>
struct ConvBn {
  int in = 0, out = 0, kernel = 1, stride = 1, pad = 0;
  Mat<T> w;         // out × (in·k·k), columns ordered (channel, ky, kx)
  Mat<T> bn_scale;  // 1 × out
  Mat<T> bn_shift;  // 1 × out

  template <typename F>
  void visit(F&& f, const std::string& p) {
    f(p + "w", w);
    f(p + "bn_scale", bn_scale);
    f(p + "bn_shift", bn_shift);
  }
};

template <typename T>
struct Bottleneck {
  ConvBn<T> reduce, spatial, expand;
  std::optional<ConvBn<T>> downsample;

  template <typename F>
  void visit(F&& f, const std::string& p) {
    reduce.visit(f, p + "conv1.");
    spatial.visit(f, p + "conv2.");
    expand.visit(f, p + "conv3.");
    if (downsample) downsample->visit(f, p + "downsample.");
  }
};

template <typename T>
struct CnnParams {
  using Scalar = T;
  ConvBn<T> stem;
  std::vector<std::vector<Bottleneck<T>>> stages;

  template <typename F>
  void visit(F&& f) {
    stem.visit(f, "stem.");
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].visit(f, "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".");
  }
};

template <typename T>
ConvBn<T> make_conv(int in, int out, int kernel, int stride, int pad, Rng& rng) {
  ConvBn<T> c{in, out, kernel, stride, pad, Mat<T>(out, in * kernel * kernel), Mat<T>::Ones(1, out),
              Mat<T>::Zero(1, out)};
  // Kaiming normal, fan-out mode.
  const double sd = std::sqrt(2.0 / (static_cast<double>(out) * kernel * kernel));
  for (Eigen::Index i = 0; i < c.w.size(); ++i) c.w.data()[i] = static_cast<T>(rng.normal() * sd);
  // Inference-mode batch norm with unit running variance.
  c.bn_scale.setConstant(static_cast<T>(1.0 / std::sqrt(1.0 + 1e-5)));
  return c;
}

/// Random (untrained) weights with the ResNet-50 layer geometry.
template <typename T>
CnnParams<T> init_cnn_b3(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x434e4e5f42330000ULL));
  CnnParams<T> p;
  p.stem = make_conv<T>(3, 64, 7, 2, 3, rng);
  const int widths[3] = {64, 128, 256};
  const int counts[3] = {3, 4, 6};
  int in = 64;
  for (int s = 0; s < 3; ++s) {
    std::vector<Bottleneck<T>> stage;
    for (int b = 0; b < counts[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      const int mid = widths[s], out = widths[s] * 4;
      Bottleneck<T> blk{make_conv<T>(in, mid, 1, 1, 0, rng), make_conv<T>(mid, mid, 3, stride, 1, rng),
                        make_conv<T>(mid, out, 1, 1, 0, rng), std::nullopt};
      if (b == 0) blk.downsample = make_conv<T>(in, out, 1, stride, 0, rng);
      stage.push_back(std::move(blk));
      in = out;
    }
    p.stages.push_back(std::move(stage));
  }
  return p;
}

/// Feature map: channels × (h·w).
template <typename T>
struct FeatureMap {
  int channels = 0, height = 0, width = 0;
  Mat<T> data;
};

template <typename T>
FeatureMap<T> conv_bn(const FeatureMap<T>& x, const ConvBn<T>& c, bool relu) {
  require(x.channels == c.in, "cnn: channel mismatch");
  const int k = c.kernel;
  const int oh = (x.height + 2 * c.pad - k) / c.stride + 1;
  const int ow = (x.width + 2 * c.pad - k) / c.stride + 1;
  FeatureMap<T> y{c.out, oh, ow, Mat<T>(c.out, oh * ow)};
  if (k == 1 && c.stride == 1 && c.pad == 0) {
    y.data.noalias() = c.w * x.data;
  } else {
    Mat<T> cols(static_cast<Eigen::Index>(c.in) * k * k, static_cast<Eigen::Index>(oh) * ow);
    for (int ch = 0; ch < c.in; ++ch)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(ch) * k + ky) * k + kx;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * c.stride - c.pad + ky;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * c.stride - c.pad + kx;
              cols(row, oy * ow + ox) = (iy >= 0 && iy < x.height && ix >= 0 && ix < x.width)
                                            ? x.data(ch, iy * x.width + ix)
                                            : T(0);
            }
          }
        }
    y.data.noalias() = c.w * cols;
  }
  y.data = (y.data.array().colwise() * c.bn_scale.row(0).transpose().array()).colwise() +
           c.bn_shift.row(0).transpose().array();
  if (relu) y.data = y.data.cwiseMax(T(0));
  return y;
}

template <typename T>
FeatureMap<T> max_pool_3x3_s2(const FeatureMap<T>& x) {
  const int oh = (x.height + 2 - 3) / 2 + 1, ow = (x.width + 2 - 3) / 2 + 1;
  FeatureMap<T> y{x.channels, oh, ow, Mat<T>(x.channels, oh * ow)};
  for (int ch = 0; ch < x.channels; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T m = -std::numeric_limits<T>::infinity();
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy >= 0 && iy < x.height && ix >= 0 && ix < x.width) m = std::max(m, x.data(ch, iy * x.width + ix));
          }
        y.data(ch, oy * ow + ox) = m;
      }
  return y;
}

/// 256×256 patch → 1024-d mean-pooled stage-3 features.
template <typename T>
Vec<T> encode_cnn_b3(const CnnParams<T>& p, const Image& patch, const vit::InputNormalization& norm = {}) {
  if (patch.height != kInputSize || patch.width != kInputSize)
    throw Error("encode_cnn_b3: expected a 256x256 patch, got " + std::to_string(patch.height) + "x" +
                std::to_string(patch.width));
  FeatureMap<T> x{3, patch.height, patch.width, Mat<T>(3, patch.height * patch.width)};
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < patch.plane(); ++i)
      x.data(c, static_cast<Eigen::Index>(i)) =
          static_cast<T>((patch.data[c * patch.plane() + i] - norm.mean[c]) / norm.std[c]);

  x = max_pool_3x3_s2(conv_bn(x, p.stem, true));
  for (const auto& stage : p.stages)
    for (const auto& blk : stage) {
      FeatureMap<T> shortcut = blk.downsample ? conv_bn(x, *blk.downsample, false) : x;
      FeatureMap<T> y = conv_bn(conv_bn(conv_bn(x, blk.reduce, true), blk.spatial, true), blk.expand, false);
      y.data = (y.data + shortcut.data).cwiseMax(T(0));
      x = std::move(y);
    }
  return x.data.rowwise().mean();
}

}  // namespace patchssl::cnn
