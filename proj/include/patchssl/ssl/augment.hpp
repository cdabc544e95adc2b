#pragma once

#include "patchssl/image.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace patchssl::ssl {

enum class Method { simclr, dino };

inline std::string to_string(Method m) { return m == Method::simclr ? "simclr" : "dino"; }

inline Method method_from_string(const std::string& s) {
  if (s == "simclr") return Method::simclr;
  if (s == "dino") return Method::dino;
  throw Error("unknown SSL method: " + s);
}

struct ColorJitter {
  double probability = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double hue = 0.1;
  double grayscale_probability = 0.2;
};

struct AugmentationPolicy {
  Method kind = Method::dino;
  int global_crop = 224;
  int local_crop = 96;
  int n_global = 2;
  int n_local = 8;
  std::array<double, 2> global_scale{0.4, 1.0};
  std::array<double, 2> local_scale{0.05, 0.4};
  ColorJitter jitter;
  double flip_probability = 0.5;
  // Blur probability per global view (first, second) and for local views.
  std::array<double, 2> global_blur{1.0, 0.1};
  double local_blur = 0.5;
  std::array<double, 2> blur_sigma{0.1, 2.0};

  static AugmentationPolicy dino() { return {}; }

  static AugmentationPolicy simclr() {
    AugmentationPolicy p;
    p.kind = Method::simclr;
    p.n_global = 2;
    p.n_local = 0;
    p.global_scale = {0.08, 1.0};
    p.global_blur = {0.5, 0.5};
    return p;
  }

  void validate() const {
    require(global_crop > 0 && local_crop > 0, "augmentation: crop sizes must be positive");
    if (kind == Method::dino) require(n_global == 2 && n_local == 8, "dino policy requires 2 global and 8 local views");
    else require(n_global == 2 && n_local == 0, "simclr policy requires exactly 2 views");
  }

  [[nodiscard]] int min_source_size() const { return n_local > 0 ? std::min(global_crop, local_crop) : global_crop; }
};

namespace detail {

struct CropBox {
  int x, y, w, h;
};

/// Random-resized-crop box, always fully inside the source.
inline CropBox sample_crop(int size, const std::array<double, 2>& scale, Rng& rng) {
  const double area = static_cast<double>(size) * size;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale[0], scale[1]);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= size && h <= size) {
      const int x = rng.uniform_int(0, size - w);
      const int y = rng.uniform_int(0, size - h);
      return {x, y, w, h};
    }
  }
  return {0, 0, size, size};
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float delta = mx - mn;
  v = mx;
  s = mx > 0.0f ? delta / mx : 0.0f;
  if (delta <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r) h = (g - b) / delta;
  else if (mx == g) h = 2.0f + (b - r) / delta;
  else h = 4.0f + (r - g) / delta;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int i = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline void color_jitter(Image& img, const ColorJitter& cj, Rng& rng) {
  const std::size_t n = img.plane();
  float* r = img.data.data();
  float* g = r + n;
  float* b = g + n;
  std::array<int, 4> order{0, 1, 2, 3};
  rng.shuffle(order.begin(), order.end());
  const float fb = static_cast<float>(rng.uniform(1 - cj.brightness, 1 + cj.brightness));
  const float fc = static_cast<float>(rng.uniform(1 - cj.contrast, 1 + cj.contrast));
  const float fs = static_cast<float>(rng.uniform(1 - cj.saturation, 1 + cj.saturation));
  const float fh = static_cast<float>(rng.uniform(-cj.hue, cj.hue));
  for (int op : order) {
    switch (op) {
      case 0:
        for (auto& v : img.data) v = std::clamp(v * fb, 0.0f, 1.0f);
        break;
      case 1: {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += luma(r[i], g[i], b[i]);
        const float mean = static_cast<float>(m / static_cast<double>(n));
        for (auto& v : img.data) v = std::clamp((v - mean) * fc + mean, 0.0f, 1.0f);
        break;
      }
      case 2:
        for (std::size_t i = 0; i < n; ++i) {
          const float y = luma(r[i], g[i], b[i]);
          r[i] = std::clamp((r[i] - y) * fs + y, 0.0f, 1.0f);
          g[i] = std::clamp((g[i] - y) * fs + y, 0.0f, 1.0f);
          b[i] = std::clamp((b[i] - y) * fs + y, 0.0f, 1.0f);
        }
        break;
      default:
        for (std::size_t i = 0; i < n; ++i) {
          float h, s, v;
          rgb_to_hsv(r[i], g[i], b[i], h, s, v);
          hsv_to_rgb(h + fh, s, v, r[i], g[i], b[i]);
        }
        break;
    }
  }
}

inline void grayscale(Image& img) {
  const std::size_t n = img.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const float y = luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
    img.data[i] = img.data[n + i] = img.data[2 * n + i] = y;
  }
}

/// Separable Gaussian blur, reflect-101 borders.
inline void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v = static_cast<float>(v / sum);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  const int h = img.height, w = img.width;
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  for (int c = 0; c < 3; ++c) {
    float* p = &img.data[c * img.plane()];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * p[y * w + reflect(x + i, w)];
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
        p[y * w + x] = acc;
      }
  }
}

inline Image make_view(const Image& src, int out_size, const std::array<double, 2>& scale, double blur_p,
                       const AugmentationPolicy& policy, Rng& rng) {
  const CropBox box = sample_crop(src.height, scale, rng);
  Image v = resize_bilinear(crop(src, box.x, box.y, box.w, box.h), out_size, out_size);
  if (rng.bernoulli(policy.flip_probability)) v = flip_horizontal(v);
  if (rng.bernoulli(policy.jitter.probability)) color_jitter(v, policy.jitter, rng);
  if (rng.bernoulli(policy.jitter.grayscale_probability)) grayscale(v);
  if (rng.bernoulli(blur_p)) gaussian_blur(v, rng.uniform(policy.blur_sigma[0], policy.blur_sigma[1]));
  v.clamp01();
  return v;
}

}  // namespace detail

/// Views for one source patch: global views first, then local views.
inline std::vector<Image> augment(const Image& patch, const AugmentationPolicy& policy, std::uint64_t seed) {
  policy.validate();
  require(patch.square(), "augment: patch must be square");
  if (patch.height < policy.min_source_size())
    throw Error("augment: patch smaller than crop (" + std::to_string(patch.height) + " < " +
                std::to_string(policy.min_source_size()) + ")");
  Rng rng(seed);
  std::vector<Image> views;
  views.reserve(static_cast<std::size_t>(policy.n_global + policy.n_local));
  for (int i = 0; i < policy.n_global; ++i)
    views.push_back(detail::make_view(patch, policy.global_crop, policy.global_scale, policy.global_blur[static_cast<std::size_t>(std::min(i, 1))], policy, rng));
  for (int i = 0; i < policy.n_local; ++i)
    views.push_back(detail::make_view(patch, policy.local_crop, policy.local_scale, policy.local_blur, policy, rng));
  return views;
}

}  // namespace patchssl::ssl
