#pragma once

#include "patchssl/core.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

namespace patchssl {

/// Planar 3-channel raster, values in [0,1], indexed (channel, y, x).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // 3 * height * width

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {
    require(h >= 0 && w >= 0, "Image: negative size");
  }

  static Image filled_rgb(int h, int w, float r, float g, float b) {
    Image img(h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::fill_n(img.data.begin(), plane, r);
    std::fill_n(img.data.begin() + plane, plane, g);
    std::fill_n(img.data.begin() + 2 * plane, plane, b);
    return img;
  }

  [[nodiscard]] bool empty() const { return height == 0 || width == 0; }
  [[nodiscard]] bool square() const { return height == width; }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

  void clamp01() {
    for (auto& v : data) v = std::clamp(v, 0.0f, 1.0f);
  }

  bool operator==(const Image&) const = default;
};

/// Copy of the w×h rectangle at (x, y). Caller guarantees bounds.
inline Image crop(const Image& src, int x, int y, int w, int h) {
  require(x >= 0 && y >= 0 && x + w <= src.width && y + h <= src.height, "crop outside image");
  Image out(h, w);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r) {
      const float* s = &src.data[c * src.plane() + static_cast<std::size_t>(y + r) * src.width + x];
      std::copy_n(s, w, &out.at(c, r, 0));
    }
  return out;
}

/// Bilinear resize with half-pixel centers (align_corners = false).
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  require(!src.empty() && out_h > 0 && out_w > 0, "resize: empty image");
  if (out_h == src.height && out_w == src.width) return src;
  Image out(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<float> fx(out_w);
  for (int x = 0; x < out_w; ++x) {
    double p = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
    x0[x] = static_cast<int>(p);
    x1[x] = std::min(x0[x] + 1, src.width - 1);
    fx[x] = static_cast<float>(p - x0[x]);
  }
  for (int y = 0; y < out_h; ++y) {
    double p = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(p);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float fy = static_cast<float>(p - y0);
    for (int c = 0; c < 3; ++c)
      for (int x = 0; x < out_w; ++x) {
        const float top = src.at(c, y0, x0[x]) * (1 - fx[x]) + src.at(c, y0, x1[x]) * fx[x];
        const float bot = src.at(c, y1, x0[x]) * (1 - fx[x]) + src.at(c, y1, x1[x]) * fx[x];
        out.at(c, y, x) = top * (1 - fy) + bot * fy;
      }
  }
  return out;
}

inline Image flip_horizontal(const Image& src) {
  Image out(src.height, src.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) out.at(c, y, x) = src.at(c, y, src.width - 1 - x);
  return out;
}

/// 8-bit interleaved BGR, the layout OpenCV codecs expect.
inline cv::Mat to_cv_bgr8(const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  }
  return m;
}

inline Image from_cv_bgr(const cv::Mat& m) {
  cv::Mat src = m;
  if (src.channels() == 1) cv::cvtColor(src, src, cv::COLOR_GRAY2BGR);
  if (src.channels() == 4) cv::cvtColor(src, src, cv::COLOR_BGRA2BGR);
  double scale = 1.0 / 255.0;
  if (src.depth() == CV_16U) scale = 1.0 / 65535.0;
  else if (src.depth() == CV_32F || src.depth() == CV_64F) scale = 1.0;
  cv::Mat f;
  src.convertTo(f, CV_32FC3, scale);
  Image img(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3f>(y);
    for (int x = 0; x < f.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c];
  }
  img.clamp01();
  return img;
}

/// Reads PNG/TIFF/JPEG rasters from disk.
inline Image load_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (m.empty()) throw Error("cannot read image: " + path.string());
  return from_cv_bgr(m);
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), to_cv_bgr8(img), params)) throw Error("cannot write image: " + path.string());
}

}  // namespace patchssl
