#pragma once

#include "patchssl/vit.hpp"

#include <string>
#include <vector>

namespace patchssl::vizattn {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr float kTintAlpha = 0.4f;

enum class Scaling { raw, minmax };

struct HeadAttentionMap {
  int head_index = 0;
  int layer = 0;
  MatD grid;              // g × g, token t at (t / g, t % g)
  double cls_self = 0.0;  // dropped CLS→CLS mass (raw maps only)
  Scaling scaling = Scaling::raw;
};

/// Row-major token index ↔ grid cell.
inline std::pair<int, int> token_to_cell(int token, int grid) { return {token / grid, token % grid}; }
inline int cell_to_token(int row, int col, int grid) { return row * grid + col; }

/// CLS-row attention over patch tokens for every head of one block (default: last).
template <typename T>
std::vector<HeadAttentionMap> extract_cls_attention(const vit::VitParams<T>& params, const Image& patch, int layer = -1,
                                                    const vit::InputNormalization& norm = {}) {
  const int depth = static_cast<int>(params.blocks.size());
  if (layer < 0) layer += depth;
  if (layer < 0 || layer >= depth) throw Error("attention layer out of range: " + std::to_string(layer));
  const auto enc = vit::encode_vit(params, patch, true, norm);
  const auto& heads = (*enc.attention)[static_cast<std::size_t>(layer)];
  const int g = patch.height / params.spec.token_patch;
  std::vector<HeadAttentionMap> out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    HeadAttentionMap m;
    m.head_index = static_cast<int>(h);
    m.layer = layer;
    m.grid.resize(g, g);
    m.cls_self = static_cast<double>(heads[h](0, 0));
    for (int t = 0; t < g * g; ++t) {
      const auto [r, c] = token_to_cell(t, g);
      m.grid(r, c) = static_cast<double>(heads[h](0, t + 1));
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Per-map rescaling to [0,1]. Returns false (and all zeros) for a constant map.
inline bool minmax_normalize(const HeadAttentionMap& in, HeadAttentionMap& out) {
  out = in;
  out.scaling = Scaling::minmax;
  out.cls_self = 0.0;
  const double lo = in.grid.minCoeff(), hi = in.grid.maxCoeff();
  if (!(hi > lo)) {
    out.grid.setZero();
    return false;
  }
  out.grid = (in.grid.array() - lo) / (hi - lo);
  // Pin the extremes so both 0 and 1 are attained exactly.
  for (Eigen::Index i = 0; i < in.grid.size(); ++i) {
    if (in.grid.data()[i] == lo) out.grid.data()[i] = 0.0;
    if (in.grid.data()[i] == hi) out.grid.data()[i] = 1.0;
  }
  return true;
}

struct Overlay {
  Image image;
  std::vector<std::uint8_t> token_mask;  // g² entries, row-major
  int tinted_tokens = 0;
  bool constant_map = false;  // normalization undefined; nothing tinted
};

/// Min-max normalizes the map, then tints every token above `threshold` red
/// (alpha 0.4) over its nearest-neighbour-upsampled block.
inline Overlay threshold_overlay(const HeadAttentionMap& map, const Image& patch, double threshold = kDefaultThreshold) {
  const int g = static_cast<int>(map.grid.rows());
  require(g > 0 && map.grid.cols() == g, "overlay: attention grid must be square");
  require(patch.square() && patch.height % g == 0, "overlay: patch and map sizes disagree");
  const int block = patch.height / g;

  HeadAttentionMap norm;
  Overlay out;
  if (map.scaling == Scaling::minmax) {
    norm = map;
  } else if (!minmax_normalize(map, norm)) {
    out.constant_map = true;
  }
  out.image = patch;
  out.token_mask.assign(static_cast<std::size_t>(g) * g, 0);
  if (out.constant_map) return out;

  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      if (!(norm.grid(r, c) > threshold)) continue;
      out.token_mask[static_cast<std::size_t>(cell_to_token(r, c, g))] = 1;
      ++out.tinted_tokens;
      for (int y = r * block; y < (r + 1) * block; ++y)
        for (int x = c * block; x < (c + 1) * block; ++x) {
          out.image.at(0, y, x) = (1 - kTintAlpha) * out.image.at(0, y, x) + kTintAlpha;
          out.image.at(1, y, x) = (1 - kTintAlpha) * out.image.at(1, y, x);
          out.image.at(2, y, x) = (1 - kTintAlpha) * out.image.at(2, y, x);
        }
    }
  return out;
}

/// Raw patch followed by one overlay per head, side by side.
template <typename T>
Image render_head_panel(const Image& patch, const vit::VitParams<T>& params, double threshold = kDefaultThreshold,
                        int layer = -1, const vit::InputNormalization& norm = {}) {
  const auto maps = extract_cls_attention(params, patch, layer, norm);
  const int s = patch.height;
  Image panel(s, s * static_cast<int>(1 + maps.size()));
  auto paste = [&](const Image& img, int slot) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) panel.at(c, y, slot * s + x) = img.at(c, y, x);
  };
  paste(patch, 0);
  for (std::size_t h = 0; h < maps.size(); ++h) paste(threshold_overlay(maps[h], patch, threshold).image, static_cast<int>(h + 1));
  return panel;
}

}  // namespace patchssl::vizattn
