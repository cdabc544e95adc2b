#pragma once

#include "patchssl/image.hpp"
#include "patchssl/nn.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace patchssl::vit {

/// Per-channel input standardization applied before patch embedding.
struct InputNormalization {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

struct VitSpec {
  int embed_dim = 192;
  int depth = 4;
  int heads = 3;
  int token_patch = 16;
  int mlp_ratio = 4;
  int train_crop = 224;  // positional embeddings are learned on this grid

  static VitSpec paper_scale() { return {384, 12, 6, 16, 4, 224}; }
  static VitSpec desk_scale() { return {192, 4, 3, 16, 4, 224}; }

  [[nodiscard]] int head_dim() const { return embed_dim / heads; }
  [[nodiscard]] int train_grid() const { return train_crop / token_patch; }
  [[nodiscard]] int patch_dim() const { return 3 * token_patch * token_patch; }

  void validate() const {
    require(embed_dim > 0 && heads > 0 && depth > 0 && token_patch > 0 && mlp_ratio > 0, "invalid ViT spec");
    require(embed_dim % heads == 0, "embed_dim must be divisible by heads");
    require(train_crop % token_patch == 0, "train_crop must be divisible by token_patch");
  }

  bool operator==(const VitSpec&) const = default;
};

/// Contiguous per-head column ranges [start, end) of the embedding.
inline std::vector<std::pair<int, int>> head_slices(int embed_dim, int heads) {
  require(heads > 0 && embed_dim % heads == 0, "embed_dim must be divisible by heads");
  const int w = embed_dim / heads;
  std::vector<std::pair<int, int>> out;
  for (int h = 0; h < heads; ++h) out.emplace_back(h * w, (h + 1) * w);
  return out;
}

inline std::vector<std::pair<int, int>> head_slices(const VitSpec& spec) { return head_slices(spec.embed_dim, spec.heads); }

/// Token count including [CLS] for an S×S input.
inline int sequence_length(const VitSpec& spec, int size) {
  const int g = size / spec.token_patch;
  return g * g + 1;
}

template <typename T>
struct BlockParams {
  Mat<T> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  template <typename F>
  void visit(F&& f, const std::string& p) {
    f(p + "ln1_g", ln1_g);
    f(p + "ln1_b", ln1_b);
    f(p + "qkv_w", qkv_w);
    f(p + "qkv_b", qkv_b);
    f(p + "proj_w", proj_w);
    f(p + "proj_b", proj_b);
    f(p + "ln2_g", ln2_g);
    f(p + "ln2_b", ln2_b);
    f(p + "fc1_w", fc1_w);
    f(p + "fc1_b", fc1_b);
    f(p + "fc2_w", fc2_w);
    f(p + "fc2_b", fc2_b);
  }
};

template <typename T>
struct VitParams {
  using Scalar = T;

  VitSpec spec;
  Mat<T> patch_w, patch_b;  // D × (3·p·p), 1 × D
  Mat<T> cls;               // 1 × D
  Mat<T> pos;               // (1 + G²) × D, G = train grid
  std::vector<BlockParams<T>> blocks;
  Mat<T> norm_g, norm_b;

  template <typename F>
  void visit(F&& f) {
    f("patch_w", patch_w);
    f("patch_b", patch_b);
    f("cls", cls);
    f("pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(f, "block" + std::to_string(i) + ".");
    f("norm_g", norm_g);
    f("norm_b", norm_b);
  }
};

/// Random initialization: truncated normal(0.02) weights, zero biases, unit norm gains.
template <typename T>
VitParams<T> init_vit(const VitSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, 0x5649545f494e4954ULL));
  const int d = spec.embed_dim, hidden = spec.embed_dim * spec.mlp_ratio, g = spec.train_grid();
  VitParams<T> p;
  p.spec = spec;
  auto w = [&](int r, int c) {
    Mat<T> m(r, c);
    nn::trunc_normal(m, rng, 0.02);
    return m;
  };
  auto zeros = [](int c) { return Mat<T>::Zero(1, c).eval(); };
  auto ones = [](int c) { return Mat<T>::Ones(1, c).eval(); };
  p.patch_w = w(d, spec.patch_dim());
  p.patch_b = zeros(d);
  p.cls = w(1, d);
  p.pos = w(1 + g * g, d);
  p.blocks.resize(static_cast<std::size_t>(spec.depth));
  for (auto& b : p.blocks) {
    b.ln1_g = ones(d);
    b.ln1_b = zeros(d);
    b.qkv_w = w(3 * d, d);
    b.qkv_b = zeros(3 * d);
    b.proj_w = w(d, d);
    b.proj_b = zeros(d);
    b.ln2_g = ones(d);
    b.ln2_b = zeros(d);
    b.fc1_w = w(hidden, d);
    b.fc1_b = zeros(hidden);
    b.fc2_w = w(d, hidden);
    b.fc2_b = zeros(d);
  }
  p.norm_g = ones(d);
  p.norm_b = zeros(d);
  return p;
}

// ---------------------------------------------------------------------------
// Positional-embedding interpolation

/// Keys' cubic convolution weight with a = -0.75 (PyTorch bicubic).
inline double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

/// out × in 1-D bicubic resampling matrix, half-pixel centers, clamped borders.
inline MatD bicubic_matrix(int out, int in) {
  MatD r = MatD::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double src = (i + 0.5) * scale - 0.5;
    const int x0 = static_cast<int>(std::floor(src));
    const double t = src - x0;
    for (int k = -1; k <= 2; ++k) {
      const int idx = std::clamp(x0 + k, 0, in - 1);
      r(i, idx) += cubic_weight(t - k);
    }
  }
  return r;
}

/// (g²) × (G²) matrix mapping the learned positional grid to a g×g grid.
template <typename T>
Mat<T> pos_interpolation(int g, int train_grid) {
  const MatD r = bicubic_matrix(g, train_grid);
  Mat<T> m(g * g, train_grid * train_grid);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      for (int p = 0; p < train_grid; ++p)
        for (int q = 0; q < train_grid; ++q) m(i * g + j, p * train_grid + q) = static_cast<T>(r(i, p) * r(j, q));
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct BlockCache {
  nn::LayerNormCache<T> ln1, ln2;
  Mat<T> a, qkv, o, bn, h1, h2;
  std::vector<Mat<T>> probs;  // index image·heads + head, each N×N
};

template <typename T>
struct VitCache {
  int batch = 0;
  int grid = 0;
  Mat<T> patches;  // (B·g²) × patch_dim
  std::vector<BlockCache<T>> blocks;
  nn::LayerNormCache<T> final_ln;
};

/// Attention per layer; each layer holds image·heads + head matrices of N×N.
template <typename T>
using AttentionLayers = std::vector<std::vector<Mat<T>>>;

/// Standardizes and flattens non-overlapping p×p patches; rows are tokens in
/// row-major grid order, columns are (channel, py, px).
template <typename T>
Mat<T> patchify(std::span<const Image> images, int patch, const InputNormalization& norm) {
  require(!images.empty(), "patchify: empty batch");
  const int s = images[0].height;
  const int g = s / patch;
  Mat<T> out(static_cast<Eigen::Index>(images.size()) * g * g, 3 * patch * patch);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = images[b];
    require(img.height == s && img.width == s, "patchify: batch images must share one square size");
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        const Eigen::Index row = static_cast<Eigen::Index>(b) * g * g + gy * g + gx;
        int col = 0;
        for (int c = 0; c < 3; ++c)
          for (int py = 0; py < patch; ++py)
            for (int px = 0; px < patch; ++px)
              out(row, col++) = static_cast<T>((img.at(c, gy * patch + py, gx * patch + px) - norm.mean[c]) / norm.std[c]);
      }
  }
  return out;
}

/// Runs a batch of same-size square images. Returns B×D [CLS] embeddings.
/// `cache` enables backward; `attention` collects every layer's attention.
template <typename T>
Mat<T> forward(const VitParams<T>& p, std::span<const Image> images, const InputNormalization& norm,
               std::type_identity_t<VitCache<T>>* cache = nullptr,
               std::type_identity_t<AttentionLayers<T>>* attention = nullptr) {
  const VitSpec& spec = p.spec;
  require(!images.empty(), "encode_vit: empty batch");
  const int s = images[0].height;
  if (!images[0].square() || s % spec.token_patch != 0 || s < spec.token_patch)
    throw Error("encode_vit: input size must be square and divisible by " + std::to_string(spec.token_patch));
  const int g = s / spec.token_patch;
  const int t = g * g, n = t + 1, d = spec.embed_dim, heads = spec.heads, hd = spec.head_dim();
  const int batch = static_cast<int>(images.size());
  const int tg = spec.train_grid();

  Mat<T> patches = patchify<T>(images, spec.token_patch, norm);
  const Mat<T> emb = nn::linear(patches, p.patch_w, p.patch_b);
  Mat<T> pos_tokens;
  if (g == tg) pos_tokens = p.pos.bottomRows(t);
  else pos_tokens = pos_interpolation<T>(g, tg) * p.pos.bottomRows(tg * tg);

  Mat<T> x(static_cast<Eigen::Index>(batch) * n, d);
  for (int b = 0; b < batch; ++b) {
    x.row(b * n) = p.cls.row(0) + p.pos.row(0);
    x.middleRows(b * n + 1, t) = emb.middleRows(b * t, t) + pos_tokens;
  }

  if (cache) {
    cache->batch = batch;
    cache->grid = g;
    cache->patches = std::move(patches);
    cache->blocks.assign(p.blocks.size(), {});
  }
  if (attention) attention->assign(p.blocks.size(), {});

  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& bp = p.blocks[l];
    BlockCache<T> local;
    BlockCache<T>& c = cache ? cache->blocks[l] : local;
    c.a = nn::layer_norm(x, bp.ln1_g, bp.ln1_b, cache ? &c.ln1 : nullptr);
    c.qkv = nn::linear(c.a, bp.qkv_w, bp.qkv_b);
    c.o.resize(x.rows(), d);
    if (cache) c.probs.resize(static_cast<std::size_t>(batch) * heads);
    if (attention) (*attention)[l].resize(static_cast<std::size_t>(batch) * heads);
    Mat<T> sc(n, n);
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(b * n, h * hd, n, hd);
        const auto k = c.qkv.block(b * n, d + h * hd, n, hd);
        const auto v = c.qkv.block(b * n, 2 * d + h * hd, n, hd);
        sc.noalias() = q * k.transpose();
        sc *= scale;
        nn::softmax_rows_inplace(sc);
        c.o.block(b * n, h * hd, n, hd).noalias() = sc * v;
        const std::size_t idx = static_cast<std::size_t>(b) * heads + h;
        if (attention) (*attention)[l][idx] = sc;
        if (cache) c.probs[idx] = sc;
      }
    x += nn::linear(c.o, bp.proj_w, bp.proj_b);
    c.bn = nn::layer_norm(x, bp.ln2_g, bp.ln2_b, cache ? &c.ln2 : nullptr);
    c.h1 = nn::linear(c.bn, bp.fc1_w, bp.fc1_b);
    c.h2 = nn::gelu(c.h1);
    x += nn::linear(c.h2, bp.fc2_w, bp.fc2_b);
    if (!cache) c = {};
  }

  Mat<T> cls_rows(batch, d);
  for (int b = 0; b < batch; ++b) cls_rows.row(b) = x.row(b * n);
  return nn::layer_norm(cls_rows, p.norm_g, p.norm_b, cache ? &cache->final_ln : nullptr);
}

/// Accumulates parameter gradients given dL/d(embeddings) (B×D).
template <typename T>
void backward(const VitParams<T>& p, const VitCache<T>& cache, const Mat<T>& d_cls, VitParams<T>& grad) {
  const VitSpec& spec = p.spec;
  const int g = cache.grid, t = g * g, n = t + 1, d = spec.embed_dim, heads = spec.heads, hd = spec.head_dim();
  const int batch = cache.batch, tg = spec.train_grid();
  require(d_cls.rows() == batch && d_cls.cols() == d, "vit backward: gradient shape mismatch");

  const Mat<T> d_cls_rows = nn::layer_norm_backward(cache.final_ln, p.norm_g, d_cls, grad.norm_g, grad.norm_b);
  Mat<T> dx = Mat<T>::Zero(static_cast<Eigen::Index>(batch) * n, d);
  for (int b = 0; b < batch; ++b) dx.row(b * n) = d_cls_rows.row(b);

  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  for (std::size_t li = p.blocks.size(); li-- > 0;) {
    const auto& bp = p.blocks[li];
    auto& gb = grad.blocks[li];
    const auto& c = cache.blocks[li];

    // MLP branch
    Mat<T> dh = nn::linear_backward(c.h2, bp.fc2_w, dx, gb.fc2_w, gb.fc2_b);
    dh = nn::gelu_backward(c.h1, dh);
    const Mat<T> dbn = nn::linear_backward(c.bn, bp.fc1_w, dh, gb.fc1_w, gb.fc1_b);
    dx += nn::layer_norm_backward(c.ln2, bp.ln2_g, dbn, gb.ln2_g, gb.ln2_b);

    // Attention branch
    const Mat<T> d_o = nn::linear_backward(c.o, bp.proj_w, dx, gb.proj_w, gb.proj_b);
    Mat<T> dqkv(c.qkv.rows(), c.qkv.cols());
    Mat<T> dp(n, n);
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h) {
        const Mat<T>& pr = c.probs[static_cast<std::size_t>(b) * heads + h];
        const auto q = c.qkv.block(b * n, h * hd, n, hd);
        const auto k = c.qkv.block(b * n, d + h * hd, n, hd);
        const auto v = c.qkv.block(b * n, 2 * d + h * hd, n, hd);
        const auto dout = d_o.block(b * n, h * hd, n, hd);
        dp.noalias() = dout * v.transpose();
        dqkv.block(b * n, 2 * d + h * hd, n, hd).noalias() = pr.transpose() * dout;
        Mat<T> ds = nn::softmax_rows_backward(pr, dp);
        ds *= scale;
        dqkv.block(b * n, h * hd, n, hd).noalias() = ds * k;
        dqkv.block(b * n, d + h * hd, n, hd).noalias() = ds.transpose() * q;
      }
    const Mat<T> da = nn::linear_backward(c.a, bp.qkv_w, dqkv, gb.qkv_w, gb.qkv_b);
    dx += nn::layer_norm_backward(c.ln1, bp.ln1_g, da, gb.ln1_g, gb.ln1_b);
  }

  Mat<T> d_emb(static_cast<Eigen::Index>(batch) * t, d);
  Mat<T> d_pos_tokens = Mat<T>::Zero(t, d);
  for (int b = 0; b < batch; ++b) {
    grad.cls.row(0) += dx.row(b * n);
    grad.pos.row(0) += dx.row(b * n);
    d_emb.middleRows(b * t, t) = dx.middleRows(b * n + 1, t);
    d_pos_tokens += dx.middleRows(b * n + 1, t);
  }
  if (g == tg) grad.pos.bottomRows(t) += d_pos_tokens;
  else grad.pos.bottomRows(tg * tg).noalias() += pos_interpolation<T>(g, tg).transpose() * d_pos_tokens;
  grad.patch_w.noalias() += d_emb.transpose() * cache.patches;
  grad.patch_b.row(0) += d_emb.colwise().sum();
}

/// Single-patch inference: embedding plus optional attention of every block.
template <typename T>
struct VitEncoding {
  Vec<T> embedding;
  std::optional<std::vector<std::vector<Mat<T>>>> attention;  // [layer][head], N×N
};

template <typename T>
VitEncoding<T> encode_vit(const VitParams<T>& p, const Image& patch, bool return_attention,
                          const InputNormalization& norm = {}) {
  AttentionLayers<T> attn;
  const Mat<T> e = forward(p, std::span<const Image>(&patch, 1), norm, nullptr, return_attention ? &attn : nullptr);
  VitEncoding<T> out;
  out.embedding = e.row(0).transpose();
  if (return_attention) out.attention = std::move(attn);
  return out;
}

/// Embeds many patches in fixed-size chunks; rows follow input order.
template <typename T>
Mat<T> embed_all(const VitParams<T>& p, std::span<const Image> patches, const InputNormalization& norm = {},
                 std::size_t chunk = 16) {
  Mat<T> out(static_cast<Eigen::Index>(patches.size()), p.spec.embed_dim);
  for (std::size_t i = 0; i < patches.size(); i += chunk) {
    const std::size_t len = std::min(chunk, patches.size() - i);
    out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(len)) =
        forward(p, patches.subspan(i, len), norm);
  }
  return out;
}

}  // namespace patchssl::vit
