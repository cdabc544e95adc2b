#pragma once

#include "patchssl/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

// Deterministic tissue-like patches: a smooth pink background texture with
// Poisson-placed dark elliptical "cells". Classes differ in cell density and
// size; per-patch stain colour and brightness vary as nuisance factors.
namespace patchssl::synth {

struct TextureRecipe {
  double blob_density = 20.0;  // expected cells per 256×256 patch
  std::array<double, 2> radius{4.0, 8.0};
  double background_scale = 32.0;  // texture cell size in pixels
};

struct Nuisance {
  double stain_jitter = 0.06;       // per-channel colour shift
  double brightness_jitter = 0.08;  // multiplicative
  double texture_amplitude = 0.06;
  double pixel_noise = 0.015;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  int n_patches = 100;
  int patch_size = 256;
  std::vector<TextureRecipe> classes;
  Nuisance nuisance;

  /// Two classes with matched expected cell coverage: few large cells versus
  /// many small ones, so the classes are not separable by mean colour alone.
  static SynthSpec two_class_default(std::uint64_t seed, int n) {
    SynthSpec s;
    s.seed = seed;
    s.n_patches = n;
    s.classes = {{20.0, {9.0, 15.0}, 40.0}, {120.0, {3.5, 6.5}, 24.0}};
    return s;
  }

  void validate() const {
    require(classes.size() >= 2, "synth: need at least two classes");
    require(patch_size >= 16 && n_patches >= 0, "synth: invalid patch size or count");
    for (std::size_t i = 0; i < classes.size(); ++i)
      for (std::size_t j = i + 1; j < classes.size(); ++j)
        require(classes[i].blob_density != classes[j].blob_density, "synth: class densities must be distinct");
  }
};

struct Blob {
  double cx, cy, rx, ry, angle;
};

struct SynthPatch {
  Image image;
  int label = 0;
  std::uint64_t index = 0;
  std::vector<Blob> blobs;  // placement log
};

/// Pixel coverage of the logged blobs (1 inside any ellipse).
inline std::vector<std::uint8_t> blob_mask(const SynthPatch& p) {
  const int s = p.image.height;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(s) * s, 0);
  for (const auto& b : p.blobs) {
    const double ca = std::cos(b.angle), sa = std::sin(b.angle);
    const double r = std::max(b.rx, b.ry);
    for (int y = std::max(0, static_cast<int>(b.cy - r)); y <= std::min(s - 1, static_cast<int>(b.cy + r) + 1); ++y)
      for (int x = std::max(0, static_cast<int>(b.cx - r)); x <= std::min(s - 1, static_cast<int>(b.cx + r) + 1); ++x) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        const double u = (dx * ca + dy * sa) / b.rx, v = (-dx * sa + dy * ca) / b.ry;
        if (u * u + v * v <= 1.0) m[static_cast<std::size_t>(y) * s + x] = 1;
      }
  }
  return m;
}

namespace detail {

/// Bilinear value noise on a lattice of the given cell size, values in [-1, 1].
inline std::vector<double> value_noise(int size, double cell, Rng& rng) {
  const int n = static_cast<int>(std::ceil(size / cell)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(n) * n);
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fx = x / cell, fy = y / cell;
      const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
      const double tx = fx - ix, ty = fy - iy;
      const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
      auto at = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * n + a]; };
      const double top = at(ix, iy) * (1 - sx) + at(ix + 1, iy) * sx;
      const double bot = at(ix, iy + 1) * (1 - sx) + at(ix + 1, iy + 1) * sx;
      out[static_cast<std::size_t>(y) * size + x] = top * (1 - sy) + bot * sy;
    }
  return out;
}

}  // namespace detail

/// Class of patch `index`: round-robin over classes, so counts are balanced.
inline int class_of(const SynthSpec& spec, std::uint64_t index) {
  return static_cast<int>(index % spec.classes.size());
}

inline SynthPatch make_patch(const SynthSpec& spec, std::uint64_t index, int label) {
  require(label >= 0 && label < static_cast<int>(spec.classes.size()), "synth: class out of range");
  const TextureRecipe& rc = spec.classes[static_cast<std::size_t>(label)];
  const Nuisance& nz = spec.nuisance;
  const int s = spec.patch_size;
  Rng rng(derive_seed(spec.seed, index));

  const double bright = 1.0 + rng.uniform(-nz.brightness_jitter, nz.brightness_jitter);
  std::array<double, 3> bg{0.91, 0.72, 0.82};    // eosin-pink
  std::array<double, 3> cell{0.36, 0.22, 0.52};  // hematoxylin-purple
  for (int c = 0; c < 3; ++c) {
    bg[static_cast<std::size_t>(c)] += rng.uniform(-nz.stain_jitter, nz.stain_jitter);
    cell[static_cast<std::size_t>(c)] += rng.uniform(-nz.stain_jitter, nz.stain_jitter);
  }

  SynthPatch p;
  p.label = label;
  p.index = index;
  p.image = Image(s, s);
  const auto tex = detail::value_noise(s, rc.background_scale, rng);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        p.image.at(c, y, x) = static_cast<float>(bg[static_cast<std::size_t>(c)] +
                                                 nz.texture_amplitude * tex[static_cast<std::size_t>(y) * s + x]);

  // Densities are per 256×256 area.
  const double area_scale = static_cast<double>(s) * s / (256.0 * 256.0);
  const int count = rng.poisson(rc.blob_density * area_scale);
  p.blobs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Blob b{rng.uniform(0.0, s), rng.uniform(0.0, s), rng.uniform(rc.radius[0], rc.radius[1]),
           rng.uniform(rc.radius[0], rc.radius[1]), rng.uniform(0.0, std::numbers::pi)};
    p.blobs.push_back(b);
  }
  // Rasterize with a one-pixel soft edge; darker core.
  for (const auto& b : p.blobs) {
    const double ca = std::cos(b.angle), sa = std::sin(b.angle);
    const double r = std::max(b.rx, b.ry) + 1.5;
    const double shade = rng.uniform(0.85, 1.0);
    for (int y = std::max(0, static_cast<int>(b.cy - r)); y <= std::min(s - 1, static_cast<int>(b.cy + r)); ++y)
      for (int x = std::max(0, static_cast<int>(b.cx - r)); x <= std::min(s - 1, static_cast<int>(b.cx + r)); ++x) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        const double u = (dx * ca + dy * sa) / b.rx, v = (-dx * sa + dy * ca) / b.ry;
        const double rho = std::sqrt(u * u + v * v);
        const double edge = std::min(b.rx, b.ry);
        const double cover = std::clamp((1.0 - rho) * edge + 0.5, 0.0, 1.0);
        if (cover <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          float& px = p.image.at(c, y, x);
          const double target = cell[static_cast<std::size_t>(c)] * shade * (0.8 + 0.2 * rho);
          px = static_cast<float>(px * (1.0 - cover) + target * cover);
        }
      }
  }
  for (auto& v : p.image.data) v = static_cast<float>(v * bright + rng.normal(0.0, nz.pixel_noise));
  p.image.clamp01();
  return p;
}

/// Patches with indices [first, first + n_patches), labels round-robin.
inline std::vector<SynthPatch> make_patches(const SynthSpec& spec, std::uint64_t first = 0) {
  spec.validate();
  std::vector<SynthPatch> out;
  out.reserve(static_cast<std::size_t>(spec.n_patches));
  for (int i = 0; i < spec.n_patches; ++i) {
    const std::uint64_t idx = first + static_cast<std::uint64_t>(i);
    out.push_back(make_patch(spec, idx, class_of(spec, idx)));
  }
  return out;
}

struct SynthBag {
  std::string bag_id;
  std::vector<std::size_t> instances;  // indices into the patch pool
  int label = 0;
};

/// MIL rule: positive iff any instance belongs to class 1.
inline int bag_label(std::span<const int> instance_classes) {
  return std::any_of(instance_classes.begin(), instance_classes.end(), [](int c) { return c == 1; }) ? 1 : 0;
}

struct BagSpec {
  int n_bags = 100;
  int min_size = 8;
  int max_size = 32;
  double max_witness_fraction = 0.25;  // positives hold 1..⌈fraction·M⌉ class-1 instances
  std::uint64_t seed = 0;
};

/// Bags of distinct pool patches; even-numbered bags are built negative and
/// odd-numbered ones positive, and the stored label is recomputed from the rule.
inline std::vector<SynthBag> make_bags(const BagSpec& spec, std::span<const SynthPatch> pool) {
  require(spec.min_size >= 1 && spec.max_size >= spec.min_size, "make_bags: invalid bag size range");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < pool.size(); ++i) (pool[i].label == 1 ? pos : neg).push_back(i);
  require(!pos.empty() && neg.size() >= static_cast<std::size_t>(spec.max_size),
          "make_bags: pool needs class-1 patches and enough negatives");
  Rng rng(derive_seed(spec.seed, 0x42414753ULL));
  std::vector<SynthBag> bags;
  for (int b = 0; b < spec.n_bags; ++b) {
    const int m = rng.uniform_int(spec.min_size, spec.max_size);
    const bool positive = b % 2 == 1;
    int witnesses = 0;
    if (positive) {
      const int cap = std::max(1, static_cast<int>(std::ceil(spec.max_witness_fraction * m)));
      witnesses = std::min(rng.uniform_int(1, cap), static_cast<int>(pos.size()));
    }
    SynthBag bag;
    bag.bag_id = "bag_" + std::to_string(b);
    // Partial Fisher-Yates draws without replacement.
    auto draw = [&](std::vector<std::size_t>& from, int k) {
      for (int i = 0; i < k; ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(from.size() - static_cast<std::size_t>(i));
        std::swap(from[static_cast<std::size_t>(i)], from[j]);
        bag.instances.push_back(from[static_cast<std::size_t>(i)]);
      }
    };
    draw(pos, witnesses);
    draw(neg, m - witnesses);
    rng.shuffle(bag.instances.begin(), bag.instances.end());
    std::vector<int> classes;
    for (auto i : bag.instances) classes.push_back(pool[i].label);
    bag.label = bag_label(classes);
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace patchssl::synth
