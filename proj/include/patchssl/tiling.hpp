#pragma once

#include "patchssl/image.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace patchssl::tiling {

inline constexpr int kDefaultTileSize = 256;
inline constexpr double kDefaultTissueThreshold = 0.10;
inline constexpr int kMedianKernel = 7;

struct SlideRaster {
  Image pixels;
  std::string slide_id;
  std::optional<double> mpp_hint;
};

struct TileRecord {
  std::string slide_id;
  int x = 0;
  int y = 0;
  int tile_size = kDefaultTileSize;
  double tissue_fraction = 0.0;

  bool operator==(const TileRecord&) const = default;
};

/// Binary H×W mask, 1 = tissue.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  [[nodiscard]] std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
};

/// HSV saturation in [0,255] as OpenCV computes it for 8-bit input.
inline cv::Mat saturation_channel(const Image& img) {
  cv::Mat hsv;
  cv::cvtColor(to_cv_bgr8(img), hsv, cv::COLOR_BGR2HSV);
  cv::Mat channels[3];
  cv::split(hsv, channels);
  return channels[1];
}

/// Otsu threshold on HSV saturation followed by a 7×7 median filter.
/// A constant saturation channel has no separating threshold and yields an empty mask.
inline Mask tissue_mask(const SlideRaster& slide) {
  const Image& img = slide.pixels;
  Mask mask{img.height, img.width, std::vector<std::uint8_t>(img.plane(), 0)};
  if (img.empty()) return mask;

  const cv::Mat sat = saturation_channel(img);
  double lo = 0, hi = 0;
  cv::minMaxLoc(sat, &lo, &hi);
  if (lo == hi) return mask;

  cv::Mat bin;
  cv::threshold(sat, bin, 0, 1, cv::THRESH_BINARY | cv::THRESH_OTSU);
  cv::Mat filtered;
  cv::medianBlur(bin, filtered, kMedianKernel);
  for (int y = 0; y < img.height; ++y) {
    const auto* row = filtered.ptr<std::uint8_t>(y);
    std::copy_n(row, img.width, &mask.data[static_cast<std::size_t>(y) * img.width]);
  }
  return mask;
}

/// Grid tiles fully inside the mask's extent, row-major by (y, x), with tissue
/// fraction at or above the threshold.
inline std::vector<TileRecord> tessellate_mask(const Mask& mask, const std::string& slide_id, int tile_size,
                                               double tissue_threshold) {
  require(tile_size > 0, "tile_size must be positive");
  require(tissue_threshold >= 0.0 && tissue_threshold <= 1.0, "tissue_threshold must lie in [0,1]");
  std::vector<TileRecord> out;
  const int rows = mask.height / tile_size;
  const int cols = mask.width / tile_size;
  const double area = static_cast<double>(tile_size) * tile_size;
  for (int ty = 0; ty < rows; ++ty)
    for (int tx = 0; tx < cols; ++tx) {
      const int x = tx * tile_size, y = ty * tile_size;
      std::size_t n = 0;
      for (int r = 0; r < tile_size; ++r) {
        const std::uint8_t* row = &mask.data[static_cast<std::size_t>(y + r) * mask.width + x];
        for (int c = 0; c < tile_size; ++c) n += row[c];
      }
      const double frac = static_cast<double>(n) / area;
      if (frac >= tissue_threshold) out.push_back({slide_id, x, y, tile_size, frac});
    }
  return out;
}

inline std::vector<TileRecord> tessellate(const SlideRaster& slide, int tile_size = kDefaultTileSize,
                                          double tissue_threshold = kDefaultTissueThreshold) {
  require(tile_size > 0, "tile_size must be positive");
  require(tissue_threshold >= 0.0 && tissue_threshold <= 1.0, "tissue_threshold must lie in [0,1]");
  if (slide.pixels.height < tile_size || slide.pixels.width < tile_size) return {};
  return tessellate_mask(tissue_mask(slide), slide.slide_id, tile_size, tissue_threshold);
}

inline Image crop_tile(const SlideRaster& slide, const TileRecord& rec) {
  if (rec.tile_size <= 0 || rec.x < 0 || rec.y < 0 || rec.x + rec.tile_size > slide.pixels.width ||
      rec.y + rec.tile_size > slide.pixels.height)
    throw Error("tile outside raster");
  return crop(slide.pixels, rec.x, rec.y, rec.tile_size, rec.tile_size);
}

inline std::string tile_name(const TileRecord& rec) {
  return rec.slide_id + "_" + std::to_string(rec.x) + "_" + std::to_string(rec.y);
}

// ---------------------------------------------------------------------------
// Manifests. One schema serves tiled slides and the synthetic corpus:
//   {slide_id, tile_size, tissue_threshold, source?, mpp_hint?,
//    tiles:[{x, y, tissue_fraction, id?, path?, label?}]}
// A tile with "path" is read from that file (relative to the manifest);
// otherwise it is cropped from "source".

inline nlohmann::json manifest_json(const SlideRaster& slide, const std::vector<TileRecord>& tiles, int tile_size,
                                    double tissue_threshold, const std::string& source = {}) {
  nlohmann::json j;
  j["slide_id"] = slide.slide_id;
  j["tile_size"] = tile_size;
  j["tissue_threshold"] = tissue_threshold;
  if (!source.empty()) j["source"] = source;
  if (slide.mpp_hint) j["mpp_hint"] = *slide.mpp_hint;
  j["tiles"] = nlohmann::json::array();
  for (const auto& t : tiles) j["tiles"].push_back({{"x", t.x}, {"y", t.y}, {"tissue_fraction", t.tissue_fraction}});
  return j;
}

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;    // materialized tile, may be empty
  std::filesystem::path source;  // raster to crop from when path is empty
  TileRecord record;
  std::optional<int> label;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest: " + manifest_path.string());
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto base = manifest_path.parent_path();
  std::vector<nlohmann::json> slides;
  if (root.is_array()) slides.assign(root.begin(), root.end());
  else slides.push_back(root);

  std::vector<ManifestEntry> out;
  for (const auto& s : slides) {
    const std::string slide_id = s.at("slide_id").get<std::string>();
    const int tile_size = s.at("tile_size").get<int>();
    std::filesystem::path source;
    if (s.contains("source")) source = base / s["source"].get<std::string>();
    for (const auto& t : s.at("tiles")) {
      ManifestEntry e;
      e.record = {slide_id, t.at("x").get<int>(), t.at("y").get<int>(), tile_size,
                  t.value("tissue_fraction", 1.0)};
      e.id = t.contains("id") ? t["id"].get<std::string>() : tile_name(e.record);
      if (t.contains("path")) e.path = base / t["path"].get<std::string>();
      e.source = source;
      if (t.contains("label")) e.label = t["label"].get<int>();
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Loads the pixels of one manifest entry.
inline Image load_entry(const ManifestEntry& e) {
  if (!e.path.empty()) return load_image(e.path);
  require(!e.source.empty(), "manifest tile has neither path nor source: " + e.id);
  SlideRaster slide{load_image(e.source), e.record.slide_id, std::nullopt};
  return crop_tile(slide, e.record);
}

inline std::vector<Image> load_entries(const std::vector<ManifestEntry>& entries) {
  std::vector<Image> out;
  out.reserve(entries.size());
  std::filesystem::path cached_source;
  std::optional<SlideRaster> cached;
  for (const auto& e : entries) {
    if (!e.path.empty()) {
      out.push_back(load_image(e.path));
      continue;
    }
    require(!e.source.empty(), "manifest tile has neither path nor source: " + e.id);
    if (!cached || cached_source != e.source) {
      cached = SlideRaster{load_image(e.source), e.record.slide_id, std::nullopt};
      cached_source = e.source;
    }
    out.push_back(crop_tile(*cached, e.record));
  }
  return out;
}

}  // namespace patchssl::tiling
