#pragma once

#include "patchssl/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace patchssl::eval {

struct EmbeddingMatrix {
  MatF rows;
  std::vector<std::string> ids;
  std::optional<std::vector<int>> class_labels;
  std::optional<std::vector<double>> targets;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }

  void validate() const {
    require(ids.size() == size(), "embedding matrix: id count does not match rows");
    require(rows.allFinite(), "embedding matrix: non-finite values");
    std::set<std::string> uniq(ids.begin(), ids.end());
    require(uniq.size() == ids.size(), "embedding matrix: duplicate ids");
    if (class_labels) require(class_labels->size() == size(), "embedding matrix: label count mismatch");
    if (targets) require(targets->size() == size(), "embedding matrix: target count mismatch");
  }

  /// Rows at the given indices, in that order.
  [[nodiscard]] EmbeddingMatrix select(std::span<const std::size_t> idx) const {
    EmbeddingMatrix out;
    out.rows.resize(static_cast<Eigen::Index>(idx.size()), rows.cols());
    if (class_labels) out.class_labels.emplace();
    if (targets) out.targets.emplace();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(idx[i]));
      out.ids.push_back(ids[idx[i]]);
      if (class_labels) out.class_labels->push_back((*class_labels)[idx[i]]);
      if (targets) out.targets->push_back((*targets)[idx[i]]);
    }
    return out;
  }
};

inline constexpr int kUmapNeighbors = 15;
inline constexpr double kUmapMinDist = 0.1;

/// Writes `<path>` (row-major little-endian float32) and `<path>.json`; keys of
/// `extra` (provenance such as encoder and stain_norm) are added to the sidecar.
inline void export_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path,
                              const nlohmann::json& extra = nlohmann::json::object()) {
  if (m.rows.size() == 0) throw Error("nothing to export");
  m.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write embeddings: " + path.string());
    out.write(reinterpret_cast<const char*>(m.rows.data()), static_cast<std::streamsize>(m.rows.size() * sizeof(float)));
    if (!out) throw Error("failed writing embeddings: " + path.string());
  }
  nlohmann::json j{{"n", m.rows.rows()},
                   {"d", m.rows.cols()},
                   {"dtype", "float32-le"},
                   {"layout", "row-major"},
                   {"ids", m.ids},
                   {"suggested_projection", {{"method", "umap"}, {"neighbors", kUmapNeighbors}, {"min_dist", kUmapMinDist}}}};
  if (m.class_labels) j["labels"] = *m.class_labels;
  if (m.targets) j["targets"] = *m.targets;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  checkpoint::write_json(checkpoint::sidecar_path(path), j);
}

inline EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  const auto j = checkpoint::read_json(checkpoint::sidecar_path(path));
  const auto n = j.at("n").get<Eigen::Index>(), d = j.at("d").get<Eigen::Index>();
  EmbeddingMatrix m;
  m.rows.resize(n, d);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embeddings: " + path.string());
  in.read(reinterpret_cast<char*>(m.rows.data()), static_cast<std::streamsize>(m.rows.size() * sizeof(float)));
  if (!in) throw Error("embedding payload truncated: " + path.string());
  m.ids = j.at("ids").get<std::vector<std::string>>();
  if (j.contains("labels")) m.class_labels = j["labels"].get<std::vector<int>>();
  if (j.contains("targets")) m.targets = j["targets"].get<std::vector<double>>();
  m.validate();
  return m;
}

}  // namespace patchssl::eval
