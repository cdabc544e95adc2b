#pragma once

#include "patchssl/nn.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

// Tensor container: "PSSLTNSR", u32 version, u32 count, then per tensor
// u32 name length, name bytes, u32 rows, u32 cols, rows·cols float32 values
// (row-major). All integers and floats little-endian. A JSON sidecar
// "<file>.json" carries model metadata.
namespace patchssl::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[8] = {'P', 'S', 'S', 'L', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kVersion = 1;

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) { return p.string() + ".json"; }

namespace detail {
inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error("checkpoint truncated");
  return v;
}
}  // namespace detail

template <typename Params>
void save_tensors(const std::filesystem::path& path, Params& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  auto tensors = nn::collect(params);
  out.write(kMagic, 8);
  detail::put_u32(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(m->rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m->cols()));
    const Mat<float> f = m->template cast<float>();
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

inline std::map<std::string, MatF> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw Error("not a patchssl checkpoint: " + path.string());
  if (detail::get_u32(in) != kVersion) throw Error("unsupported checkpoint version: " + path.string());
  const std::uint32_t count = detail::get_u32(in);
  std::map<std::string, MatF> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(detail::get_u32(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint32_t rows = detail::get_u32(in), cols = detail::get_u32(in);
    MatF m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw Error("checkpoint truncated: " + path.string());
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

/// Fills an already-shaped parameter struct; every tensor must be present with a matching shape.
template <typename Params>
void load_tensors(const std::filesystem::path& path, Params& params) {
  auto stored = read_tensors(path);
  for (auto& [name, m] : nn::collect(params)) {
    auto it = stored.find(name);
    if (it == stored.end()) throw Error("checkpoint missing tensor: " + name);
    if (it->second.rows() != m->rows() || it->second.cols() != m->cols())
      throw Error("checkpoint tensor shape mismatch: " + name);
    *m = it->second.template cast<typename Params::Scalar>();
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace patchssl::checkpoint
