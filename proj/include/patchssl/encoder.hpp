#pragma once

#include "patchssl/checkpoint.hpp"
#include "patchssl/cnn.hpp"
#include "patchssl/vit.hpp"

#include <optional>
#include <span>
#include <string>

namespace patchssl {

enum class EncoderKind { cnn_b3, vit_small };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::cnn_b3 ? "cnn_b3" : "vit_small"; }

inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "cnn_b3") return EncoderKind::cnn_b3;
  if (s == "vit_small") return EncoderKind::vit_small;
  throw Error("unknown encoder kind: " + s);
}

struct EncoderSpec {
  EncoderKind kind = EncoderKind::vit_small;
  vit::VitSpec vit = vit::VitSpec::desk_scale();

  [[nodiscard]] int embed_dim() const { return kind == EncoderKind::cnn_b3 ? cnn::kEmbedDim : vit.embed_dim; }
};

inline nlohmann::json to_json(const EncoderSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}, {"embed_dim", s.embed_dim()}};
  if (s.kind == EncoderKind::vit_small) {
    j["heads"] = s.vit.heads;
    j["token_patch"] = s.vit.token_patch;
    j["depth"] = s.vit.depth;
    j["mlp_ratio"] = s.vit.mlp_ratio;
    j["train_crop"] = s.vit.train_crop;
  }
  return j;
}

inline EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
  EncoderSpec s;
  s.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  if (s.kind == EncoderKind::vit_small) {
    s.vit.embed_dim = j.at("embed_dim").get<int>();
    s.vit.heads = j.at("heads").get<int>();
    s.vit.token_patch = j.value("token_patch", 16);
    s.vit.depth = j.at("depth").get<int>();
    s.vit.mlp_ratio = j.value("mlp_ratio", 4);
    s.vit.train_crop = j.value("train_crop", 224);
    s.vit.validate();
  }
  return s;
}

inline nlohmann::json to_json(const vit::InputNormalization& n) {
  return {{"mean", n.mean}, {"std", n.std}};
}

inline vit::InputNormalization normalization_from_json(const nlohmann::json& j) {
  vit::InputNormalization n;
  n.mean = j.at("mean").get<std::array<float, 3>>();
  n.std = j.at("std").get<std::array<float, 3>>();
  return n;
}

/// A frozen patch encoder φ of either architecture.
struct Encoder {
  EncoderSpec spec;
  vit::InputNormalization normalization;
  std::optional<vit::VitParams<float>> vit_params;
  std::optional<cnn::CnnParams<float>> cnn_params;

  static Encoder random(const EncoderSpec& spec, std::uint64_t seed) {
    Encoder e;
    e.spec = spec;
    if (spec.kind == EncoderKind::vit_small) e.vit_params = vit::init_vit<float>(spec.vit, seed);
    else e.cnn_params = cnn::init_cnn_b3<float>(seed);
    return e;
  }

  [[nodiscard]] int embed_dim() const { return spec.embed_dim(); }

  /// One embedding row per patch, in input order.
  [[nodiscard]] MatF embed(std::span<const Image> patches) const {
    if (spec.kind == EncoderKind::vit_small) return vit::embed_all(*vit_params, patches, normalization);
    MatF out(static_cast<Eigen::Index>(patches.size()), cnn::kEmbedDim);
    for (std::size_t i = 0; i < patches.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = cnn::encode_cnn_b3(*cnn_params, patches[i], normalization).transpose();
    return out;
  }

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) {
    if (vit_params) checkpoint::save_tensors(path, *vit_params);
    else checkpoint::save_tensors(path, *cnn_params);
    nlohmann::json side = std::move(extra);
    side["format"] = "patchssl-tensors-v1";
    side["encoder"] = to_json(spec);
    side["normalization"] = to_json(normalization);
    checkpoint::write_json(checkpoint::sidecar_path(path), side);
  }

  static Encoder load(const std::filesystem::path& path) {
    const auto side = checkpoint::read_json(checkpoint::sidecar_path(path));
    Encoder e = random(encoder_spec_from_json(side.at("encoder")), 0);
    if (side.contains("normalization")) e.normalization = normalization_from_json(side["normalization"]);
    if (e.vit_params) checkpoint::load_tensors(path, *e.vit_params);
    else checkpoint::load_tensors(path, *e.cnn_params);
    return e;
  }
};

}  // namespace patchssl
