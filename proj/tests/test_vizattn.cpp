#include "patchssl/vizattn.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace patchssl;
using namespace patchssl::vizattn;

namespace {

Image noise_patch(int s, std::uint64_t seed) {
  Rng rng(seed);
  Image im(s, s);
  for (auto& v : im.data) v = static_cast<float>(rng.uniform());
  return im;
}

HeadAttentionMap raw_map(const MatD& grid) {
  HeadAttentionMap m;
  m.grid = grid;
  return m;
}

int tinted_pixels(const Image& before, const Image& after) {
  int n = 0;
  for (int y = 0; y < before.height; ++y)
    for (int x = 0; x < before.width; ++x) n += before.at(1, y, x) != after.at(1, y, x) ? 1 : 0;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Attention, DeskMapsAreRowStochastic) {
  const auto params = vit::init_vit<float>(vit::VitSpec::desk_scale(), 2);
  const auto maps = extract_cls_attention(params, noise_patch(256, 1));
  ASSERT_EQ(maps.size(), 3u);
  for (const auto& m : maps) {
    EXPECT_EQ(m.grid.rows(), 16);
    EXPECT_EQ(m.layer, 3);
    EXPECT_TRUE(m.grid.allFinite());
    EXPECT_GE(m.grid.minCoeff(), 0.0);
    EXPECT_NEAR(m.grid.sum() + m.cls_self, 1.0, 1e-5);
  }
  EXPECT_EQ(extract_cls_attention(params, noise_patch(256, 1), 0)[0].layer, 0);
  EXPECT_THROW(extract_cls_attention(params, noise_patch(256, 1), 4), Error);
  EXPECT_THROW(extract_cls_attention(params, noise_patch(256, 1), -5), Error);
}

TEST(Attention, PaperScaleHasSixHeads) {
  const auto params = vit::init_vit<float>(vit::VitSpec::paper_scale(), 2);
  const auto maps = extract_cls_attention(params, noise_patch(256, 1));
  ASSERT_EQ(maps.size(), 6u);
  for (const auto& m : maps) EXPECT_NEAR(m.grid.sum() + m.cls_self, 1.0, 1e-5);
}

TEST(Attention, GridIndexBijection) {
  std::set<std::pair<int, int>> seen;
  for (int t = 0; t < 256; ++t) {
    const auto [r, c] = token_to_cell(t, 16);
    EXPECT_EQ(cell_to_token(r, c, 16), t);
    seen.insert({r, c});
  }
  EXPECT_EQ(seen.size(), 256u);
}

TEST(Overlay, FourValueExample) {
  MatD g = MatD::Constant(2, 2, 0.0);
  g << 0.0, 0.3, 0.6, 1.0;
  // Raw values chosen so min-max returns them unchanged.
  const auto o = threshold_overlay(raw_map(g), noise_patch(32, 2), 0.5);
  EXPECT_EQ(o.token_mask, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_EQ(o.tinted_tokens, 2);

  // The same after an affine change of raw scale.
  const auto o2 = threshold_overlay(raw_map((g.array() * 0.02 + 0.001).matrix()), noise_patch(32, 2), 0.5);
  EXPECT_EQ(o2.token_mask, o.token_mask);
}

TEST(Overlay, OneHotTintsExactlyOneBlock) {
  MatD g = MatD::Zero(16, 16);
  g(5, 9) = 0.2;
  const Image p = noise_patch(256, 3);
  const auto o = threshold_overlay(raw_map(g), p);
  EXPECT_EQ(o.tinted_tokens, 1);
  EXPECT_EQ(tinted_pixels(p, o.image), 256);
  EXPECT_FLOAT_EQ(o.image.at(0, 5 * 16, 9 * 16), 0.6f * p.at(0, 80, 144) + 0.4f);
  EXPECT_FLOAT_EQ(o.image.at(2, 5 * 16 + 15, 9 * 16 + 15), 0.6f * p.at(2, 95, 159));
  EXPECT_EQ(o.image.at(0, 0, 0), p.at(0, 0, 0));
}

TEST(Overlay, UniformMapTintsNothing) {
  const Image p = noise_patch(64, 4);
  const auto o = threshold_overlay(raw_map(MatD::Constant(4, 4, 1.0 / 17)), p);
  EXPECT_TRUE(o.constant_map);
  EXPECT_EQ(o.tinted_tokens, 0);
  EXPECT_EQ(o.image.data, p.data);
}

TEST(Overlay, MinMaxHitsBothEndsAndThresholdIsMonotone) {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    MatD g(16, 16);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform() * 1e-2;
    HeadAttentionMap n;
    ASSERT_TRUE(minmax_normalize(raw_map(g), n));
    EXPECT_EQ(n.grid.minCoeff(), 0.0);
    EXPECT_EQ(n.grid.maxCoeff(), 1.0);
    std::vector<std::uint8_t> prev;
    for (double t : {0.3, 0.5, 0.7}) {
      const auto m = threshold_overlay(raw_map(g), Image(256, 256), t).token_mask;
      if (!prev.empty())
        for (std::size_t i = 0; i < m.size(); ++i) EXPECT_LE(m[i], prev[i]);
      prev = m;
    }
  }
}

TEST(Overlay, SizeMismatchThrows) {
  EXPECT_THROW(threshold_overlay(raw_map(MatD::Zero(16, 16)), Image(100, 100)), Error);
  EXPECT_THROW(threshold_overlay(raw_map(MatD::Zero(4, 5)), Image(64, 64)), Error);
}

TEST(Panel, CountsAndDeterminism) {
  const auto desk = vit::init_vit<float>(vit::VitSpec::desk_scale(), 6);
  const Image p = noise_patch(256, 7);
  const Image panel = render_head_panel(p, desk);
  EXPECT_EQ(panel.width, 256 * 4);
  EXPECT_EQ(panel.height, 256);
  const auto paper = vit::init_vit<float>(vit::VitSpec::paper_scale(), 6);
  EXPECT_EQ(render_head_panel(p, paper).width, 256 * 7);

  const auto dir = testsupport::scratch_dir("panel");
  save_png(dir / "a.png", panel);
  save_png(dir / "b.png", render_head_panel(p, desk));
  EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
}
