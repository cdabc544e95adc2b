#include "patchssl/stain.hpp"

#include <gtest/gtest.h>

using namespace patchssl;
using namespace patchssl::stain;

namespace {

double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

struct TwoStain {
  Image patch;
  Eigen::Vector3d v1, v2;  // unit OD directions (natural-log OD, same direction as base 10)
};

// Pixels exp(-(c1 v1 + c2 v2)). With `pure_clusters`, a third of the pixels are
// near-pure in each stain; otherwise every pixel mixes both stains.
TwoStain two_stain_patch(std::uint64_t seed, int size = 64, bool pure_clusters = true) {
  Rng r(seed);
  TwoStain t;
  auto jitter = [&](Eigen::Vector3d v) {
    for (int i = 0; i < 3; ++i) v(i) = std::max(0.05, v(i) + r.uniform(-0.08, 0.08));
    return Eigen::Vector3d(v.normalized());
  };
  t.v1 = jitter({0.65, 0.70, 0.29});
  t.v2 = jitter({0.07, 0.99, 0.11});
  t.v2(0) += 0.25;  // keep every channel stained enough to clear the OD floor
  t.v2(2) += 0.35;
  t.v2.normalize();
  t.patch = Image(size, size);
  const std::size_t n = t.patch.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = r.uniform();
    double c1 = r.uniform(1.5, 3.0), c2 = r.uniform(1.5, 3.0);
    if (pure_clusters && u < 1.0 / 3) c2 = r.uniform(0.0, 0.02);
    else if (pure_clusters && u < 2.0 / 3) c1 = r.uniform(0.0, 0.02);
    const Eigen::Vector3d od = c1 * t.v1 + c2 * t.v2;
    for (int c = 0; c < 3; ++c) t.patch.data[c * n + i] = static_cast<float>(std::exp(-od(c)));
  }
  return t;
}

double mad(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

}  // namespace

TEST(Stain, ReferenceProfileInvariants) {
  const StainProfile p = reference_profile();
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(p.stain_matrix.col(c).norm(), 1.0, 1e-12);
    EXPECT_GT(p.max_concentrations(c), 0.0);
  }
  EXPECT_GE(p.stain_matrix.minCoeff(), 0.0);
  EXPECT_GE(p.stain_matrix(2, 0), p.stain_matrix(2, 1));
}

TEST(Stain, PercentileMatchesLinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 99), 9.9);
  EXPECT_DOUBLE_EQ(percentile({7}, 1), 7.0);
}

TEST(Stain, RecoversKnownDirectionsAcrossSeeds) {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TwoStain t = two_stain_patch(seed);
    const StainProfile p = fit_stain_profile(t.patch);
    const bool v1_first = t.v1(2) >= t.v2(2);
    const Eigen::Vector3d want0 = v1_first ? t.v1 : t.v2, want1 = v1_first ? t.v2 : t.v1;
    EXPECT_GE(p.stain_matrix(2, 0), p.stain_matrix(2, 1));
    EXPECT_GE(p.stain_matrix.minCoeff(), 0.0);
    if (angle_deg(p.stain_matrix.col(0), want0) <= 5.0 && angle_deg(p.stain_matrix.col(1), want1) <= 5.0) ++ok;
  }
  EXPECT_GE(ok, 95);
}

TEST(Stain, WhitePatchThrows) {
  try {
    fit_stain_profile(Image::filled_rgb(32, 32, 1, 1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "insufficient stained pixels");
  }
}

TEST(Stain, SingleStainDirectionThrows) {
  Image img(32, 32);
  Rng r(2);
  const Eigen::Vector3d v = Eigen::Vector3d(0.65, 0.70, 0.29).normalized();
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const double c = r.uniform(1.0, 3.0);
    for (int ch = 0; ch < 3; ++ch) img.data[ch * img.plane() + i] = static_cast<float>(std::exp(-c * v(ch)));
  }
  EXPECT_THROW(fit_stain_profile(img), Error);
}

TEST(Stain, SelfNormalizationIsNearIdentity) {
  for (std::uint64_t seed : {1u, 7u, 19u}) {
    const TwoStain t = two_stain_patch(seed);
    const StainProfile p = fit_stain_profile(t.patch);
    EXPECT_LE(mad(normalize(t.patch, p, p), t.patch), 0.02);
  }
}

TEST(Stain, NormalizationIsIdempotentWithinTolerance) {
  const StainProfile ref = reference_profile();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TwoStain t = two_stain_patch(seed, 64, seed % 2 == 0);
    const Image once = normalize(t.patch, fit_stain_profile(t.patch), ref);
    const Image twice = normalize(once, fit_stain_profile(once), ref);
    EXPECT_LE(mad(once, twice), 0.01) << "seed " << seed;
  }
}

TEST(Stain, BlackAndExtremeInputsStayFiniteAndClamped) {
  const StainProfile ref = reference_profile();
  const TwoStain t = two_stain_patch(11);
  const StainProfile src = fit_stain_profile(t.patch);
  Image black(16, 16, 0.0f);
  Image mixed(16, 16);
  Rng r(1);
  for (auto& v : mixed.data) v = r.uniform() < 0.5 ? 0.0f : static_cast<float>(r.uniform());
  for (const Image& in : {black, mixed, Image::filled_rgb(16, 16, 1, 1, 1)}) {
    const Image out = normalize(in, src, ref);
    for (float v : out.data) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  // Background falls back to the input unchanged.
  EXPECT_EQ(normalize_to_reference(black), black);
}

TEST(Stain, DeterministicAndJsonRoundTrip) {
  const TwoStain t = two_stain_patch(8);
  const StainProfile p = fit_stain_profile(t.patch);
  const StainProfile q = profile_from_json(to_json(p));
  EXPECT_EQ(p.stain_matrix, q.stain_matrix);
  EXPECT_EQ(p.max_concentrations, q.max_concentrations);
  EXPECT_EQ(normalize(t.patch, p, reference_profile()), normalize(t.patch, q, reference_profile()));
}
