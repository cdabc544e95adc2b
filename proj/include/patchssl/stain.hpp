#pragma once

#include "patchssl/image.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace patchssl::stain {

inline constexpr double kEpsilon = 1.0 / 256.0;  // floor before log, keeps OD finite
inline constexpr double kOdThreshold = 0.15;     // background cut, per channel
inline constexpr double kAnglePercentile = 1.0;
inline constexpr double kConcentrationPercentile = 99.0;
inline constexpr std::size_t kMinPixels = 100;

/// Columns: the two stain optical-density directions (RGB rows); column 0 is
/// the "hematoxylin" slot, picked by the larger blue component.
struct StainProfile {
  Eigen::Matrix<double, 3, 2> stain_matrix;
  Eigen::Vector2d max_concentrations;
};

/// Column order used everywhere: the direction with the larger blue OD first.
/// Fitted and reference profiles must agree on it for normalize() to pair stains.
inline bool blue_first(const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return a(2) >= b(2); }

/// Fixed reference: the widely used Macenko H&E directions and maximum
/// concentrations (1.9705, 1.0308), the latter taken as base-10 OD. Rescaling
/// them by 1/ln 10 would put every near-pure eosin pixel's red OD below the
/// 0.15 cut, so normalized patches could never be refit consistently.
/// Columns are ordered by blue_first like every fitted profile.
inline StainProfile reference_profile() {
  Eigen::Vector3d h(0.5626, 0.7201, 0.4062), e(0.2159, 0.8012, 0.5581);
  h.normalize();
  e.normalize();
  const double hmax = 1.9705, emax = 1.0308;
  StainProfile p;
  if (blue_first(h, e)) {
    p.stain_matrix << h, e;
    p.max_concentrations << hmax, emax;
  } else {
    p.stain_matrix << e, h;
    p.max_concentrations << emax, hmax;
  }
  return p;
}

/// Linear-interpolated percentile (numpy default), q in [0,100].
inline double percentile(std::vector<double> values, double q) {
  require(!values.empty(), "percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

/// Per-pixel optical density, N×3.
inline Eigen::MatrixX3d optical_density(const Image& patch) {
  Eigen::MatrixX3d od(static_cast<Eigen::Index>(patch.plane()), 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < patch.plane(); ++i) {
      const double v = std::max(static_cast<double>(patch.data[c * patch.plane() + i]), kEpsilon);
      od(static_cast<Eigen::Index>(i), c) = -std::log10(v);
    }
  return od;
}

/// Least-squares stain concentrations, N×2.
inline Eigen::MatrixX2d concentrations(const Eigen::MatrixX3d& od, const Eigen::Matrix<double, 3, 2>& stains) {
  const Eigen::Matrix2d gram = stains.transpose() * stains;
  const Eigen::Matrix<double, 3, 2> pinv_t = stains * gram.inverse();
  return od * pinv_t;
}

inline StainProfile fit_stain_profile(const Image& patch) {
  const Eigen::MatrixX3d od = optical_density(patch);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < od.rows(); ++i)
    if ((od.row(i).array() >= kOdThreshold).all()) keep.push_back(i);
  if (keep.size() < kMinPixels) throw Error("insufficient stained pixels");

  Eigen::MatrixX3d stained(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t k = 0; k < keep.size(); ++k) stained.row(static_cast<Eigen::Index>(k)) = od.row(keep[k]);

  const Eigen::RowVector3d mean = stained.colwise().mean();
  const Eigen::MatrixX3d centered = stained.rowwise() - mean;
  const Eigen::Matrix3d cov = centered.transpose() * centered / static_cast<double>(stained.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Eigenvalues ascending: the principal plane is spanned by columns 2 and 1.
  const auto& evals = eig.eigenvalues();
  if (!(evals(2) > 0.0) || evals(1) < 1e-6 * evals(2)) throw Error("degenerate stain cloud: single stain direction");
  Eigen::Matrix<double, 3, 2> plane;
  plane.col(0) = eig.eigenvectors().col(2);
  plane.col(1) = eig.eigenvectors().col(1);
  // Orient both axes towards the positive OD orthant.
  for (int c = 0; c < 2; ++c)
    if (plane.col(c).sum() < 0.0) plane.col(c) *= -1.0;

  const Eigen::MatrixX2d proj = stained * plane;
  std::vector<double> angles(static_cast<std::size_t>(proj.rows()));
  for (Eigen::Index i = 0; i < proj.rows(); ++i) angles[static_cast<std::size_t>(i)] = std::atan2(proj(i, 1), proj(i, 0));
  const double lo = percentile(angles, kAnglePercentile);
  const double hi = percentile(angles, 100.0 - kAnglePercentile);

  auto direction = [&](double phi) {
    Eigen::Vector3d v = plane * Eigen::Vector2d(std::cos(phi), std::sin(phi));
    v = v.cwiseMax(0.0);
    const double n = v.norm();
    if (!(n > 0.0)) throw Error("degenerate stain cloud: non-positive stain direction");
    return Eigen::Vector3d(v / n);
  };
  const Eigen::Vector3d a = direction(lo);
  const Eigen::Vector3d b = direction(hi);
  if (std::acos(std::clamp(a.dot(b), -1.0, 1.0)) < 1e-3) throw Error("degenerate stain cloud: single stain direction");

  StainProfile p;
  if (blue_first(a, b)) {
    p.stain_matrix.col(0) = a;
    p.stain_matrix.col(1) = b;
  } else {
    p.stain_matrix.col(0) = b;
    p.stain_matrix.col(1) = a;
  }

  const Eigen::MatrixX2d conc = concentrations(od, p.stain_matrix);
  for (int s = 0; s < 2; ++s) {
    std::vector<double> col(conc.col(s).data(), conc.col(s).data() + conc.rows());
    p.max_concentrations(s) = percentile(std::move(col), kConcentrationPercentile);
    if (!(p.max_concentrations(s) > 0.0)) throw Error("insufficient stained pixels");
  }
  return p;
}

inline Image normalize(const Image& patch, const StainProfile& source, const StainProfile& reference) {
  require(source.max_concentrations.minCoeff() > 0.0 && reference.max_concentrations.minCoeff() > 0.0,
          "stain profile with non-positive max concentration");
  const Eigen::MatrixX3d od = optical_density(patch);
  Eigen::MatrixX2d conc = concentrations(od, source.stain_matrix);
  for (int s = 0; s < 2; ++s) conc.col(s) *= reference.max_concentrations(s) / source.max_concentrations(s);
  const Eigen::MatrixX3d od_out = conc * reference.stain_matrix.transpose();

  Image out(patch.height, patch.width);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < patch.plane(); ++i) {
      const double v = std::pow(10.0, -od_out(static_cast<Eigen::Index>(i), c));
      out.data[c * patch.plane() + i] = static_cast<float>(std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0);
    }
  return out;
}

inline nlohmann::json to_json(const StainProfile& p) {
  nlohmann::json j;
  j["stain_matrix"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) j["stain_matrix"].push_back({p.stain_matrix(r, 0), p.stain_matrix(r, 1)});
  j["max_concentrations"] = {p.max_concentrations(0), p.max_concentrations(1)};
  return j;
}

inline StainProfile profile_from_json(const nlohmann::json& j) {
  StainProfile p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) p.stain_matrix(r, c) = j.at("stain_matrix").at(r).at(c).get<double>();
  for (int c = 0; c < 2; ++c) p.max_concentrations(c) = j.at("max_concentrations").at(c).get<double>();
  return p;
}

/// Fits the patch's own profile and maps it onto the reference. Patches without
/// enough stained pixels (background) are returned unchanged.
inline Image normalize_to_reference(const Image& patch, const StainProfile& reference = reference_profile()) {
  try {
    return normalize(patch, fit_stain_profile(patch), reference);
  } catch (const Error&) {
    return patch;
  }
}

}  // namespace patchssl::stain
