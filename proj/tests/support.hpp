#pragma once

#include "patchssl/nn.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace testsupport {

struct GradMismatch {
  std::string name;
  Eigen::Index index;
  double analytic, numeric;
};

/// |a − n| ≤ rtol·max(|a|, |n|), with an absolute floor for entries whose true
/// value is zero up to round-off.
inline bool close_rel(double a, double n, double rtol, double atol = 1e-9) {
  return std::abs(a - n) <= rtol * std::max(std::abs(a), std::abs(n)) + atol;
}

/// Central finite differences on every entry (or every `stride`-th entry) of
/// every tensor of `params`, compared with `analytic` (same layout).
template <typename Params>
std::vector<GradMismatch> check_gradients(Params& params, const Params& analytic,
                                          const std::function<double()>& loss, double rtol = 1e-4,
                                          double h = 1e-5, Eigen::Index stride = 1, std::size_t* checked = nullptr) {
  std::vector<GradMismatch> bad;
  auto p = patchssl::nn::collect(params);
  auto g = patchssl::nn::collect(const_cast<Params&>(analytic));
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto& m = *p[t].second;
    const auto& gm = *g[t].second;
    for (Eigen::Index i = 0; i < m.size(); i += stride) {
      const double orig = m.data()[i];
      m.data()[i] = orig + h;
      const double up = loss();
      m.data()[i] = orig - h;
      const double dn = loss();
      m.data()[i] = orig;
      const double num = (up - dn) / (2 * h);
      const double ana = gm.data()[i];
      if (checked) ++*checked;
      if (!close_rel(ana, num, rtol)) bad.push_back({p[t].first, i, ana, num});
    }
  }
  return bad;
}

/// Moves every tensor entry by N(0, sd) so checks run at a generic point.
template <typename Params>
void jitter(Params& params, patchssl::Rng& rng, double sd) {
  params.visit([&](const std::string&, auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.normal(0.0, sd);
  });
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("patchssl_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace testsupport
