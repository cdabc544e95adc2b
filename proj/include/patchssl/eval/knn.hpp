#pragma once

#include "patchssl/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace patchssl::eval {

inline constexpr int kDefaultK = 20;
inline constexpr double kDistanceEps = 1e-8;

/// Rows scaled to unit L2 norm (zero rows left as is), in double precision.
inline MatD l2_normalize_rows(const MatF& m) {
  MatD out = m.cast<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

struct Neighbor {
  double distance;
  std::size_t index;
};

/// The k nearest training rows of `q`, nearest first; equal distances keep the lower index first.
inline std::vector<Neighbor> nearest(const MatD& train, const Eigen::Ref<const RowVec<double>>& q, int k) {
  const std::size_t n = static_cast<std::size_t>(train.rows());
  std::vector<Neighbor> all(n);
  for (std::size_t i = 0; i < n; ++i)
    all[i] = {std::sqrt((train.row(static_cast<Eigen::Index>(i)) - q).squaredNorm()), i};
  auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  const auto kk = static_cast<std::ptrdiff_t>(k);
  std::partial_sort(all.begin(), all.begin() + kk, all.end(), closer);
  all.resize(static_cast<std::size_t>(k));
  return all;
}

/// Distance-weighted vote over the k nearest neighbours; each row of the result
/// holds per-class scores summing to 1.
inline MatD knn_predict(const MatF& train, std::span<const int> train_labels, const MatF& query, int k,
                        int n_classes = 0) {
  require(static_cast<std::size_t>(train.rows()) == train_labels.size(), "knn: label count mismatch");
  require(train.cols() == query.cols(), "knn: dimension mismatch");
  if (k <= 0 || k > train.rows()) throw Error("knn: k must lie in [1, N_train]");
  if (n_classes <= 0) n_classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;
  const MatD tr = l2_normalize_rows(train);
  const MatD qs = l2_normalize_rows(query);
  MatD scores = MatD::Zero(qs.rows(), n_classes);
  for (Eigen::Index i = 0; i < qs.rows(); ++i) {
    for (const auto& nb : nearest(tr, qs.row(i), k)) {
      const int label = train_labels[nb.index];
      require(label >= 0 && label < n_classes, "knn: label out of range");
      scores(i, label) += 1.0 / (nb.distance + kDistanceEps);
    }
    scores.row(i) /= scores.row(i).sum();
  }
  return scores;
}

/// Distance-weighted mean of neighbour targets.
inline std::vector<double> knn_regress(const MatF& train, std::span<const double> train_targets, const MatF& query,
                                       int k) {
  require(static_cast<std::size_t>(train.rows()) == train_targets.size(), "knn: target count mismatch");
  require(train.cols() == query.cols(), "knn: dimension mismatch");
  if (k <= 0 || k > train.rows()) throw Error("knn: k must lie in [1, N_train]");
  const MatD tr = l2_normalize_rows(train);
  const MatD qs = l2_normalize_rows(query);
  std::vector<double> out(static_cast<std::size_t>(qs.rows()));
  for (Eigen::Index i = 0; i < qs.rows(); ++i) {
    double wsum = 0.0, acc = 0.0;
    for (const auto& nb : nearest(tr, qs.row(i), k)) {
      const double w = 1.0 / (nb.distance + kDistanceEps);
      wsum += w;
      acc += w * train_targets[nb.index];
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
  return out;
}

}  // namespace patchssl::eval
