#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance run. They deliberately avoid the library's code paths.

#include "patchssl/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace oracle {

using patchssl::MatD;
using patchssl::MatF;
using patchssl::RowVec;
using patchssl::VecD;

// Every pairwise exp term written out, in long double.
inline double ntxent(const MatD& z, const std::vector<int>& partner, double tau) {
  const int n = static_cast<int>(z.rows()), d = static_cast<int>(z.cols());
  std::vector<std::vector<long double>> u(n, std::vector<long double>(d));
  for (int i = 0; i < n; ++i) {
    long double nn = 0;
    for (int k = 0; k < d; ++k) nn += static_cast<long double>(z(i, k)) * z(i, k);
    nn = std::sqrt(nn);
    for (int k = 0; k < d; ++k) u[i][k] = z(i, k) / nn;
  }
  auto sim = [&](int a, int b) {
    long double s = 0;
    for (int k = 0; k < d; ++k) s += u[a][k] * u[b][k];
    return s;
  };
  long double total = 0;
  for (int i = 0; i < n; ++i) {
    long double denom = 0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau);
    total += -std::log(std::exp(sim(i, partner[i]) / tau) / denom);
  }
  return static_cast<double>(total / n);
}

inline double dino(const MatD& s, const MatD& t, const VecD& c, double ts, double tt) {
  const int k = static_cast<int>(s.cols());
  auto softmax = [&](const std::vector<long double>& x) {
    long double mx = x[0], sum = 0;
    for (auto v : x) mx = std::max(mx, v);
    std::vector<long double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sum += out[i] = std::exp(x[i] - mx);
    for (auto& v : out) v /= sum;
    return out;
  };
  long double total = 0;
  int terms = 0;
  for (int g = 0; g < t.rows(); ++g) {
    std::vector<long double> tl(k);
    for (int j = 0; j < k; ++j) tl[j] = (t(g, j) - c(j)) / tt;
    const auto pt = softmax(tl);
    for (int v = 0; v < s.rows(); ++v) {
      if (v == g) continue;
      std::vector<long double> sl(k);
      for (int j = 0; j < k; ++j) sl[j] = s(v, j) / ts;
      const auto ps = softmax(sl);
      for (int j = 0; j < k; ++j) total -= pt[j] * std::log(ps[j]);
      ++terms;
    }
  }
  return static_cast<double>(total / terms);
}

// Full stable sort of every distance, then the vote.
inline MatD knn(const MatF& train, const std::vector<int>& labels, const MatF& query, int k, int classes) {
  auto unit = [](RowVec<double> v) {
    const double n = v.norm();
    return n > 0 ? RowVec<double>(v / n) : v;
  };
  MatD out = MatD::Zero(query.rows(), classes);
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    const RowVec<double> qu = unit(query.row(q).cast<double>());
    std::vector<std::pair<double, std::size_t>> d;
    for (Eigen::Index i = 0; i < train.rows(); ++i)
      d.emplace_back(std::sqrt((unit(train.row(i).cast<double>()) - qu).squaredNorm()), static_cast<std::size_t>(i));
    std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (int j = 0; j < k; ++j) out(q, labels[d[static_cast<std::size_t>(j)].second]) += 1.0 / (d[static_cast<std::size_t>(j)].first + 1e-8);
    out.row(q) /= out.row(q).sum();
  }
  return out;
}

// Count every positive-negative pair.
inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  std::int64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
  return (static_cast<double>(twice) / 2.0) / static_cast<double>(pos * neg);
}

inline double tau_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  std::int64_t n0 = 0, tx = 0, ty = 0, net = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++n0;
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0) ++tx;
      if (dy == 0) ++ty;
      if (dx * dy > 0) ++net;
      if (dx * dy < 0) --net;
    }
  return static_cast<double>(net) / std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
}

}  // namespace oracle
