#pragma once

#include "patchssl/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace patchssl::eval {

/// Mann-Whitney AUC: P(score_pos > score_neg) with ties counted one half.
/// Computed from mid-ranks, so the value is exact for the pair count it encodes.
inline double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc_binary: size mismatch");
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (int l : labels) n_pos += l != 0 ? 1 : 0;
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error("AUC undefined: labels contain a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of positives; mid-ranks of a tie group [i, j) are (i + j + 1) / 2.
  std::int64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    std::int64_t pos_in_group = 0;
    for (std::size_t k = i; k < j; ++k) pos_in_group += labels[order[k]] != 0 ? 1 : 0;
    twice_rank_sum += pos_in_group * static_cast<std::int64_t>(i + j + 1);
    i = j;
  }
  // 2U = 2R - n_pos(n_pos+1); AUC = U / (n_pos n_neg).
  const std::int64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return (static_cast<double>(twice_u) / 2.0) / static_cast<double>(n_pos * n_neg);
}

struct MacroAuc {
  double macro = 0.0;
  std::vector<double> per_class;  // NaN where the class is absent
  std::vector<int> skipped;       // classes absent from labels
};

/// Unweighted mean of one-vs-all AUCs over classes present in `labels`.
inline MacroAuc macro_auc(const MatD& scores, std::span<const int> labels) {
  require(static_cast<std::size_t>(scores.rows()) == labels.size(), "macro_auc: size mismatch");
  const int n_classes = static_cast<int>(scores.cols());
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) {
    require(l >= 0 && l < n_classes, "macro_auc: label outside score columns");
    ++counts[static_cast<std::size_t>(l)];
  }
  int present = 0;
  for (int c : counts) present += c > 0 ? 1 : 0;
  if (present < 2) throw Error("AUC undefined: fewer than two classes present");

  MacroAuc r;
  r.per_class.assign(static_cast<std::size_t>(n_classes), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> col(labels.size());
  std::vector<int> bin(labels.size());
  double sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      r.skipped.push_back(c);
      continue;
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      col[i] = scores(static_cast<Eigen::Index>(i), c);
      bin[i] = labels[i] == c ? 1 : 0;
    }
    r.per_class[static_cast<std::size_t>(c)] = auc_binary(col, bin);
    sum += r.per_class[static_cast<std::size_t>(c)];
  }
  r.macro = sum / static_cast<double>(present);
  return r;
}

namespace detail {

/// Number of t(t-1)/2 tied pairs over runs of equal values in a sorted sequence.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq&& equal_to_prev) {
  std::int64_t pairs = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal_to_prev(i)) {
      ++run;
    } else {
      pairs += run * (run - 1) / 2;
      run = 1;
    }
  }
  return pairs;
}

/// Stable merge sort of `v` returning the number of inversions (swaps).
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace detail

struct TauCounts {
  std::int64_t pairs = 0;     // n(n-1)/2
  std::int64_t ties_x = 0;    // pairs tied in x
  std::int64_t ties_y = 0;    // pairs tied in y
  std::int64_t net = 0;       // concordant − discordant
};

/// Knight's O(N log N) pair accounting.
inline TauCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "kendall_tau: size mismatch");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  TauCounts c;
  c.pairs = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  c.ties_x = detail::tied_pairs(n, [&](std::size_t i) { return x[order[i]] == x[order[i - 1]]; });
  const std::int64_t ties_xy = detail::tied_pairs(
      n, [&](std::size_t i) { return x[order[i]] == x[order[i - 1]] && y[order[i]] == y[order[i - 1]]; });
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::int64_t swaps = detail::merge_count(ys, buf, 0, n);
  c.ties_y = detail::tied_pairs(n, [&](std::size_t i) { return ys[i] == ys[i - 1]; });
  // Untied-in-both pairs split into concordant and discordant; swaps counts discordant ones.
  c.net = c.pairs - c.ties_x - c.ties_y + ties_xy - 2 * swaps;
  return c;
}

/// Kendall tau-b; NaN when either input is constant.
inline double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2) throw Error("kendall_tau: need at least two items");
  const TauCounts c = kendall_counts(x, y);
  const double denom = std::sqrt(static_cast<double>(c.pairs - c.ties_x) * static_cast<double>(c.pairs - c.ties_y));
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(c.net) / denom;
}

struct RegressionMetrics {
  double mse = 0.0;
  double kendall_tau = 0.0;
};

inline RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), "regression_metrics: size mismatch");
  if (pred.size() < 2) throw Error("kendall_tau: need at least two items");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - target[i]) * (pred[i] - target[i]);
  return {se / static_cast<double>(pred.size()), kendall_tau_b(pred, target)};
}

inline double accuracy(const MatD& scores, std::span<const int> labels) {
  require(static_cast<std::size_t>(scores.rows()) == labels.size() && !labels.empty(), "accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Eigen::Index best = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    hit += static_cast<int>(best) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population standard deviation over finite values.
inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      r.mean += x;
      ++n;
    }
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  r.mean /= static_cast<double>(n);
  for (double x : v)
    if (std::isfinite(x)) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(n));
  return r;
}

}  // namespace patchssl::eval
