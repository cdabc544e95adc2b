#pragma once

#include "patchssl/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace patchssl::eval {

inline constexpr int kDefaultFolds = 10;

/// Stratified k-fold partition with a nested, stratified training subsample.
struct CVPlan {
  int n_folds = kDefaultFolds;
  double train_fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<int> fold_of;                      // per input index
  std::vector<std::vector<std::size_t>> test;    // per fold, input indices
  std::vector<std::vector<std::size_t>> train;   // per fold, full training split
  std::vector<std::vector<std::size_t>> active;  // per fold, subsample of train

  [[nodiscard]] std::map<std::string, int> fold_assignment() const {
    std::map<std::string, int> m;
    for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = fold_of[i];
    return m;
  }
};

/// ⌈fraction·n⌉, tolerant of binary rounding in the product.
inline std::size_t subsample_size(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

/// Orders `members` so that every prefix is stratified: at each position the
/// class furthest behind its proportional quota goes next. Within a class the
/// order is a seeded shuffle.
inline std::vector<std::size_t> stratified_priority(std::span<const std::size_t> members, std::span<const int> labels,
                                                    Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t m : members) by_class[labels[m]].push_back(m);
  std::vector<std::vector<std::size_t>> pools;
  for (auto& [label, v] : by_class) {
    rng.shuffle(v.begin(), v.end());
    pools.push_back(std::move(v));
  }
  const double total = static_cast<double>(members.size());
  std::vector<std::size_t> taken(pools.size(), 0);
  std::vector<std::size_t> out;
  out.reserve(members.size());
  for (std::size_t t = 0; t < members.size(); ++t) {
    std::size_t best = pools.size();
    double best_deficit = 0.0;
    for (std::size_t c = 0; c < pools.size(); ++c) {
      if (taken[c] == pools[c].size()) continue;
      const double share = static_cast<double>(pools[c].size()) / total;
      const double deficit = share * static_cast<double>(t + 1) - static_cast<double>(taken[c]);
      if (best == pools.size() || deficit > best_deficit) {
        best = c;
        best_deficit = deficit;
      }
    }
    out.push_back(pools[best][taken[best]++]);
  }
  return out;
}

inline CVPlan make_cv_plan(std::span<const std::string> ids, std::span<const int> labels, int n_folds,
                           double train_fraction, std::uint64_t seed) {
  require(ids.size() == labels.size(), "cv plan: ids and labels differ in length");
  require(n_folds >= 2, "cv plan: need at least two folds");
  require(train_fraction > 0.0 && train_fraction <= 1.0, "cv plan: train_fraction must lie in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [label, members] : by_class)
    if (members.size() < static_cast<std::size_t>(n_folds))
      throw Error("cv plan: class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                  " members, fewer than " + std::to_string(n_folds) + " folds");

  CVPlan plan;
  plan.n_folds = n_folds;
  plan.train_fraction = train_fraction;
  plan.seed = seed;
  plan.ids.assign(ids.begin(), ids.end());
  plan.fold_of.assign(ids.size(), -1);

  // Deal each shuffled class round-robin, continuing where the previous class stopped.
  Rng rng(derive_seed(seed, 0x43565f464f4c4453ULL));
  std::size_t cursor = 0;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members.begin(), members.end());
    for (std::size_t m : members) plan.fold_of[m] = static_cast<int>(cursor++ % static_cast<std::size_t>(n_folds));
  }

  plan.test.resize(static_cast<std::size_t>(n_folds));
  plan.train.resize(static_cast<std::size_t>(n_folds));
  plan.active.resize(static_cast<std::size_t>(n_folds));
  for (int f = 0; f < n_folds; ++f) {
    auto& test = plan.test[static_cast<std::size_t>(f)];
    auto& train = plan.train[static_cast<std::size_t>(f)];
    for (std::size_t i = 0; i < ids.size(); ++i) (plan.fold_of[i] == f ? test : train).push_back(i);
    // Independent of train_fraction, so smaller fractions are prefixes of larger ones.
    Rng sub_rng(derive_seed(seed, 0x5355425f00000000ULL + static_cast<std::uint64_t>(f)));
    const auto priority = stratified_priority(train, labels, sub_rng);
    auto& active = plan.active[static_cast<std::size_t>(f)];
    active.assign(priority.begin(), priority.begin() + static_cast<std::ptrdiff_t>(subsample_size(train_fraction, train.size())));
    std::sort(active.begin(), active.end());
  }
  return plan;
}

}  // namespace patchssl::eval
