#pragma once

#include "patchssl/eval/probe.hpp"
#include "patchssl/mil.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

// Bag manifests and cross-validated bag classification over frozen embeddings.
//   {"bags": [{"bag_id": str, "label": int, "rows": [[start, end), ...]}]}
// Row ranges index the embedding file the manifest is paired with.
namespace patchssl::eval {

using RowRanges = std::vector<std::pair<std::size_t, std::size_t>>;

/// Collapses sorted-or-not row indices into half-open runs, preserving order.
inline RowRanges to_ranges(std::span<const std::size_t> rows) {
  RowRanges out;
  for (std::size_t r : rows) {
    if (!out.empty() && out.back().second == r) ++out.back().second;
    else out.emplace_back(r, r + 1);
  }
  return out;
}

struct BagEntry {
  std::string bag_id;
  int label = 0;
  RowRanges rows;
};

inline nlohmann::json bag_manifest_json(const std::vector<BagEntry>& bags) {
  nlohmann::json j{{"bags", nlohmann::json::array()}};
  for (const auto& b : bags) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [s, e] : b.rows) rows.push_back({s, e});
    j["bags"].push_back({{"bag_id", b.bag_id}, {"label", b.label}, {"rows", rows}});
  }
  return j;
}

inline std::vector<BagEntry> parse_bag_manifest(const nlohmann::json& j) {
  std::vector<BagEntry> out;
  try {
    for (const auto& b : j.at("bags")) {
      BagEntry e{b.at("bag_id").get<std::string>(), b.at("label").get<int>(), {}};
      for (const auto& r : b.at("rows")) e.rows.emplace_back(r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>());
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed bag manifest: ") + e.what());
  }
  return out;
}

/// Gathers each bag's rows out of the embedding matrix (in double precision).
inline std::vector<mil::PatchBag<double>> assemble_bags(const EmbeddingMatrix& m, const std::vector<BagEntry>& entries) {
  std::vector<mil::PatchBag<double>> bags;
  for (const auto& e : entries) {
    mil::PatchBag<double> b;
    b.bag_id = e.bag_id;
    b.label = e.label;
    std::vector<std::size_t> idx;
    for (const auto& [s, t] : e.rows) {
      if (s >= t || t > m.size()) throw Error("bag " + e.bag_id + ": row range outside the embedding matrix");
      for (std::size_t r = s; r < t; ++r) idx.push_back(r);
    }
    b.embeddings.resize(static_cast<Eigen::Index>(idx.size()), m.rows.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      b.embeddings.row(static_cast<Eigen::Index>(i)) = m.rows.row(static_cast<Eigen::Index>(idx[i])).cast<double>();
      b.instance_ids.push_back(m.ids[idx[i]]);
    }
    b.validate();
    bags.push_back(std::move(b));
  }
  return bags;
}

struct MilCvConfig {
  int folds = 5;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  mil::TrainConfig train;
};

/// Positive-class-vs-rest probabilities of every bag under trained params.
inline MatD score_bags(std::span<const mil::PatchBag<double>> bags, const mil::MilParams<double>& p) {
  MatD out(static_cast<Eigen::Index>(bags.size()), p.spec.classes);
  for (std::size_t i = 0; i < bags.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = mil::mil_forward(bags[i], p).transpose();
  return out;
}

/// Stratified k-fold CV over bags: train on each fold's active subsample,
/// report test macro AUC and accuracy.
inline ProbeReport run_mil_cv(std::span<const mil::PatchBag<double>> bags, const MilCvConfig& cfg) {
  require(!bags.empty(), "mil cv: no bags");
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& b : bags) {
    ids.push_back(b.bag_id);
    labels.push_back(b.label);
  }
  const CVPlan plan = make_cv_plan(ids, labels, cfg.folds, cfg.fraction, cfg.seed);
  ProbeReport rep{Task::mil, {}, false, 0, {}};
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<mil::PatchBag<double>> train, test;
    for (auto i : plan.active[static_cast<std::size_t>(f)]) train.push_back(bags[i]);
    for (auto i : plan.test[static_cast<std::size_t>(f)]) test.push_back(bags[i]);
    mil::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, static_cast<std::uint64_t>(f));
    const auto trained = mil::train_mil<double>(train, tc);
    std::vector<int> y;
    for (const auto& b : test) y.push_back(b.label);
    const MatD scores = score_bags(test, trained.params);
    FoldResult r;
    r.fold = f;
    r.fraction = cfg.fraction;
    r.n_train = train.size();
    r.n_test = test.size();
    const MacroAuc auc = macro_auc(scores, y);
    r.auc_macro = auc.macro;
    r.auc_per_class = auc.per_class;
    r.accuracy = accuracy(scores, y);
    rep.folds.push_back(std::move(r));
  }
  return rep;
}

}  // namespace patchssl::eval
