#pragma once

#include "patchssl/eval/cv.hpp"
#include "patchssl/eval/embeddings.hpp"
#include "patchssl/eval/knn.hpp"
#include "patchssl/eval/metrics.hpp"

#include <json.hpp>

#include <cstdio>
#include <string>
#include <vector>

namespace patchssl::eval {

// `mil` marks bag-level reports; its folds carry classification metrics.
enum class Task { classify, regress, mil };

inline std::string to_string(Task t) { return t == Task::classify ? "classify" : t == Task::regress ? "regress" : "mil"; }

inline Task task_from_string(const std::string& s) {
  if (s == "classify") return Task::classify;
  if (s == "regress") return Task::regress;
  if (s == "mil") return Task::mil;
  throw Error("unknown probe task: " + s);
}

/// One train/evaluation split, as input row indices.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldResult {
  int fold = 0;
  double fraction = 1.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  // classification
  double auc_macro = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> auc_per_class;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  // regression
  double mse = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();
};

struct ProbeReport {
  Task task = Task::classify;
  std::string encoder;
  bool stain_norm = false;
  int k = kDefaultK;
  std::vector<FoldResult> folds;

  /// Headline metric: macro AUC for classification, MSE for regression.
  [[nodiscard]] MeanStd aggregate() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(task == Task::regress ? f.mse : f.auc_macro);
    return mean_std(v);
  }
};

inline FoldResult evaluate_split(const EmbeddingMatrix& m, const Split& split, Task task, int k, int fold,
                                 double fraction) {
  require(!split.train.empty() && !split.test.empty(), "probe: empty split");
  const EmbeddingMatrix tr = m.select(split.train);
  const EmbeddingMatrix te = m.select(split.test);
  require(task != Task::mil, "probe: bag-level tasks are evaluated by run_mil_cv");
  const int kk = std::min<int>(k, static_cast<int>(tr.size()));
  FoldResult r;
  r.fold = fold;
  r.fraction = fraction;
  r.n_train = tr.size();
  r.n_test = te.size();
  if (task == Task::classify) {
    require(m.class_labels.has_value(), "probe: classification needs class labels");
    const int n_classes = *std::max_element(m.class_labels->begin(), m.class_labels->end()) + 1;
    const MatD scores = knn_predict(tr.rows, *tr.class_labels, te.rows, kk, n_classes);
    const MacroAuc auc = macro_auc(scores, *te.class_labels);
    r.auc_macro = auc.macro;
    r.auc_per_class = auc.per_class;
    r.accuracy = accuracy(scores, *te.class_labels);
  } else {
    require(m.targets.has_value(), "probe: regression needs targets");
    const auto pred = knn_regress(tr.rows, *tr.targets, te.rows, kk);
    const auto rm = regression_metrics(pred, *te.targets);
    r.mse = rm.mse;
    r.tau = rm.kendall_tau;
  }
  return r;
}

/// Every fold of a CV plan, training on the plan's active subsample.
inline ProbeReport run_patch_probe(const EmbeddingMatrix& m, const CVPlan& plan, Task task, int k = kDefaultK) {
  m.validate();
  require(plan.ids.size() == m.size(), "probe: plan does not match the embedding matrix");
  ProbeReport rep{task, {}, false, k, {}};
  for (int f = 0; f < plan.n_folds; ++f)
    rep.folds.push_back(evaluate_split(m, {plan.active[static_cast<std::size_t>(f)], plan.test[static_cast<std::size_t>(f)]},
                                       task, k, f, plan.train_fraction));
  return rep;
}

/// A fixed train/validation split (e.g. a public split).
inline ProbeReport run_patch_probe(const EmbeddingMatrix& m, const Split& split, Task task, int k = kDefaultK) {
  m.validate();
  ProbeReport rep{task, {}, false, k, {}};
  rep.folds.push_back(evaluate_split(m, split, task, k, 0, 1.0));
  return rep;
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const ProbeReport& r) {
  nlohmann::json j{{"task", to_string(r.task)}, {"encoder", r.encoder}, {"stain_norm", r.stain_norm}, {"k", r.k}};
  j["folds"] = nlohmann::json::array();
  std::vector<double> mse, tau;
  for (const auto& f : r.folds) {
    nlohmann::json fj{{"fold", f.fold}, {"fraction", f.fraction}, {"n_train", f.n_train}, {"n_test", f.n_test}};
    if (r.task != Task::regress) {
      fj["auc_macro"] = finite_or_null(f.auc_macro);
      fj["auc_per_class"] = nlohmann::json::array();
      for (double a : f.auc_per_class) fj["auc_per_class"].push_back(finite_or_null(a));
      fj["accuracy"] = finite_or_null(f.accuracy);
    } else {
      fj["mse"] = finite_or_null(f.mse);
      fj["tau"] = finite_or_null(f.tau);
      mse.push_back(f.mse);
      tau.push_back(f.tau);
    }
    j["folds"].push_back(fj);
  }
  const MeanStd agg = r.aggregate();
  j["aggregate"] = {{"metric", r.task == Task::regress ? "mse" : "auc_macro"},
                    {"mean", finite_or_null(agg.mean)},
                    {"std", finite_or_null(agg.std)}};
  if (r.task == Task::regress) {
    const MeanStd t = mean_std(tau);
    j["aggregate"]["tau_mean"] = finite_or_null(t.mean);
    j["aggregate"]["tau_std"] = finite_or_null(t.std);
  }
  return j;
}

inline const char* kReportCsvHeader = "encoder,task,stain_norm,fold,fraction,auc_macro,accuracy,mse,tau\n";

inline std::string csv_rows(const ProbeReport& r) {
  std::string out;
  char buf[256];
  auto num = [](double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); };
  for (const auto& f : r.folds) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%d,%.4g,%.9g,%.9g,%.9g,%.9g\n", r.encoder.c_str(),
                  to_string(r.task).c_str(), r.stain_norm ? "on" : "off", f.fold, f.fraction, num(f.auc_macro),
                  num(f.accuracy), num(f.mse), num(f.tau));
    out += buf;
  }
  return out;
}

inline std::string to_csv(const ProbeReport& r) { return std::string(kReportCsvHeader) + csv_rows(r); }

}  // namespace patchssl::eval
