#pragma once

#include "patchssl/nn.hpp"

#include <cmath>
#include <vector>

namespace patchssl::ssl {

/// 2N embeddings; partner[i] is the index of the other view of i's source image.
template <typename T>
struct ContrastiveBatch {
  Mat<T> embeddings;
  std::vector<int> partner;
  T temperature = T(0.5);

  /// Rows ordered (a0, b0, a1, b1, ...).
  static ContrastiveBatch interleaved(Mat<T> z, T tau) {
    ContrastiveBatch b{std::move(z), {}, tau};
    for (Eigen::Index i = 0; i < b.embeddings.rows(); ++i) b.partner.push_back(static_cast<int>(i ^ 1));
    return b;
  }
};

template <typename T>
struct LossResult {
  T loss = T(0);
  Mat<T> grad;  // dL/d(input rows)
};

/// Normalized-temperature cross entropy, averaged over all 2N anchors. The
/// gradient is taken with respect to the raw (unnormalized) embeddings.
template <typename T>
LossResult<T> simclr_loss_with_grad(const ContrastiveBatch<T>& batch) {
  const Mat<T>& z = batch.embeddings;
  const Eigen::Index n = z.rows();
  if (!(batch.temperature > T(0))) throw Error("simclr_loss: temperature must be positive");
  require(n >= 4 && n % 2 == 0, "simclr_loss: need 2N >= 4 views");
  require(static_cast<Eigen::Index>(batch.partner.size()) == n, "simclr_loss: pairing map size mismatch");
  if (!z.allFinite()) throw Error("simclr_loss: non-finite embeddings");
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = batch.partner[static_cast<std::size_t>(i)];
    require(p >= 0 && p < n && p != i && batch.partner[static_cast<std::size_t>(p)] == i,
            "simclr_loss: each view needs exactly one positive partner");
  }

  const Vec<T> norms = z.rowwise().norm();
  Mat<T> u = z;
  for (Eigen::Index i = 0; i < n; ++i) u.row(i) /= std::max(norms(i), T(1e-12));
  const T inv_tau = T(1) / batch.temperature;
  Mat<T> logits = (u * u.transpose()) * inv_tau;

  LossResult<T> r;
  Mat<T> g = Mat<T>::Zero(n, n);  // dL/dlogits
  for (Eigen::Index i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, logits(i, k));
    T denom = 0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) denom += std::exp(logits(i, k) - mx);
    const Eigen::Index p = batch.partner[static_cast<std::size_t>(i)];
    r.loss += -(logits(i, p) - mx) + std::log(denom);
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) g(i, k) = std::exp(logits(i, k) - mx) / denom;
    g(i, p) -= T(1);
  }
  r.loss /= static_cast<T>(n);
  g /= static_cast<T>(n);

  const Mat<T> du = (g + g.transpose()) * u * inv_tau;
  r.grad.resize(n, z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const T nm = std::max(norms(i), T(1e-12));
    r.grad.row(i) = (du.row(i) - u.row(i) * u.row(i).dot(du.row(i))) / nm;
  }
  return r;
}

template <typename T>
T simclr_loss(const ContrastiveBatch<T>& batch) {
  return simclr_loss_with_grad(batch).loss;
}

struct DistillTemperatures {
  double student = 0.1;
  double teacher = 0.04;
};

template <typename T>
struct DistillLoss {
  T loss = T(0);
  Mat<T> d_student;  // dL/d(student logits)
  Mat<T> d_teacher;  // identically zero: the teacher target is detached
};

/// Cross entropy H(p_t, p_s) averaged over every (global teacher view g,
/// student view v ≠ g) pair. Student rows: global views first, then locals.
template <typename T>
DistillLoss<T> dino_loss_with_grad(const Mat<T>& student_logits, const Mat<T>& teacher_logits, const Vec<T>& center,
                                   DistillTemperatures temps) {
  const Eigen::Index k = student_logits.cols();
  if (teacher_logits.cols() != k || center.size() != k) throw Error("dino_loss: prototype dimension mismatch");
  require(teacher_logits.rows() >= 1 && student_logits.rows() > teacher_logits.rows(),
          "dino_loss: need teacher logits for the global views and student logits for all views");
  require(temps.student > 0 && temps.teacher > 0, "dino_loss: temperatures must be positive");

  const Eigen::Index n_teacher = teacher_logits.rows(), n_student = student_logits.rows();
  const T ts = static_cast<T>(temps.student), tt = static_cast<T>(temps.teacher);

  std::vector<Vec<T>> pt(static_cast<std::size_t>(n_teacher));
  for (Eigen::Index g = 0; g < n_teacher; ++g)
    pt[static_cast<std::size_t>(g)] = nn::softmax<T>((teacher_logits.row(g).transpose() - center) / tt);
  std::vector<Vec<T>> log_ps(static_cast<std::size_t>(n_student));
  for (Eigen::Index v = 0; v < n_student; ++v)
    log_ps[static_cast<std::size_t>(v)] = nn::log_softmax<T>(student_logits.row(v).transpose() / ts);

  DistillLoss<T> r;
  r.d_student = Mat<T>::Zero(n_student, k);
  r.d_teacher = Mat<T>::Zero(n_teacher, k);
  int terms = 0;
  for (Eigen::Index g = 0; g < n_teacher; ++g)
    for (Eigen::Index v = 0; v < n_student; ++v) {
      if (v == g) continue;
      const auto& p = pt[static_cast<std::size_t>(g)];
      const auto& lq = log_ps[static_cast<std::size_t>(v)];
      r.loss += -p.dot(lq);
      r.d_student.row(v) += ((lq.array().exp() - p.array()) / ts).matrix().transpose();
      ++terms;
    }
  r.loss /= static_cast<T>(terms);
  r.d_student /= static_cast<T>(terms);
  return r;
}

template <typename T>
T dino_loss(const Mat<T>& student_logits, const Mat<T>& teacher_logits, const Vec<T>& center,
            DistillTemperatures temps) {
  return dino_loss_with_grad(student_logits, teacher_logits, center, temps).loss;
}

/// θ_t ← m·θ_t + (1−m)·θ_s for every tensor.
template <typename Params>
void update_teacher(Params& teacher, const Params& student, double momentum) {
  require(momentum >= 0.0 && momentum <= 1.0, "teacher momentum must lie in [0,1]");
  auto t = nn::collect(teacher);
  auto s = nn::collect(const_cast<Params&>(student));
  if (t.size() != s.size()) throw Error("update_teacher: parameter shape mismatch");
  using Scalar = typename Params::Scalar;
  const Scalar m = static_cast<Scalar>(momentum), one_minus = static_cast<Scalar>(1.0 - momentum);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].second->rows() != s[i].second->rows() || t[i].second->cols() != s[i].second->cols())
      throw Error("update_teacher: parameter shape mismatch: " + t[i].first);
    if (momentum == 1.0) continue;
    if (momentum == 0.0) *t[i].second = *s[i].second;
    else *t[i].second = m * *t[i].second + one_minus * *s[i].second;
  }
}

/// Cosine schedule of the teacher momentum from m0 to 1.
inline double teacher_momentum(double m0, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return m0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return 1.0 - (1.0 - m0) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

/// center ← c_m·center + (1−c_m)·mean(teacher logits rows).
template <typename T>
void update_center(Vec<T>& center, const Mat<T>& teacher_logits, double center_momentum) {
  require(teacher_logits.rows() > 0 && teacher_logits.cols() == center.size(), "update_center: shape mismatch");
  const Vec<T> mean = teacher_logits.colwise().mean().transpose();
  center = static_cast<T>(center_momentum) * center + static_cast<T>(1.0 - center_momentum) * mean;
}

template <typename Params>
struct DistillState {
  Params student;
  Params teacher;
  Vec<typename Params::Scalar> center;
  double momentum = 0.99;
  double center_momentum = 0.9;
  DistillTemperatures temps;

  /// Temperatures are sane when the teacher is sharper than the student.
  [[nodiscard]] bool temperatures_recommended() const { return temps.teacher > 0 && temps.teacher < temps.student; }
};

}  // namespace patchssl::ssl
