#include "patchssl/ssl/losses.hpp"

#include "support.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace patchssl;
using namespace patchssl::ssl;

namespace {

MatD randm(int r, int c, Rng& rng, double sd = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0, sd);
  return m;
}

// Wraps a plain matrix so the generic gradient checker can drive it.
struct Holder {
  using Scalar = double;
  MatD m;
  template <typename F>
  void visit(F&& f) {
    f("m", m);
  }
};

}  // namespace

TEST(SimclrLoss, UniformSimilaritiesGiveLog3) {
  for (double tau : {0.1, 0.5, 2.0}) {
    MatD z(4, 3);
    z.rowwise() = Eigen::RowVectorXd::Constant(3, 0.7);
    const auto b = ContrastiveBatch<double>::interleaved(z, tau);
    EXPECT_NEAR(simclr_loss(b), std::log(3.0), 1e-9);
  }
}

TEST(SimclrLoss, OrthogonalPairsClosedForm) {
  MatD z = MatD::Zero(4, 2);
  z(0, 0) = z(1, 0) = 1.0;
  z(2, 1) = z(3, 1) = 2.5;  // norm does not matter
  const auto b = ContrastiveBatch<double>::interleaved(z, 1.0);
  const double expect = std::log(std::exp(1.0) + 2.0) - 1.0;
  EXPECT_NEAR(simclr_loss(b), expect, 1e-12);
  EXPECT_NEAR(oracle::ntxent(z, b.partner, 1.0), expect, 1e-12);
}

TEST(SimclrLoss, MatchesExplicitLoops) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 2 * (2 + rep % 4);
    const double tau = 0.1 + rng.uniform() * 0.9;
    const MatD z = randm(n, 5, rng);
    const auto b = ContrastiveBatch<double>::interleaved(z, tau);
    EXPECT_NEAR(simclr_loss(b), oracle::ntxent(z, b.partner, tau), 1e-6);
  }
  // A non-interleaved pairing.
  const MatD z = randm(6, 4, rng);
  ContrastiveBatch<double> b{z, {3, 4, 5, 0, 1, 2}, 0.5};
  EXPECT_NEAR(simclr_loss(b), oracle::ntxent(z, b.partner, 0.5), 1e-9);
}

TEST(SimclrLoss, RotationInvariant) {
  Rng rng(2);
  const MatD z = randm(6, 4, rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(randm(4, 4, rng)));
  const MatD q = Eigen::MatrixXd(qr.householderQ());
  const double a = simclr_loss(ContrastiveBatch<double>::interleaved(z, 0.5));
  const double b = simclr_loss(ContrastiveBatch<double>::interleaved(MatD(z * q), 0.5));
  EXPECT_NEAR(a, b, 1e-6);
}

TEST(SimclrLoss, DecreasesAsPositiveMovesCloser) {
  // Views 0 and 1 live in the plane (e0, e1); the others are orthogonal to it,
  // so rotating view 1 toward view 0 changes only their mutual similarity.
  Rng rng(3);
  MatD z = MatD::Zero(6, 6);
  z.bottomRightCorner(4, 4) = randm(4, 4, rng);
  z(0, 0) = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double theta = std::numbers::pi * (1.0 - step / 10.0);
    z(1, 0) = std::cos(theta);
    z(1, 1) = std::sin(theta);
    const double cur = simclr_loss(ContrastiveBatch<double>::interleaved(z, 0.5));
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(SimclrLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Holder h{randm(6, 5, rng)};
  const auto r = simclr_loss_with_grad(ContrastiveBatch<double>::interleaved(h.m, 0.3));
  Holder g{r.grad};
  const auto bad = testsupport::check_gradients(h, g, [&] {
    return simclr_loss(ContrastiveBatch<double>::interleaved(h.m, 0.3));
  });
  EXPECT_TRUE(bad.empty()) << bad.size() << " mismatches";
}

TEST(SimclrLoss, Errors) {
  Rng rng(5);
  const MatD z = randm(4, 3, rng);
  EXPECT_THROW(simclr_loss(ContrastiveBatch<double>::interleaved(z, 0.0)), Error);
  EXPECT_THROW(simclr_loss(ContrastiveBatch<double>::interleaved(z, -1.0)), Error);
  MatD bad = z;
  bad(1, 1) = std::nan("");
  EXPECT_THROW(simclr_loss(ContrastiveBatch<double>::interleaved(bad, 0.5)), Error);
  EXPECT_THROW(simclr_loss(ContrastiveBatch<double>::interleaved(MatD(randm(2, 3, rng)), 0.5)), Error);
  EXPECT_THROW(simclr_loss(ContrastiveBatch<double>{z, {1, 0, 1, 2}, 0.5}), Error);
}

TEST(DinoLoss, UniformGivesLogK) {
  const MatD s = MatD::Constant(10, 4, 0.3), t = MatD::Constant(2, 4, -1.2);
  EXPECT_NEAR(dino_loss<double>(s, t, VecD::Zero(4), {}), std::log(4.0), 1e-9);
}

TEST(DinoLoss, OneHotTeacherGivesMinusLogStudentMass) {
  // Teacher at temperature → 0 is one-hot; student probability 1−ε on j.
  const double eps = 0.05, ts = 1.0;
  const int k = 4, j = 2;
  MatD s(2, k), t = MatD::Zero(1, k);
  for (int c = 0; c < k; ++c) s(1, c) = std::log(eps / (k - 1));
  s(1, j) = std::log(1 - eps);
  s.row(0) = s.row(1);
  t(0, j) = 1.0;
  const double loss = dino_loss<double>(s, t, VecD::Zero(k), {ts, 1e-4});
  EXPECT_NEAR(loss, -std::log(1 - eps), 1e-9);
}

TEST(DinoLoss, MatchesExplicitSoftmax) {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const MatD s = randm(10, 5, rng), t = randm(2, 5, rng);
    const VecD c = randm(5, 1, rng, 0.3);
    EXPECT_NEAR(dino_loss<double>(s, t, c, {0.1, 0.04}), oracle::dino(s, t, c, 0.1, 0.04), 1e-6);
  }
}

TEST(DinoLoss, StudentGradientAndDetachedTeacher) {
  Rng rng(7);
  Holder s{randm(10, 6, rng, 0.3)};
  const MatD t = randm(2, 6, rng, 0.3);
  const VecD c = randm(6, 1, rng, 0.1);
  const auto r = dino_loss_with_grad<double>(s.m, t, c, {0.1, 0.04});
  EXPECT_EQ(r.d_teacher.rows(), 2);
  EXPECT_TRUE((r.d_teacher.array() == 0.0).all());
  Holder g{r.d_student};
  const auto bad = testsupport::check_gradients(s, g, [&] { return dino_loss<double>(s.m, t, c, {0.1, 0.04}); });
  EXPECT_TRUE(bad.empty()) << bad.size() << " mismatches";
}

TEST(DinoLoss, DescentConvergesToTeacherDistribution) {
  // Three prototypes; the student row is driven to the teacher's distribution.
  const DistillTemperatures temps{0.1, 0.04};
  MatD t(1, 3);
  t << 0.02, -0.01, 0.0;
  const VecD center = VecD::Zero(3);
  const VecD pt = nn::softmax<double>(t.row(0).transpose() / temps.teacher);
  MatD s = MatD::Zero(2, 3);
  for (int it = 0; it < 20000; ++it) s -= 0.01 * dino_loss_with_grad<double>(s, t, center, temps).d_student;
  const VecD ps = nn::softmax<double>(s.row(1).transpose() / temps.student);
  EXPECT_LT(0.5 * (ps - pt).cwiseAbs().sum(), 1e-3);
}

TEST(DinoLoss, MismatchedPrototypesThrow) {
  EXPECT_THROW(dino_loss<double>(MatD::Zero(10, 4), MatD::Zero(2, 5), VecD::Zero(4), {}), Error);
  EXPECT_THROW(dino_loss<double>(MatD::Zero(10, 4), MatD::Zero(2, 4), VecD::Zero(3), {}), Error);
}

namespace {

struct Two {
  using Scalar = double;
  MatD a, b;
  template <typename F>
  void visit(F&& f) {
    f("a", a);
    f("b", b);
  }
};

}  // namespace

TEST(Teacher, ConvexCombination) {
  Rng rng(8);
  const Two student{randm(3, 4, rng), randm(1, 5, rng)};
  const Two start{randm(3, 4, rng), randm(1, 5, rng)};
  Two t = start;
  update_teacher(t, student, 1.0);
  EXPECT_EQ(t.a, start.a);
  update_teacher(t, student, 0.0);
  EXPECT_EQ(t.a, student.a);
  EXPECT_EQ(t.b, student.b);
  Two z{MatD::Zero(1, 1), MatD::Zero(1, 1)}, o{MatD::Ones(1, 1), MatD::Ones(1, 1)};
  update_teacher(z, o, 0.5);
  EXPECT_EQ(z.a(0, 0), 0.5);
}

TEST(Teacher, GapStrictlyShrinks) {
  Rng rng(9);
  const Two student{randm(3, 4, rng), randm(1, 5, rng)};
  Two t{randm(3, 4, rng), randm(1, 5, rng)};
  auto gap = [&] {
    return std::max((t.a - student.a).cwiseAbs().maxCoeff(), (t.b - student.b).cwiseAbs().maxCoeff());
  };
  double prev = gap();
  for (double m : {0.996, 0.9, 0.5}) {
    update_teacher(t, student, m);
    EXPECT_LT(gap(), prev);
    prev = gap();
  }
}

TEST(Teacher, ShapeMismatchAndRange) {
  Two a{MatD::Zero(2, 2), MatD::Zero(1, 1)}, b{MatD::Zero(2, 3), MatD::Zero(1, 1)};
  EXPECT_THROW(update_teacher(a, b, 0.5), Error);
  EXPECT_THROW(update_teacher(a, a, 1.5), Error);
}

TEST(Teacher, MomentumScheduleRunsFromM0ToOne) {
  EXPECT_DOUBLE_EQ(teacher_momentum(0.996, 0, 100), 0.996);
  EXPECT_DOUBLE_EQ(teacher_momentum(0.996, 99, 100), 1.0);
  double prev = 0;
  for (std::size_t s = 0; s < 100; ++s) {
    const double m = teacher_momentum(0.996, s, 100);
    EXPECT_GE(m, prev);
    prev = m;
  }
}

TEST(Center, Examples) {
  VecD c = VecD::Constant(3, 2.0);
  update_center<double>(c, MatD::Ones(4, 3), 1.0);
  EXPECT_EQ(c, VecD::Constant(3, 2.0));
  MatD same(5, 3);
  same.rowwise() = Eigen::RowVector3d(1.0, -2.0, 3.0);
  update_center<double>(c, same, 0.0);
  EXPECT_EQ(c, same.row(0).transpose());
  VecD z = VecD::Zero(1);
  update_center<double>(z, MatD::Constant(4, 1, 10.0), 0.9);
  EXPECT_NEAR(z(0), 1.0, 1e-12);
}

TEST(Center, TemperatureAdvisory) {
  DistillState<Two> s;
  EXPECT_TRUE(s.temperatures_recommended());
  s.temps = {0.04, 0.1};
  EXPECT_FALSE(s.temperatures_recommended());
}
