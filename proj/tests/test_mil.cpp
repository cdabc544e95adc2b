#include "patchssl/mil.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace patchssl;
using namespace patchssl::mil;

namespace {

MatD randm(int r, int c, Rng& rng, double sd = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0, sd);
  return m;
}

MatD permute_rows(const MatD& m, const std::vector<int>& perm) {
  MatD out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

// Class-1 bags carry at least one instance shifted along a fixed direction.
std::vector<PatchBag<double>> toy_bags(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchBag<double>> bags;
  for (int b = 0; b < n; ++b) {
    const int m = 3 + static_cast<int>(rng.below(6));
    PatchBag<double> bag{randm(m, d, rng), b % 2, "bag" + std::to_string(b), {}};
    if (bag.label == 1) bag.embeddings.row(0).array() += 2.5;
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace

TEST(MilPool, SingletonWeightIsExactlyOne) {
  Rng rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    const auto p = init_mil<double>({6, 5, 4, 2}, rep);
    const auto r = attention_pool<double>(MatD(randm(1, 6, rng, 10.0)), p);
    EXPECT_EQ(r.weights(0), 1.0);
  }
}

TEST(MilPool, IdenticalInstancesShareWeight) {
  Rng rng(2);
  const auto p = init_mil<double>({6, 5, 4, 2}, 3);
  MatD h(2, 6);
  h.row(0) = h.row(1) = randm(1, 6, rng).row(0);
  const auto r = attention_pool<double>(h, p);
  EXPECT_DOUBLE_EQ(r.weights(0), 0.5);
  EXPECT_DOUBLE_EQ(r.weights(1), 0.5);
}

TEST(MilPool, PermutationInvariance) {
  Rng rng(3);
  const auto p = init_mil<double>({8, 6, 5, 3}, 4);
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 2 + static_cast<int>(rng.below(12));
    PatchBag<double> bag{randm(m, 8, rng), 0, "b", {}};
    const auto base = attention_pool(bag, p);
    const VecD probs = mil_forward(bag, p);
    EXPECT_NEAR(probs.sum(), 1.0, 1e-12);
    EXPECT_NEAR(base.weights.sum(), 1.0, 1e-12);
    EXPECT_GE(base.weights.minCoeff(), 0.0);
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    for (int k = 0; k < 5; ++k) {
      rng.shuffle(perm.begin(), perm.end());
      PatchBag<double> shuffled{permute_rows(bag.embeddings, perm), 0, "b", {}};
      const auto r = attention_pool(shuffled, p);
      EXPECT_LT((r.bag_embedding - base.bag_embedding).cwiseAbs().maxCoeff(), 1e-6);
      for (int i = 0; i < m; ++i) EXPECT_NEAR(r.weights(i), base.weights(perm[static_cast<std::size_t>(i)]), 1e-12);
      EXPECT_LT((mil_forward(shuffled, p) - probs).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(MilPool, BagValidation) {
  const auto p = init_mil<double>({4, 3, 2, 2}, 0);
  PatchBag<double> empty{MatD(0, 4), 0, "e", {}};
  try {
    mil_forward(empty, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty bag");
  }
  PatchBag<double> dup{MatD::Zero(2, 4), 0, "d", {"a", "a"}};
  EXPECT_THROW(mil_forward(dup, p), Error);
  PatchBag<double> nan{MatD::Constant(1, 4, std::nan("")), 0, "n", {}};
  EXPECT_THROW(mil_forward(nan, p), Error);
}

TEST(MilGrad, ThreeInstanceBagFiniteDifferences) {
  Rng rng(5);
  for (int label : {0, 1, 2}) {
    auto p = init_mil<double>({5, 4, 3, 3}, 7);
    testsupport::jitter(p, rng, 0.2);
    const MatD h = randm(3, 5, rng);
    auto g = nn::zeros_like(p);
    loss_and_grad<double>(h, label, p, &g);
    std::size_t checked = 0;
    const auto bad = testsupport::check_gradients(
        p, g, [&] { return loss_and_grad<double>(h, label, p, nullptr); }, 1e-4, 1e-6, 1, &checked);
    EXPECT_EQ(checked, static_cast<std::size_t>(nn::parameter_count(p)));
    EXPECT_TRUE(bad.empty()) << bad.size() << " mismatches; first " << (bad.empty() ? "" : bad[0].name);
  }
}

TEST(MilTrain, LossDropsAndEmbeddingsUntouched) {
  const auto bags = toy_bags(20, 6, 1);
  const auto before = bags;
  TrainConfig cfg;
  cfg.spec = {6, 16, 8, 2};
  cfg.lr = 2e-3;
  const auto r = train_mil<double>(bags, cfg);
  ASSERT_EQ(r.epochs.size(), 50u);
  EXPECT_LT(mean_loss<double>(bags, r.params), r.initial_loss);
  EXPECT_LT(r.epochs.back().mean_loss, r.epochs.front().mean_loss);
  for (std::size_t i = 0; i < bags.size(); ++i) EXPECT_EQ(bags[i].embeddings, before[i].embeddings);
}

TEST(MilTrain, DeterministicAndSeeded) {
  const auto bags = toy_bags(10, 4, 2);
  TrainConfig cfg;
  cfg.spec = {4, 8, 4, 2};
  cfg.epochs = 5;
  auto a = train_mil<double>(bags, cfg), b = train_mil<double>(bags, cfg);
  auto ca = nn::collect(a.params), cb = nn::collect(b.params);
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(*ca[i].second, *cb[i].second);
  cfg.seed = 1;
  auto c = train_mil<double>(bags, cfg);
  EXPECT_NE(c.params.cls_w, a.params.cls_w);
}

TEST(MilTrain, Errors) {
  auto bags = toy_bags(6, 4, 3);
  for (auto& b : bags) b.label = 1;
  TrainConfig cfg;
  cfg.spec = {4, 8, 4, 2};
  EXPECT_THROW(train_mil<double>(bags, cfg), Error);
  EXPECT_THROW(train_mil<double>(std::span<const PatchBag<double>>{}, cfg), Error);
  bags[0].label = 0;
  cfg.spec.input_dim = 5;
  EXPECT_THROW(train_mil<double>(bags, cfg), Error);
}

TEST(MilTrain, SaveLoadRoundTrip) {
  const auto dir = testsupport::scratch_dir("mil_ckpt");
  auto p = init_mil<float>({7, 6, 5, 2}, 9);
  save_mil(dir / "mil.bin", p);
  const auto q = load_mil(dir / "mil.bin");
  EXPECT_EQ(q.spec.projected_dim, 6);
  EXPECT_EQ(q.attn_u_w, p.attn_u_w);
  EXPECT_EQ(q.cls_b, p.cls_b);
}
