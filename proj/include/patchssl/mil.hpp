#pragma once

#include "patchssl/checkpoint.hpp"
#include "patchssl/nn.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

// Weakly supervised bag classification over frozen patch embeddings:
// a Linear+ReLU pre-projection, gated attention pooling (tanh ⊙ sigmoid
// scoring, softmax over instances) and a linear bag classifier.
namespace patchssl::mil {

template <typename T>
struct PatchBag {
  Mat<T> embeddings;  // M × d
  int label = 0;
  std::string bag_id;
  std::vector<std::string> instance_ids;

  void validate() const {
    if (embeddings.rows() == 0) throw Error("empty bag");
    require(embeddings.allFinite(), "bag " + bag_id + " has non-finite embeddings");
    if (!instance_ids.empty()) {
      require(static_cast<Eigen::Index>(instance_ids.size()) == embeddings.rows(),
              "bag " + bag_id + ": instance id count mismatch");
      std::set<std::string> uniq(instance_ids.begin(), instance_ids.end());
      require(uniq.size() == instance_ids.size(), "bag " + bag_id + ": duplicate instance ids");
    }
  }
};

struct MilSpec {
  int input_dim = 192;
  int projected_dim = 256;  // d'
  int attention_dim = 128;  // L
  int classes = 2;
};

template <typename T>
struct MilParams {
  using Scalar = T;
  MilSpec spec;
  Mat<T> pre_w, pre_b;        // d' × d
  Mat<T> attn_v_w, attn_v_b;  // L × d'  (tanh branch)
  Mat<T> attn_u_w, attn_u_b;  // L × d'  (sigmoid gate)
  Mat<T> attn_w_w, attn_w_b;  // 1 × L
  Mat<T> cls_w, cls_b;        // classes × d'

  template <typename F>
  void visit(F&& f) {
    f("pre_w", pre_w);
    f("pre_b", pre_b);
    f("attn_v_w", attn_v_w);
    f("attn_v_b", attn_v_b);
    f("attn_u_w", attn_u_w);
    f("attn_u_b", attn_u_b);
    f("attn_w_w", attn_w_w);
    f("attn_w_b", attn_w_b);
    f("cls_w", cls_w);
    f("cls_b", cls_b);
  }
};

/// Xavier-uniform weights, zero biases.
template <typename T>
MilParams<T> init_mil(const MilSpec& s, std::uint64_t seed) {
  require(s.input_dim > 0 && s.projected_dim > 0 && s.attention_dim > 0 && s.classes >= 2, "invalid MIL spec");
  Rng rng(derive_seed(seed, 0x4d494c5f494e4954ULL));
  auto w = [&](int r, int c) {
    const double a = std::sqrt(6.0 / (r + c));
    Mat<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-a, a));
    return m;
  };
  auto z = [](int c) { return Mat<T>::Zero(1, c).eval(); };
  return {s,
          w(s.projected_dim, s.input_dim), z(s.projected_dim),
          w(s.attention_dim, s.projected_dim), z(s.attention_dim),
          w(s.attention_dim, s.projected_dim), z(s.attention_dim),
          w(1, s.attention_dim), z(1),
          w(s.classes, s.projected_dim), z(s.classes)};
}

template <typename T>
struct PoolCache {
  Mat<T> pre;    // M × d' before ReLU
  Mat<T> hp;     // M × d' after ReLU
  Mat<T> tanh_;  // M × L
  Mat<T> gate;   // M × L
  Vec<T> weights;
  Vec<T> pooled;
};

template <typename T>
struct PoolResult {
  Vec<T> bag_embedding;  // d'
  Vec<T> weights;        // M, sums to 1
};

template <typename T>
PoolResult<T> attention_pool(const Mat<T>& h, const MilParams<T>& p, PoolCache<T>* cache = nullptr) {
  if (h.rows() == 0) throw Error("empty bag");
  Mat<T> pre = nn::linear(h, p.pre_w, p.pre_b);
  Mat<T> hp = pre.cwiseMax(T(0));
  Mat<T> t = nn::linear(hp, p.attn_v_w, p.attn_v_b).array().tanh();
  Mat<T> g = nn::linear(hp, p.attn_u_w, p.attn_u_b).unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  const Mat<T> gated = t.cwiseProduct(g);
  const Vec<T> scores = (gated * p.attn_w_w.row(0).transpose()).array() + p.attn_w_b(0, 0);
  PoolResult<T> r;
  r.weights = nn::softmax<T>(scores);
  r.bag_embedding = hp.transpose() * r.weights;
  if (cache) *cache = {std::move(pre), std::move(hp), std::move(t), std::move(g), r.weights, r.bag_embedding};
  return r;
}

template <typename T>
PoolResult<T> attention_pool(const PatchBag<T>& bag, const MilParams<T>& p) {
  bag.validate();
  return attention_pool(bag.embeddings, p);
}

template <typename T>
Vec<T> classify_pooled(const Vec<T>& pooled, const MilParams<T>& p) {
  return nn::softmax<T>(p.cls_w * pooled + p.cls_b.row(0).transpose());
}

/// Class probabilities for one bag.
template <typename T>
Vec<T> mil_forward(const PatchBag<T>& bag, const MilParams<T>& p) {
  bag.validate();
  return classify_pooled(attention_pool(bag.embeddings, p).bag_embedding, p);
}

/// Bag cross-entropy and its gradient with respect to ρ and ζ parameters.
template <typename T>
T loss_and_grad(const Mat<T>& h, int label, const MilParams<T>& p, MilParams<T>* grad) {
  PoolCache<T> c;
  attention_pool(h, p, &c);
  const Vec<T> logits = p.cls_w * c.pooled + p.cls_b.row(0).transpose();
  const Vec<T> logp = nn::log_softmax<T>(logits);
  const T loss = -logp(label);
  if (!grad) return loss;

  auto& g = *grad;
  Vec<T> dlogits = logp.array().exp();
  dlogits(label) -= T(1);
  g.cls_w.noalias() += dlogits * c.pooled.transpose();
  g.cls_b.row(0) += dlogits.transpose();
  const Vec<T> dpooled = p.cls_w.transpose() * dlogits;

  // pooled = hpᵀ a
  Mat<T> dhp = c.weights * dpooled.transpose();
  const Vec<T> da = c.hp * dpooled;
  const Vec<T> ds = c.weights.cwiseProduct((da.array() - c.weights.dot(da)).matrix());

  const Mat<T> gated = c.tanh_.cwiseProduct(c.gate);
  g.attn_w_w.row(0) += (gated.transpose() * ds).transpose();
  g.attn_w_b(0, 0) += ds.sum();
  const Mat<T> dgated = ds * p.attn_w_w;  // M × L
  const Mat<T> dt_pre = dgated.cwiseProduct(c.gate).cwiseProduct((T(1) - c.tanh_.array().square()).matrix());
  const Mat<T> dg_pre = dgated.cwiseProduct(c.tanh_).cwiseProduct(c.gate.cwiseProduct((T(1) - c.gate.array()).matrix()));
  dhp += nn::linear_backward(c.hp, p.attn_v_w, dt_pre, g.attn_v_w, g.attn_v_b);
  dhp += nn::linear_backward(c.hp, p.attn_u_w, dg_pre, g.attn_u_w, g.attn_u_b);

  const Mat<T> dpre = dhp.cwiseProduct((c.pre.array() > T(0)).template cast<T>().matrix());
  g.pre_w.noalias() += dpre.transpose() * h;
  g.pre_b.row(0) += dpre.colwise().sum();
  return loss;
}

struct TrainConfig {
  int epochs = 50;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  MilSpec spec;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
};

template <typename T>
struct TrainResult {
  MilParams<T> params;
  double initial_loss = 0.0;
  std::vector<EpochMetrics> epochs;
};

template <typename T>
double mean_loss(std::span<const PatchBag<T>> bags, const MilParams<T>& p) {
  double s = 0.0;
  for (const auto& b : bags) s += static_cast<double>(loss_and_grad<T>(b.embeddings, b.label, p, nullptr));
  return s / static_cast<double>(bags.size());
}

/// Trains only the pooling and classifier parameters with one bag per step.
/// Embeddings are read through const references and never modified.
template <typename T>
TrainResult<T> train_mil(std::span<const PatchBag<T>> bags, const TrainConfig& cfg) {
  require(!bags.empty(), "train_mil: no bags");
  std::set<int> classes;
  for (const auto& b : bags) {
    b.validate();
    require(b.label >= 0 && b.label < cfg.spec.classes, "train_mil: bag label out of range: " + b.bag_id);
    require(b.embeddings.cols() == cfg.spec.input_dim, "train_mil: embedding dimension mismatch");
    classes.insert(b.label);
  }
  if (classes.size() < 2) throw Error("train_mil: training set contains a single class");

  TrainResult<T> r{init_mil<T>(cfg.spec, cfg.seed), 0.0, {}};
  r.initial_loss = mean_loss(bags, r.params);
  nn::AdamW<MilParams<T>> opt(r.params, {0.9, 0.999, 1e-8, cfg.weight_decay});
  MilParams<T> grad = nn::zeros_like(r.params);
  std::vector<std::size_t> order(bags.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t i : order) {
      grad.visit([](const std::string&, Mat<T>& m) { m.setZero(); });
      total += static_cast<double>(loss_and_grad<T>(bags[i].embeddings, bags[i].label, r.params, &grad));
      opt.step(r.params, grad, cfg.lr);
    }
    r.epochs.push_back({epoch, total / static_cast<double>(bags.size())});
  }
  return r;
}

template <typename T>
void save_mil(const std::filesystem::path& path, MilParams<T>& p) {
  checkpoint::save_tensors(path, p);
  checkpoint::write_json(checkpoint::sidecar_path(path),
                         {{"format", "patchssl-tensors-v1"},
                          {"model", "gated_attention_mil"},
                          {"input_dim", p.spec.input_dim},
                          {"projected_dim", p.spec.projected_dim},
                          {"attention_dim", p.spec.attention_dim},
                          {"classes", p.spec.classes}});
}

inline MilParams<float> load_mil(const std::filesystem::path& path) {
  const auto side = checkpoint::read_json(checkpoint::sidecar_path(path));
  MilSpec s{side.at("input_dim").get<int>(), side.at("projected_dim").get<int>(), side.at("attention_dim").get<int>(),
            side.at("classes").get<int>()};
  auto p = init_mil<float>(s, 0);
  checkpoint::load_tensors(path, p);
  return p;
}

}  // namespace patchssl::mil
