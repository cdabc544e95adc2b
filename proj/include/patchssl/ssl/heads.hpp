#pragma once

#include "patchssl/nn.hpp"
#include "patchssl/vit.hpp"

namespace patchssl::ssl {

struct DinoHeadSpec {
  int hidden = 512;
  int bottleneck = 256;
  int prototypes = 1024;
};

/// MLP → L2-normalized bottleneck → prototypes with unit-norm rows.
template <typename T>
struct DinoHead {
  Mat<T> fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b;
  Mat<T> prototypes;  // K × bottleneck; rows normalized at use

  template <typename F>
  void visit(F&& f, const std::string& p) {
    f(p + "fc1_w", fc1_w);
    f(p + "fc1_b", fc1_b);
    f(p + "fc2_w", fc2_w);
    f(p + "fc2_b", fc2_b);
    f(p + "fc3_w", fc3_w);
    f(p + "fc3_b", fc3_b);
    f(p + "prototypes", prototypes);
  }
};

template <typename T>
DinoHead<T> init_dino_head(int in_dim, const DinoHeadSpec& s, Rng& rng) {
  auto w = [&](int r, int c) {
    Mat<T> m(r, c);
    nn::trunc_normal(m, rng, 0.02);
    return m;
  };
  return {w(s.hidden, in_dim), Mat<T>::Zero(1, s.hidden), w(s.hidden, s.hidden), Mat<T>::Zero(1, s.hidden),
          w(s.bottleneck, s.hidden), Mat<T>::Zero(1, s.bottleneck), w(s.prototypes, s.bottleneck)};
}

template <typename T>
struct DinoHeadCache {
  Mat<T> x, a1, h1, a2, h2, z, zn, vn;
  Vec<T> z_norm, v_norm;
};

template <typename T>
Vec<T> row_norms(const Mat<T>& m) {
  return m.rowwise().norm().cwiseMax(T(1e-12));
}

template <typename T>
Mat<T> dino_head_forward(const DinoHead<T>& h, const Mat<T>& x, DinoHeadCache<T>* cache) {
  DinoHeadCache<T> local;
  DinoHeadCache<T>& c = cache ? *cache : local;
  c.x = x;
  c.a1 = nn::linear(x, h.fc1_w, h.fc1_b);
  c.h1 = nn::gelu(c.a1);
  c.a2 = nn::linear(c.h1, h.fc2_w, h.fc2_b);
  c.h2 = nn::gelu(c.a2);
  c.z = nn::linear(c.h2, h.fc3_w, h.fc3_b);
  c.z_norm = row_norms(c.z);
  c.zn = c.z.array().colwise() / c.z_norm.array();
  c.v_norm = row_norms(h.prototypes);
  c.vn = h.prototypes.array().colwise() / c.v_norm.array();
  Mat<T> logits(x.rows(), h.prototypes.rows());
  logits.noalias() = c.zn * c.vn.transpose();
  return logits;
}

/// Returns dL/dx; `update_prototypes = false` freezes the last layer.
template <typename T>
Mat<T> dino_head_backward(const DinoHead<T>& h, const DinoHeadCache<T>& c, const Mat<T>& dlogits, DinoHead<T>& g,
                          bool update_prototypes = true) {
  if (update_prototypes) {
    const Mat<T> dvn = dlogits.transpose() * c.zn;
    const Vec<T> dots = (dvn.array() * c.vn.array()).rowwise().sum();
    g.prototypes += ((dvn - c.vn.cwiseProduct(dots.replicate(1, dvn.cols()))).array().colwise() / c.v_norm.array()).matrix();
  }
  const Mat<T> dzn = dlogits * c.vn;
  const Vec<T> zdots = (dzn.array() * c.zn.array()).rowwise().sum();
  const Mat<T> dz = (dzn - c.zn.cwiseProduct(zdots.replicate(1, dzn.cols()))).array().colwise() / c.z_norm.array();
  Mat<T> d = nn::linear_backward(c.h2, h.fc3_w, dz, g.fc3_w, g.fc3_b);
  d = nn::gelu_backward(c.a2, d);
  d = nn::linear_backward(c.h1, h.fc2_w, d, g.fc2_w, g.fc2_b);
  d = nn::gelu_backward(c.a1, d);
  return nn::linear_backward(c.x, h.fc1_w, d, g.fc1_w, g.fc1_b);
}

/// SimCLR projection: Linear → ReLU → Linear(out).
template <typename T>
struct ProjectionHead {
  Mat<T> fc1_w, fc1_b, fc2_w, fc2_b;

  template <typename F>
  void visit(F&& f, const std::string& p) {
    f(p + "fc1_w", fc1_w);
    f(p + "fc1_b", fc1_b);
    f(p + "fc2_w", fc2_w);
    f(p + "fc2_b", fc2_b);
  }
};

template <typename T>
ProjectionHead<T> init_projection_head(int in_dim, int out_dim, Rng& rng) {
  auto w = [&](int r, int c) {
    Mat<T> m(r, c);
    nn::trunc_normal(m, rng, 0.02);
    return m;
  };
  return {w(in_dim, in_dim), Mat<T>::Zero(1, in_dim), w(out_dim, in_dim), Mat<T>::Zero(1, out_dim)};
}

template <typename T>
struct ProjectionCache {
  Mat<T> x, a1, h1;
};

template <typename T>
Mat<T> projection_forward(const ProjectionHead<T>& h, const Mat<T>& x, ProjectionCache<T>* cache) {
  Mat<T> a1 = nn::linear(x, h.fc1_w, h.fc1_b);
  Mat<T> h1 = a1.cwiseMax(T(0));
  Mat<T> out = nn::linear(h1, h.fc2_w, h.fc2_b);
  if (cache) *cache = {x, std::move(a1), std::move(h1)};
  return out;
}

template <typename T>
Mat<T> projection_backward(const ProjectionHead<T>& h, const ProjectionCache<T>& c, const Mat<T>& dout,
                           ProjectionHead<T>& g) {
  Mat<T> d = nn::linear_backward(c.h1, h.fc2_w, dout, g.fc2_w, g.fc2_b);
  d = d.cwiseProduct((c.a1.array() > T(0)).template cast<T>().matrix());
  return nn::linear_backward(c.x, h.fc1_w, d, g.fc1_w, g.fc1_b);
}

/// Backbone plus head; the unit that is optimized, EMA-tracked and checkpointed.
template <typename T, template <typename> class Head>
struct SslModel {
  using Scalar = T;
  vit::VitParams<T> backbone;
  Head<T> head;

  template <typename F>
  void visit(F&& f) {
    backbone.visit(f);
    head.visit(f, "head.");
  }
};

}  // namespace patchssl::ssl
