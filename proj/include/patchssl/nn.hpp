#pragma once

#include "patchssl/core.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace patchssl::nn {

// Every trainable tensor is a row-major Mat<T>; vectors are stored as 1×n rows.
// Parameter structs expose `visit(f)` calling f(name, Mat<T>&) in a fixed order,
// which drives initialization, optimizers, EMA updates and checkpoints.

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Mat<T>*>>;

template <typename Params>
auto collect(Params& p) {
  using T = typename Params::Scalar;
  NamedTensors<T> out;
  p.visit([&](const std::string& name, Mat<T>& m) { out.emplace_back(name, &m); });
  return out;
}

template <typename Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.visit([](const std::string&, auto& m) { m.setZero(); });
  return z;
}

template <typename Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  const_cast<Params&>(p).visit([&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

/// Casts every tensor to another scalar type (float training ↔ double checks).
template <typename To, typename Params, typename Out>
void cast_into(const Params& from, Out& to) {
  auto src = collect(const_cast<Params&>(from));
  auto dst = collect(to);
  require(src.size() == dst.size(), "cast: parameter layout mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<To>();
}

template <typename T>
void trunc_normal(Mat<T>& m, Rng& rng, double sd) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do {
      v = rng.normal();
    } while (std::abs(v) > 2.0);
    m.data()[i] = static_cast<T>(v * sd);
  }
}

// ---------------------------------------------------------------------------
// Layers. Forward functions return outputs; backward functions accumulate into
// parameter gradients and return the input gradient.

/// Y = X Wᵀ + b, with W: out×in, b: 1×out.
template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y(x.rows(), w.rows());
  y.noalias() = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += dy.transpose() * x;
  db.row(0) += dy.colwise().sum();
  Mat<T> dx(dy.rows(), w.cols());
  dx.noalias() = dy * w;
  return dx;
}

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Vec<T> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, LayerNormCache<T>* cache,
                  T eps = T(1e-6)) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat<T> xhat(n, d);
  Vec<T> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const auto centered = x.row(i).array() - mu;
    const T var = centered.square().mean();
    rstd(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * rstd(i);
  }
  Mat<T> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& c, const Mat<T>& gain, const Mat<T>& dy, Mat<T>& dgain,
                           Mat<T>& dbias) {
  dgain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2) * c.rstd(i);
  }
  return dx;
}

/// Exact GELU, x·Φ(x).
template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); });
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return dy.binaryExpr(x, [](T g, T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    return g * (cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v));
  });
}

template <typename T>
void softmax_rows_inplace(Mat<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

template <typename T>
Vec<T> softmax(const Vec<T>& v) {
  const T mx = v.maxCoeff();
  Vec<T> e = (v.array() - mx).exp();
  return e / e.sum();
}

template <typename T>
Vec<T> log_softmax(const Vec<T>& v) {
  const T mx = v.maxCoeff();
  const T lse = mx + std::log((v.array() - mx).exp().sum());
  return v.array() - lse;
}

/// Backward of row-wise softmax given its output p.
template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& p, const Mat<T>& dp) {
  Mat<T> ds = p.cwiseProduct(dp);
  const Vec<T> dot = ds.rowwise().sum();
  ds -= p.cwiseProduct(dot.replicate(1, p.cols()));
  return ds;
}

// ---------------------------------------------------------------------------
// Optimization

/// Linear warmup then cosine decay from base to final.
inline double cosine_schedule(double base, double final_value, std::size_t step, std::size_t total_steps,
                              std::size_t warmup_steps = 0) {
  if (total_steps == 0) return base;
  if (step < warmup_steps) return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return final_value + 0.5 * (base - final_value) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Decoupled-weight-decay Adam. Decay applies to tensors whose name ends in "_w".
template <typename Params>
class AdamW {
 public:
  using T = typename Params::Scalar;

  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.04;
  };

  AdamW(const Params& shape, Options opt) : opt_(opt), m_(zeros_like(shape)), v_(zeros_like(shape)) {}

  void step(Params& params, const Params& grads, double lr) {
    ++t_;
    auto p = collect(params);
    auto g = collect(const_cast<Params&>(grads));
    auto m = collect(m_);
    auto v = collect(v_);
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(opt_.beta2, static_cast<double>(t_)));
    const T step_lr = static_cast<T>(lr), eps = static_cast<T>(opt_.eps);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& w = *p[i].second;
      const auto& gr = *g[i].second;
      auto& mi = *m[i].second;
      auto& vi = *v[i].second;
      const std::string& name = p[i].first;
      if (name.size() > 2 && name.compare(name.size() - 2, 2, "_w") == 0 && opt_.weight_decay > 0.0)
        w *= static_cast<T>(1.0 - lr * opt_.weight_decay);
      mi = b1 * mi + (T(1) - b1) * gr;
      vi = b2 * vi + (T(1) - b2) * gr.cwiseAbs2();
      w.array() -= step_lr * (mi.array() / c1) / ((vi.array() / c2).sqrt() + eps);
    }
  }

  [[nodiscard]] std::size_t steps() const { return t_; }

 private:
  Options opt_;
  Params m_;
  Params v_;
  std::size_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename Params>
double clip_grad_norm(Params& grads, double max_norm) {
  double sq = 0.0;
  grads.visit([&](const std::string&, auto& m) { sq += static_cast<double>(m.squaredNorm()); });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    grads.visit([&](const std::string&, auto& m) { m *= static_cast<typename Params::Scalar>(s); });
  }
  return norm;
}

}  // namespace patchssl::nn
