#pragma once

#include "patchssl/encoder.hpp"
#include "patchssl/ssl/augment.hpp"
#include "patchssl/ssl/heads.hpp"
#include "patchssl/ssl/losses.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace patchssl::ssl {

struct PretrainConfig {
  Method method = Method::dino;
  vit::VitSpec encoder = vit::VitSpec::desk_scale();
  vit::InputNormalization normalization;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double lr = 5e-4;
  double min_lr = 1e-6;
  double weight_decay = 0.04;
  double warmup_fraction = 0.1;
  double clip_grad = 3.0;
  // DINO
  DinoHeadSpec head;
  DistillTemperatures temps;
  double teacher_momentum = 0.99;
  double center_momentum = 0.9;
  int freeze_last_layer_epochs = 1;
  // SimCLR
  double temperature = 0.5;
  int projection_dim = 128;
  // Output
  int checkpoint_every = 10;
  /// Stop after this many optimizer steps (0 = full schedule). The schedule
  /// itself is still computed for the configured epochs.
  std::size_t max_steps = 0;
};

struct LogRow {
  std::size_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double teacher_momentum = 0.0;
  /// Mean entropy of the centred, sharpened teacher distribution (nats); log K
  /// means uniform collapse, ~0 one-hot collapse. NaN for SimCLR.
  double teacher_entropy = std::numeric_limits<double>::quiet_NaN();
};

struct PretrainResult {
  std::vector<LogRow> log;
  std::vector<std::filesystem::path> checkpoints;
  Encoder encoder;  // teacher backbone for DINO, backbone for SimCLR
};

inline std::string format_log_csv(const std::vector<LogRow>& rows) {
  std::string out = "step,epoch,loss,lr,teacher_momentum,teacher_entropy\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.epoch, r.loss, r.lr, r.teacher_momentum,
                  r.teacher_entropy);
    out += buf;
  }
  return out;
}

using ProgressFn = std::function<void(const LogRow&)>;

namespace detail {

inline Encoder encoder_from(const vit::VitParams<float>& backbone, const PretrainConfig& cfg) {
  Encoder e;
  e.spec = {EncoderKind::vit_small, cfg.encoder};
  e.normalization = cfg.normalization;
  e.vit_params = backbone;
  return e;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write: " + p.string());
  out << s;
}

}  // namespace detail

/// Runs self-supervised pretraining over `corpus`. When `out_dir` is non-empty,
/// writes train_log.csv and checkpoints every `checkpoint_every` epochs plus the final epoch.
inline PretrainResult pretrain(std::span<const Image> corpus, const PretrainConfig& cfg,
                               const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {}) {
  if (corpus.empty()) throw Error("pretrain: empty corpus");
  require(cfg.epochs > 0 && cfg.batch_size > 0, "pretrain: epochs and batch_size must be positive");
  cfg.encoder.validate();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  const AugmentationPolicy policy = cfg.method == Method::dino ? AugmentationPolicy::dino() : AugmentationPolicy::simclr();
  const std::size_t n = corpus.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  const auto warmup = static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  auto lr_at = [&](std::size_t step) { return nn::cosine_schedule(cfg.lr, cfg.min_lr, step, total_steps, warmup); };

  Rng init_rng(derive_seed(cfg.seed, 0x48454144ULL));
  PretrainResult result;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  bool stop = false;

  auto finish_epoch = [&](int epoch, const vit::VitParams<float>& eval_backbone) {
    if (out_dir.empty()) return;
    const bool last = epoch == cfg.epochs || stop;
    if ((cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) || last) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.bin", epoch);
      Encoder e = detail::encoder_from(eval_backbone, cfg);
      e.save(out_dir / name, {{"method", to_string(cfg.method)}, {"epoch", epoch}, {"step", step}});
      result.checkpoints.push_back(out_dir / name);
    }
    detail::write_text(out_dir / "train_log.csv", format_log_csv(result.log));
  };

  if (cfg.method == Method::dino) {
    using Model = SslModel<float, DinoHead>;
    Model student{vit::init_vit<float>(cfg.encoder, cfg.seed),
                  init_dino_head<float>(cfg.encoder.embed_dim, cfg.head, init_rng)};
    Model teacher = student;
    VecF center = VecF::Zero(cfg.head.prototypes);
    nn::AdamW<Model> opt(student, {0.9, 0.999, 1e-8, cfg.weight_decay});
    Model grads = nn::zeros_like(student);
    const int n_global = policy.n_global;

    for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(derive_seed(cfg.seed, 0x10000ULL + static_cast<std::uint64_t>(epoch)));
      shuffle_rng.shuffle(order.begin(), order.end());
      const bool freeze_last = epoch <= cfg.freeze_last_layer_epochs;

      for (std::size_t start = 0; start < n && !stop; start += batch) {
        const std::size_t len = std::min(batch, n - start);
        grads.visit([](const std::string&, MatF& m) { m.setZero(); });
        MatF batch_teacher(static_cast<Eigen::Index>(len) * n_global, cfg.head.prototypes);
        double loss_sum = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = order[start + j];
          const auto views = augment(corpus[idx], policy,
                                     derive_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^ idx));
          const std::span<const Image> all(views);
          const auto globals = all.first(static_cast<std::size_t>(n_global));
          const auto locals = all.subspan(static_cast<std::size_t>(n_global));

          const MatF t_emb = vit::forward(teacher.backbone, globals, cfg.normalization);
          const MatF t_logits = dino_head_forward(teacher.head, t_emb, static_cast<DinoHeadCache<float>*>(nullptr));
          batch_teacher.middleRows(static_cast<Eigen::Index>(j) * n_global, n_global) = t_logits;

          vit::VitCache<float> cache_g, cache_l;
          const MatF s_g = vit::forward(student.backbone, globals, cfg.normalization, &cache_g);
          const MatF s_l = vit::forward(student.backbone, locals, cfg.normalization, &cache_l);
          MatF s_emb(s_g.rows() + s_l.rows(), s_g.cols());
          s_emb << s_g, s_l;
          DinoHeadCache<float> hc;
          const MatF s_logits = dino_head_forward(student.head, s_emb, &hc);

          auto l = dino_loss_with_grad<float>(s_logits, t_logits, center, cfg.temps);
          loss_sum += static_cast<double>(l.loss);
          l.d_student /= static_cast<float>(len);
          const MatF d_emb = dino_head_backward(student.head, hc, l.d_student, grads.head, !freeze_last);
          vit::backward(student.backbone, cache_g, MatF(d_emb.topRows(s_g.rows())), grads.backbone);
          vit::backward(student.backbone, cache_l, MatF(d_emb.bottomRows(s_l.rows())), grads.backbone);
        }
        double entropy = 0.0;
        for (Eigen::Index r = 0; r < batch_teacher.rows(); ++r) {
          const VecF p = nn::softmax<float>((batch_teacher.row(r).transpose() - center) / static_cast<float>(cfg.temps.teacher));
          entropy -= (p.array() * p.array().max(1e-30f).log()).sum();
        }
        entropy /= static_cast<double>(batch_teacher.rows());
        nn::clip_grad_norm(grads, cfg.clip_grad);
        const double lr = lr_at(step);
        opt.step(student, grads, lr);
        const double m = teacher_momentum(cfg.teacher_momentum, step, total_steps);
        update_teacher(teacher, student, m);
        update_center(center, batch_teacher, cfg.center_momentum);

        const LogRow row{step, epoch, loss_sum / static_cast<double>(len), lr, m, entropy};
        result.log.push_back(row);
        if (progress) progress(row);
        ++step;
        if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
      }
      finish_epoch(epoch, teacher.backbone);
    }
    result.encoder = detail::encoder_from(teacher.backbone, cfg);
  } else {
    using Model = SslModel<float, ProjectionHead>;
    Model model{vit::init_vit<float>(cfg.encoder, cfg.seed),
                init_projection_head<float>(cfg.encoder.embed_dim, cfg.projection_dim, init_rng)};
    nn::AdamW<Model> opt(model, {0.9, 0.999, 1e-8, cfg.weight_decay});
    Model grads = nn::zeros_like(model);
    constexpr std::size_t kChunk = 8;

    for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(derive_seed(cfg.seed, 0x10000ULL + static_cast<std::uint64_t>(epoch)));
      shuffle_rng.shuffle(order.begin(), order.end());

      for (std::size_t start = 0; start < n && !stop; start += batch) {
        const std::size_t len = std::min(batch, n - start);
        grads.visit([](const std::string&, MatF& m) { m.setZero(); });
        std::vector<Image> views;  // (a0, b0, a1, b1, ...)
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = order[start + j];
          auto v = augment(corpus[idx], policy, derive_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^ idx));
          views.push_back(std::move(v[0]));
          views.push_back(std::move(v[1]));
        }
        if (views.size() < 4) {
          // A trailing single-image batch has no negatives.
          continue;
        }
        const std::span<const Image> all(views);
        std::vector<vit::VitCache<float>> caches((views.size() + kChunk - 1) / kChunk);
        MatF emb(static_cast<Eigen::Index>(views.size()), cfg.encoder.embed_dim);
        for (std::size_t c = 0; c < caches.size(); ++c) {
          const std::size_t off = c * kChunk, cnt = std::min(kChunk, views.size() - off);
          emb.middleRows(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(cnt)) =
              vit::forward(model.backbone, all.subspan(off, cnt), cfg.normalization, &caches[c]);
        }
        ProjectionCache<float> pc;
        const MatF z = projection_forward(model.head, emb, &pc);
        const auto l = simclr_loss_with_grad(ContrastiveBatch<float>::interleaved(z, static_cast<float>(cfg.temperature)));
        const MatF d_emb = projection_backward(model.head, pc, l.grad, grads.head);
        for (std::size_t c = 0; c < caches.size(); ++c) {
          const std::size_t off = c * kChunk, cnt = std::min(kChunk, views.size() - off);
          vit::backward(model.backbone, caches[c],
                        MatF(d_emb.middleRows(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(cnt))),
                        grads.backbone);
        }
        nn::clip_grad_norm(grads, cfg.clip_grad);
        const double lr = lr_at(step);
        opt.step(model, grads, lr);
        const LogRow row{step, epoch, static_cast<double>(l.loss), lr, 0.0};
        result.log.push_back(row);
        if (progress) progress(row);
        ++step;
        if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
      }
      finish_epoch(epoch, model.backbone);
    }
    result.encoder = detail::encoder_from(model.backbone, cfg);
  }
  return result;
}

}  // namespace patchssl::ssl
