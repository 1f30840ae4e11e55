// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spade/checkpoint.hpp"
#include "spade/config.hpp"
#include "spade/data.hpp"
#include "spade/losses.hpp"
#include "spade/metrics.hpp"
#include "spade/networks.hpp"
#include "spade/optim.hpp"

namespace spade {

namespace detail {

template <class T>
void append_prefixed(Registry<T>& dst, Registry<T> src, const std::string& prefix) {
  for (auto& p : src.params) dst.params.push_back({prefix + p.name, p.tensor});
  for (auto& b : src.buffers) dst.buffers.push_back({prefix + b.name, b.values});
  for (auto* s : src.spectral) dst.spectral.push_back(s);
}

inline EncoderConfig encoder_config(const TrainConfig& cfg) {
  EncoderConfig e;
  e.image_size = cfg.data.resolution;
  e.nf = cfg.gen.nf;
  e.z_dim = cfg.gen.z_dim;
  e.spectral = cfg.gen.spectral;
  return e;
}

}  // namespace detail

/// Generator, discriminator, optional encoder and the frozen feature net,
/// initialized from Rng(cfg.seed) in that order.
class Models {
 public:
  explicit Models(const TrainConfig& cfg) : Models(cfg, Rng(cfg.seed)) {}

  Models(const Models&) = delete;
  Models& operator=(const Models&) = delete;

  const TrainConfig& config() const { return cfg_; }
  Generator<float>& generator() { return g_; }
  Discriminator<float>& discriminator() { return d_; }
  Encoder<float>* encoder() { return e_.get(); }
  const FeatureNet<float>& feature_net() const { return feat_; }

  /// Generator parameters under "G.", encoder parameters under "E.".
  Registry<float> g_registry() {
    Registry<float> r;
    detail::append_prefixed(r, g_.registry(), "G.");
    if (e_) detail::append_prefixed(r, e_->registry(), "E.");
    return r;
  }

  Registry<float> d_registry() {
    Registry<float> r;
    detail::append_prefixed(r, d_.registry(), "D.");
    return r;
  }

 private:
  Models(const TrainConfig& cfg, Rng rng)
      : cfg_(cfg),
        g_(cfg.gen, rng),
        d_(cfg.disc, rng),
        e_(cfg.use_encoder ? std::make_unique<Encoder<float>>(detail::encoder_config(cfg), rng) : nullptr) {}

  TrainConfig cfg_;
  Generator<float> g_;
  Discriminator<float> d_;
  std::unique_ptr<Encoder<float>> e_;
  FeatureNet<float> feat_;
};

struct Batch {
  Tensor<float> images;
  MaskPyramid<float> masks;
  std::vector<SegMask> raw_masks;
};

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& which, int levels) {
  Batch b;
  b.images = stack_images(ds.images, which);
  for (const auto i : which) b.raw_masks.push_back(ds.masks[i]);
  b.masks = MaskPyramid<float>(std::span<const SegMask>(b.raw_masks), levels);
  return b;
}

/// Latent codes z ~ N(0, I) as [n, z_dim, 1, 1].
inline Tensor<float> sample_z(int n, int z_dim, Rng& rng) {
  Tensor<float> z(Shape{n, z_dim, 1, 1});
  for (auto& v : z.values()) v = static_cast<float>(rng.normal());
  return z;
}

struct StepReport {
  std::uint64_t step = 0;
  int epoch = 0;
  double loss_d = 0, loss_d_real = 0, loss_d_fake = 0;
  double loss_g = 0, g_gan = 0, g_feat = 0, g_perc = 0, g_kld = 0;
  double grad_norm_g = 0, grad_norm_d = 0;
  double lr_g = 0, lr_d = 0;

  bool operator==(const StepReport&) const = default;

  std::string log_line() const {
    char buf[400];
    std::snprintf(buf, sizeof buf,
                  "step=%llu loss_d=%.9g loss_g=%.9g lr_g=%.9g lr_d=%.9g epoch=%d g_gan=%.9g g_feat=%.9g g_perc=%.9g "
                  "g_kld=%.9g gnorm_g=%.9g gnorm_d=%.9g",
                  static_cast<unsigned long long>(step), loss_d, loss_g, lr_g, lr_d, epoch, g_gan, g_feat, g_perc, g_kld,
                  grad_norm_g, grad_norm_d);
    return buf;
  }
};

/// mean over scales of mean(relu(1 + sign * x)); reporting only.
inline double hinge_margin_mean(const std::vector<Tensor<float>>& logits, double sign) {
  double total = 0.0;
  for (const auto& t : logits) {
    double acc = 0.0;
    for (const float v : t.values()) acc += std::max(0.0, 1.0 + sign * v);
    total += acc / static_cast<double>(t.numel());
  }
  return total / static_cast<double>(logits.size());
}

inline double grad_norm(const Registry<float>& reg) {
  double s = 0.0;
  for (const auto& p : reg.params) {
    if (!p.tensor.has_grad()) continue;
    for (const float g : p.tensor.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

/// Single-writer training loop over a fixed dataset.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, Dataset train)
      : cfg_(cfg), data_(std::move(train)), models_(cfg), rng_(cfg.seed ^ 0x7261696E5F726E67ULL) {
    cfg_.validate();
    if (data_.size() < static_cast<std::size_t>(cfg_.batch_size)) throw ConfigError("training set smaller than a batch");
    g_reg_ = models_.g_registry();
    d_reg_ = models_.d_registry();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  Models& models() { return models_; }
  Registry<float>& g_registry() { return g_reg_; }
  Registry<float>& d_registry() { return d_reg_; }
  std::uint64_t step() const { return step_; }
  Rng& rng() { return rng_; }

  std::uint64_t steps_per_epoch() const { return data_.size() / static_cast<std::size_t>(cfg_.batch_size); }
  std::uint64_t total_steps() const { return steps_per_epoch() * static_cast<std::uint64_t>(cfg_.epochs); }

  /// Skip generator updates (discriminator-only training).
  void freeze_generator(bool on) { freeze_g_ = on; }

  /// Indices of the batch at a global step: a permutation seeded by
  /// (seed, epoch), sliced by the step's position within the epoch.
  std::vector<std::size_t> batch_indices(std::uint64_t step) const {
    const std::uint64_t spe = steps_per_epoch();
    const std::uint64_t epoch = step / spe;
    const std::uint64_t k = step % spe;
    std::vector<std::size_t> perm(data_.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng r(cfg_.seed * 0x9E3779B97F4A7C15ULL ^ (epoch + 1) * 0xD1B54A32D192ED03ULL);
    r.shuffle(perm.begin(), perm.end());
    const auto B = static_cast<std::size_t>(cfg_.batch_size);
    return {perm.begin() + static_cast<std::ptrdiff_t>(k * B), perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * B)};
  }

  /// One D update on detached fakes, then one G update on the full
  /// objective. Spectral-norm vectors advance once at the start.
  StepReport train_step(const Batch& batch, double lr_g, double lr_d) {
    StepReport rep;
    rep.step = step_;
    rep.epoch = static_cast<int>(step_ / steps_per_epoch());
    rep.lr_g = lr_g;
    rep.lr_d = lr_d;
    const LossWeights& w = cfg_.loss;
    g_reg_.update_spectral();
    d_reg_.update_spectral();

    auto& G = models_.generator();
    auto& D = models_.discriminator();
    const Tensor<float>& onehot = batch.masks.full();
    const int n = batch.images.shape().n;

    Tensor<float> z;
    Tensor<float> kld;
    if (auto* E = models_.encoder()) {
      Posterior<float> q = (*E)(batch.images);
      z = reparameterize(q.mu, q.logvar, rng_);
      kld = kld_loss(q.mu, q.logvar);
    } else if (cfg_.gen.uses_z()) {
      z = sample_z(n, cfg_.gen.z_dim, rng_);
    }
    Tensor<float> fake = G(z, batch.masks);
    fake.check_finite("generator_output");

    // discriminator step
    d_reg_.zero_grad();
    {
      const DiscOutput<float> real_out = D(batch.images, onehot);
      const DiscOutput<float> fake_out = D(fake.detach(), onehot);
      rep.loss_d_real = hinge_margin_mean(real_out.logits, -1.0);
      rep.loss_d_fake = hinge_margin_mean(fake_out.logits, 1.0);
      Tensor<float> loss_d = scale(hinge_d(real_out.logits, fake_out.logits), static_cast<float>(w.w_gan));
      loss_d.check_finite("loss_d");
      rep.loss_d = loss_d.item();
      loss_d.backward();
      rep.grad_norm_d = grad_norm(d_reg_);
      adam_step(d_reg_.params, d_opt_, lr_d, cfg_.adam);
    }

    // generator step; D parameters pass gradients through but do not collect them
    if (!freeze_g_) {
      g_reg_.zero_grad();
      d_reg_.set_requires_grad(false);
      struct Restore {
        Registry<float>& r;
        ~Restore() { r.set_requires_grad(true); }
      } restore{d_reg_};
      DiscOutput<float> real_out;
      {
        NoGradGuard ng;
        real_out = D(batch.images, onehot);
      }
      const DiscOutput<float> fake_out = D(fake, onehot);
      Tensor<float> gan = hinge_g(fake_out.logits);
      Tensor<float> feat = feature_matching(real_out.features, fake_out.features);
      Tensor<float> perc = perceptual_loss(fake, batch.images, models_.feature_net());
      Tensor<float> total = add(add(scale(gan, static_cast<float>(w.w_gan)), scale(feat, static_cast<float>(w.w_feat))),
                                scale(perc, static_cast<float>(w.w_perc)));
      if (kld.defined()) total = add(total, scale(kld, static_cast<float>(w.w_kld)));
      total.check_finite("loss_g");
      rep.g_gan = gan.item();
      rep.g_feat = feat.item();
      rep.g_perc = perc.item();
      rep.g_kld = kld.defined() ? kld.item() : 0.0;
      rep.loss_g = total.item();
      total.backward();
      rep.grad_norm_g = grad_norm(g_reg_);
      adam_step(g_reg_.params, g_opt_, lr_g, cfg_.adam);
    }
    return rep;
  }

  /// Draws the scheduled batch, applies the learning-rate schedule and
  /// advances the step counter.
  StepReport step_once() {
    const int epoch = static_cast<int>(step_ / steps_per_epoch());
    const double lr_g = lr_at(epoch, cfg_.epochs, cfg_.decay_start(), cfg_.lr_g);
    const double lr_d = lr_at(epoch, cfg_.epochs, cfg_.decay_start(), cfg_.lr_d);
    const Batch b = make_batch(data_, batch_indices(step_), cfg_.gen.num_upsample_stages);
    StepReport r = train_step(b, lr_g, lr_d);
    ++step_;
    return r;
  }

  CheckpointBundle bundle() {
    CheckpointBundle c;
    for (auto* reg : {&g_reg_, &d_reg_}) {
      for (const auto& p : reg->params) c.params.push_back({p.name, p.tensor.shape(), p.tensor.values()});
      for (const auto& b : reg->buffers) c.buffers.push_back({b.name, std::vector<float>(*b.values)});
    }
    c.optimizers.push_back(optimizer_record("adam_g", g_opt_));
    c.optimizers.push_back(optimizer_record("adam_d", d_opt_));
    c.rng_state = rng_.state();
    c.step = step_;
    c.config_text = cfg_.to_text();
    return c;
  }

  /// Loads parameters, buffers, optimizer moments, RNG state and step.
  /// Names and shapes must match this trainer's models exactly.
  void restore(const CheckpointBundle& c) {
    restore_weights(c, g_reg_, d_reg_);
    for (const auto& o : c.optimizers) {
      if (o.name == "adam_g") load_optimizer(o, g_opt_, g_reg_);
      else if (o.name == "adam_d") load_optimizer(o, d_opt_, d_reg_);
      else throw CheckpointError("unknown optimizer record '" + o.name + "'");
    }
    rng_.set_state(c.rng_state);
    step_ = c.step;
  }

  /// Copies parameters and buffers from a bundle into registries.
  static void restore_weights(const CheckpointBundle& c, Registry<float>& g, Registry<float>& d) {
    std::map<std::string, const CheckpointBundle::Param*> params;
    for (const auto& p : c.params) params[p.name] = &p;
    std::map<std::string, const CheckpointBundle::Buffer*> buffers;
    for (const auto& b : c.buffers) buffers[b.name] = &b;
    for (auto* reg : {&g, &d}) {
      for (auto& p : reg->params) {
        auto it = params.find(p.name);
        if (it == params.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
        if (it->second->shape != p.tensor.shape()) {
          throw CheckpointError("parameter '" + p.name + "' is " + it->second->shape.str() + " in the checkpoint but " +
                                p.tensor.shape().str() + " in the model");
        }
        p.tensor.values() = it->second->data;
      }
      for (auto& b : reg->buffers) {
        auto it = buffers.find(b.name);
        if (it == buffers.end()) throw CheckpointError("checkpoint lacks buffer '" + b.name + "'");
        if (it->second->data.size() != b.values->size()) throw CheckpointError("buffer '" + b.name + "' size differs");
        *b.values = it->second->data;
      }
    }
  }

  /// Runs to the configured step budget, writing one log line per
  /// log_every steps. Returns the last report.
  StepReport run(std::ostream& log, const std::function<void(const StepReport&)>& on_step = {}) {
    StepReport last;
    while (step_ < total_steps()) {
      last = step_once();
      if (cfg_.log_every > 0 && (last.step % static_cast<std::uint64_t>(cfg_.log_every) == 0 || step_ == total_steps())) {
        log << last.log_line() << "\n";
      }
      if (on_step) on_step(last);
    }
    log.flush();
    return last;
  }

 private:
  static CheckpointBundle::Optimizer optimizer_record(const std::string& name, const AdamState<float>& s) {
    return {name, s.step, s.m, s.v};
  }

  static void load_optimizer(const CheckpointBundle::Optimizer& o, AdamState<float>& s, const Registry<float>& reg) {
    if (!o.m.empty() && o.m.size() != reg.params.size()) {
      throw CheckpointError("optimizer '" + o.name + "' has " + std::to_string(o.m.size()) + " moment slots for " +
                            std::to_string(reg.params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < o.m.size(); ++i) {
      if (o.m[i].size() != reg.params[i].tensor.numel()) throw CheckpointError("optimizer '" + o.name + "' moment size differs");
    }
    s.m = o.m;
    s.v = o.v;
    s.step = o.step;
  }

  TrainConfig cfg_;
  Dataset data_;
  Models models_;
  Registry<float> g_reg_;
  Registry<float> d_reg_;
  AdamState<float> g_opt_;
  AdamState<float> d_opt_;
  Rng rng_;
  std::uint64_t step_ = 0;
  bool freeze_g_ = false;
};

/// Builds models from a checkpoint's embedded config and loads its weights.
inline std::unique_ptr<Models> models_from_checkpoint(const CheckpointBundle& c) {
  auto m = std::make_unique<Models>(parse_config(c.config_text));
  Registry<float> g = m->g_registry();
  Registry<float> d = m->d_registry();
  Trainer::restore_weights(c, g, d);
  return m;
}

/// Generates images for masks in eval mode (running BatchNorm statistics).
inline Tensor<float> synthesize_images(Models& m, const std::vector<SegMask>& masks, const Tensor<float>& z) {
  NoGradGuard ng;
  EvalModeGuard ev;
  const MaskPyramid<float> pyr(std::span<const SegMask>(masks), m.config().gen.num_upsample_stages);
  return m.generator()(z, pyr);
}

/// Oracle-segmenter mIoU / accuracy of generated images against their input
/// masks, and FD* between real and generated feature statistics.
inline EvalReport evaluate(Models& m, const Dataset& val, int num_images, std::uint64_t seed) {
  const TrainConfig& cfg = m.config();
  const int count = std::min<int>(num_images, static_cast<int>(val.size()));
  if (count < 2) throw ConfigError("evaluate: need at least 2 validation images");
  Rng rng(seed);
  const auto colors = palette(cfg.data.num_labels);
  EvalReport rep;
  rep.confusion = ConfusionMatrix(cfg.data.num_labels);
  rep.num_images = static_cast<std::size_t>(count);
  std::vector<std::vector<double>> real_feats, fake_feats;
  const int B = std::max(1, cfg.batch_size);
  for (int start = 0; start < count; start += B) {
    const int n = std::min(B, count - start);
    std::vector<std::size_t> idx;
    std::vector<SegMask> masks;
    for (int i = start; i < start + n; ++i) {
      idx.push_back(static_cast<std::size_t>(i));
      masks.push_back(val.masks[static_cast<std::size_t>(i)]);
    }
    Tensor<float> z;
    if (cfg.gen.uses_z()) z = sample_z(n, cfg.gen.z_dim, rng);
    const Tensor<float> fake = synthesize_images(m, masks, z);
    for (int i = 0; i < n; ++i) {
      rep.confusion.add(oracle_segment(fake, colors, i), masks[static_cast<std::size_t>(i)]);
    }
    const Tensor<float> real = stack_images(val.images, idx);
    for (auto& f : pooled_features(real, m.feature_net())) real_feats.push_back(std::move(f));
    for (auto& f : pooled_features(fake, m.feature_net())) fake_feats.push_back(std::move(f));
  }
  rep.miou = rep.confusion.miou();
  rep.accu = rep.confusion.accuracy();
  rep.fd_star = frechet_distance(gaussian_stats(real_feats), gaussian_stats(fake_feats));
  return rep;
}

}  // namespace spade
