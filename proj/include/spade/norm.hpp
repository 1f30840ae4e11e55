// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spade/layers.hpp"
#include "spade/mask.hpp"
#include "spade/ops.hpp"
#include "spade/rng.hpp"

namespace spade {

inline constexpr double kNormEps = 1e-5;

/// Parameter-free normalizer applied before modulation.
///   batch:      per channel, statistics over (n, y, x)
///   instance:   per (n, c), statistics over (y, x)
///   positional: per (n, y, x), statistics over channels
enum class NormKind { batch, instance, positional };

inline NormKind parse_norm_kind(const std::string& s) {
  if (s == "batch") return NormKind::batch;
  if (s == "instance") return NormKind::instance;
  if (s == "positional") return NormKind::positional;
  throw ConfigError("unknown norm kind '" + s + "' (expected batch|instance|positional)");
}

inline std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::batch: return "batch";
    case NormKind::instance: return "instance";
    case NormKind::positional: return "positional";
  }
  return "?";
}

template <class T>
struct ChannelStats {
  std::vector<T> mu;
  std::vector<T> sigma;
};

namespace detail {

inline std::vector<std::uint32_t> norm_groups(const Shape& s, NormKind kind, std::size_t& count) {
  std::vector<std::uint32_t> gid(s.numel());
  const std::size_t plane = s.plane();
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (std::size_t p = 0; p < plane; ++p, ++i) {
        switch (kind) {
          case NormKind::batch: gid[i] = static_cast<std::uint32_t>(c); break;
          case NormKind::instance: gid[i] = static_cast<std::uint32_t>(n * s.c + c); break;
          case NormKind::positional: gid[i] = static_cast<std::uint32_t>(n * plane + p); break;
        }
      }
    }
  }
  switch (kind) {
    case NormKind::batch: count = static_cast<std::size_t>(s.c); break;
    case NormKind::instance: count = static_cast<std::size_t>(s.n) * s.c; break;
    case NormKind::positional: count = static_cast<std::size_t>(s.n) * plane; break;
  }
  return gid;
}

}  // namespace detail

/// Per-channel batch statistics: mu_c over (n, y, x) and
/// sigma_c = sqrt(mean((h - mu_c)^2) + eps).
template <class T>
ChannelStats<T> batch_stats(const Tensor<T>& h, double eps = kNormEps) {
  const Shape s = h.shape();
  if (s.n * s.plane() < 1) throw DimensionError("batch_stats: empty reduction set");
  const double m = static_cast<double>(s.n) * s.plane();
  ChannelStats<T> st;
  st.mu.resize(static_cast<std::size_t>(s.c));
  st.sigma.resize(static_cast<std::size_t>(s.c));
  for (int c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = h.values().data() + h.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    const double mu = acc / m;
    double var = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = h.values().data() + h.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) var += (p[i] - mu) * (p[i] - mu);
    }
    st.mu[static_cast<std::size_t>(c)] = static_cast<T>(mu);
    st.sigma[static_cast<std::size_t>(c)] = static_cast<T>(std::sqrt(var / m + eps));
  }
  return st;
}

/// Per-(n, c) statistics over the spatial plane.
template <class T>
ChannelStats<T> instance_stats(const Tensor<T>& h, int n, double eps = kNormEps) {
  const Shape s = h.shape();
  ChannelStats<T> st;
  for (int c = 0; c < s.c; ++c) {
    const T* p = h.values().data() + h.offset(n, c, 0, 0);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    const double mu = acc / static_cast<double>(s.plane());
    double var = 0.0;
    for (std::size_t i = 0; i < s.plane(); ++i) var += (p[i] - mu) * (p[i] - mu);
    st.mu.push_back(static_cast<T>(mu));
    st.sigma.push_back(static_cast<T>(std::sqrt(var / static_cast<double>(s.plane()) + eps)));
  }
  return st;
}

/// (h - mu) / sigma with statistics grouped per `kind`; no affine part.
template <class T>
Tensor<T> normalize(const Tensor<T>& h, NormKind kind, double eps = kNormEps) {
  const Shape s = h.shape();
  std::size_t groups = 0;
  auto gid = detail::norm_groups(s, kind, groups);
  std::vector<double> sum(groups, 0.0);
  std::vector<double> cnt(groups, 0.0);
  const auto& hv = h.values();
  for (std::size_t i = 0; i < hv.size(); ++i) {
    sum[gid[i]] += hv[i];
    cnt[gid[i]] += 1.0;
  }
  std::vector<double> mu(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    if (cnt[g] < 1.0) throw DimensionError("normalize: empty statistics group in " + s.str());
    mu[g] = sum[g] / cnt[g];
  }
  std::vector<double> var(groups, 0.0);
  for (std::size_t i = 0; i < hv.size(); ++i) {
    const double d = hv[i] - mu[gid[i]];
    var[gid[i]] += d * d;
  }
  std::vector<double> inv(groups);
  for (std::size_t g = 0; g < groups; ++g) inv[g] = 1.0 / std::sqrt(var[g] / cnt[g] + eps);
  std::vector<T> out(hv.size());
  for (std::size_t i = 0; i < hv.size(); ++i) out[i] = static_cast<T>((hv[i] - mu[gid[i]]) * inv[gid[i]]);

  std::vector<T> xhat = out;
  return Tensor<T>::from_op(
      "normalize", s, std::move(out), {h},
      [h, gid = std::move(gid), inv = std::move(inv), cnt = std::move(cnt), xhat = std::move(xhat),
       groups](detail::Node<T>& self) mutable {
        T* gh = grad_ptr(h);
        if (!gh) return;
        // dx = inv * (g - mean(g) - xhat * mean(g * xhat)) per group
        std::vector<double> mg(groups, 0.0);
        std::vector<double> mgx(groups, 0.0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          mg[gid[i]] += self.grad[i];
          mgx[gid[i]] += static_cast<double>(self.grad[i]) * xhat[i];
        }
        for (std::size_t g = 0; g < groups; ++g) {
          mg[g] /= cnt[g];
          mgx[g] /= cnt[g];
        }
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const auto g = gid[i];
          gh[i] += static_cast<T>(inv[g] * (self.grad[i] - mg[g] - xhat[i] * mgx[g]));
        }
      });
}

template <class T>
Tensor<T> instance_norm(const Tensor<T>& h, double eps = kNormEps) {
  return normalize(h, NormKind::instance, eps);
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& h, double eps = kNormEps) {
  return normalize(h, NormKind::batch, eps);
}

namespace detail {

inline bool& eval_mode_flag() {
  thread_local bool flag = false;
  return flag;
}

}  // namespace detail

inline bool eval_mode() { return detail::eval_mode_flag(); }

/// While alive, batch-kind normalizers use their running statistics
/// instead of the current batch.
class EvalModeGuard {
 public:
  EvalModeGuard() : previous_(detail::eval_mode_flag()) { detail::eval_mode_flag() = true; }
  ~EvalModeGuard() { detail::eval_mode_flag() = previous_; }
  EvalModeGuard(const EvalModeGuard&) = delete;
  EvalModeGuard& operator=(const EvalModeGuard&) = delete;

 private:
  bool previous_;
};

/// (h - mean_c) / sqrt(var_c + eps) with fixed per-channel statistics.
template <class T>
Tensor<T> normalize_fixed(const Tensor<T>& h, const std::vector<T>& mean, const std::vector<T>& var,
                          double eps = kNormEps) {
  const Shape s = h.shape();
  if (mean.size() != static_cast<std::size_t>(s.c) || var.size() != static_cast<std::size_t>(s.c)) {
    throw DimensionError("normalize_fixed: statistics do not match " + s.str());
  }
  std::vector<double> inv(static_cast<std::size_t>(s.c));
  for (int c = 0; c < s.c; ++c) inv[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(static_cast<double>(var[static_cast<std::size_t>(c)]) + eps);
  std::vector<T> out(h.numel());
  const auto& hv = h.values();
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < hv.size(); ++i) {
    const std::size_t c = (i / plane) % static_cast<std::size_t>(s.c);
    out[i] = static_cast<T>((hv[i] - static_cast<double>(mean[c])) * inv[c]);
  }
  return Tensor<T>::from_op("normalize_fixed", s, std::move(out), {h}, [h, inv, plane, s](detail::Node<T>& self) mutable {
    T* gh = grad_ptr(h);
    if (!gh) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gh[i] += static_cast<T>(self.grad[i] * inv[(i / plane) % static_cast<std::size_t>(s.c)]);
    }
  });
}

/// Exponential moving averages of batch mean and (biased) variance,
/// updated on every training-mode forward of a batch-kind normalizer.
template <class T>
struct RunningStats {
  static constexpr double kMomentum = 0.1;
  std::vector<T> mean;
  std::vector<T> var;

  void reset(int channels) {
    mean.assign(static_cast<std::size_t>(channels), T(0));
    var.assign(static_cast<std::size_t>(channels), T(1));
  }

  void update(const Tensor<T>& h) {
    const Shape s = h.shape();
    if (mean.size() != static_cast<std::size_t>(s.c)) reset(s.c);
    const double m = static_cast<double>(s.n) * s.plane();
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = h.values().data() + h.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      }
      const double mu = acc / m;
      double v = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = h.values().data() + h.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const auto k = static_cast<std::size_t>(c);
      mean[k] = static_cast<T>((1.0 - kMomentum) * mean[k] + kMomentum * mu);
      var[k] = static_cast<T>((1.0 - kMomentum) * var[k] + kMomentum * (v / m));
    }
  }

  void visit(Registry<T>& reg, const std::string& prefix) {
    reg.buffers.push_back({prefix + ".running_mean", &mean});
    reg.buffers.push_back({prefix + ".running_var", &var});
  }
};

/// Normalizer of a learned layer: batch kind tracks running statistics in
/// training mode and uses them in eval mode; other kinds are per sample.
template <class T>
Tensor<T> layer_normalize(const Tensor<T>& h, NormKind kind, double eps, RunningStats<T>& running) {
  if (kind != NormKind::batch) return normalize(h, kind, eps);
  if (eval_mode()) return normalize_fixed(h, running.mean, running.var, eps);
  running.update(h);
  return normalize(h, kind, eps);
}

/// Per-site scale and bias; both shaped like the activation they modulate.
template <class T>
struct ModulationField {
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// gamma * normalize(h) + beta.
template <class T>
Tensor<T> spade_denorm(const Tensor<T>& h, const ModulationField<T>& field, NormKind kind, double eps = kNormEps) {
  if (field.gamma.shape() != h.shape() || field.beta.shape() != h.shape()) {
    throw DimensionError("spade: modulation field " + field.gamma.shape().str() + "/" + field.beta.shape().str() +
                         " does not match activation " + h.shape().str());
  }
  return mul_add(field.gamma, normalize(h, kind, eps), field.beta);
}

struct SpadeConfig {
  int num_labels = 6;
  int channels = 16;
  int hidden = 32;
  int kernel = 3;
  NormKind norm = NormKind::batch;
  bool spectral = false;
  /// Zero padding of the modulation convs; 0 gives "valid" convolutions.
  int pad = -1;  // -1: kernel / 2
  double eps = kNormEps;
};

/// Spatially-adaptive denormalization: a shared conv + ReLU on the one-hot
/// mask feeds two parallel convs that produce gamma and beta.
template <class T>
class SpadeLayer {
 public:
  SpadeLayer() = default;

  SpadeLayer(const SpadeConfig& cfg, Rng& rng) : cfg_(cfg) {
    running_.reset(cfg.channels);
    const int pad = cfg.pad < 0 ? cfg.kernel / 2 : cfg.pad;
    shared_ = Conv2d<T>(cfg.num_labels, cfg.hidden, cfg.kernel, 1, pad, rng, cfg.spectral);
    gamma_ = Conv2d<T>(cfg.hidden, cfg.channels, cfg.kernel, 1, pad, rng, cfg.spectral);
    beta_ = Conv2d<T>(cfg.hidden, cfg.channels, cfg.kernel, 1, pad, rng, cfg.spectral);
  }

  const SpadeConfig& config() const { return cfg_; }

  ModulationField<T> modulation(const Tensor<T>& onehot) const {
    if (onehot.shape().c != cfg_.num_labels) {
      throw ConfigError("spade: mask has " + std::to_string(onehot.shape().c) + " label channels, layer expects " +
                        std::to_string(cfg_.num_labels));
    }
    const Tensor<T> actv = relu(shared_(onehot));
    return {gamma_(actv), beta_(actv)};
  }

  /// Normalizes h and modulates it with fields computed from the mask
  /// level that matches h's resolution.
  Tensor<T> operator()(const Tensor<T>& h, const MaskPyramid<T>& masks) const {
    const Shape s = h.shape();
    if (s.c != cfg_.channels) {
      throw DimensionError("spade: activation has " + std::to_string(s.c) + " channels, layer expects " +
                           std::to_string(cfg_.channels));
    }
    return (*this)(h, masks.at(s.h, s.w));
  }

  Tensor<T> operator()(const Tensor<T>& h, const Tensor<T>& onehot) const {
    const ModulationField<T> field = modulation(onehot);
    if (field.gamma.shape() != h.shape()) {
      throw DimensionError("spade: modulation field " + field.gamma.shape().str() + " does not match activation " +
                           h.shape().str());
    }
    return mul_add(field.gamma, layer_normalize(h, cfg_.norm, cfg_.eps, running_), field.beta);
  }

  Conv2d<T>& shared_conv() { return shared_; }
  Conv2d<T>& gamma_conv() { return gamma_; }
  Conv2d<T>& beta_conv() { return beta_; }

  void visit(Registry<T>& reg, const std::string& prefix) {
    shared_.visit(reg, prefix + ".mlp_shared");
    gamma_.visit(reg, prefix + ".mlp_gamma");
    beta_.visit(reg, prefix + ".mlp_beta");
    if (cfg_.norm == NormKind::batch) running_.visit(reg, prefix);
  }

  RunningStats<T>& running() { return running_; }

 private:
  SpadeConfig cfg_;
  mutable RunningStats<T> running_;
  Conv2d<T> shared_;
  Conv2d<T> gamma_;
  Conv2d<T> beta_;
};

/// Batch normalization with a per-class learned (gamma, beta), constant
/// over space. With one class this is ordinary affine BatchNorm.
template <class T>
class ConditionalBatchNorm {
 public:
  ConditionalBatchNorm() = default;

  ConditionalBatchNorm(int num_classes, int channels, NormKind kind = NormKind::batch, double eps = kNormEps)
      : gamma_(Tensor<T>::full(Shape{num_classes, channels, 1, 1}, T(1), true)),
        beta_(Shape{num_classes, channels, 1, 1}, true),
        kind_(kind),
        eps_(eps) {
    running_.reset(channels);
  }

  int num_classes() const { return gamma_.shape().n; }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

  Tensor<T> operator()(const Tensor<T>& h, int class_id) const {
    if (class_id < 0 || class_id >= num_classes()) {
      throw std::out_of_range("conditional_batchnorm: unknown class id " + std::to_string(class_id));
    }
    if (h.shape().c != gamma_.shape().c) {
      throw DimensionError("conditional_batchnorm: activation " + h.shape().str() + " vs " +
                           std::to_string(gamma_.shape().c) + " channels");
    }
    return mul_add(broadcast_to(select_batch(gamma_, class_id), h.shape()), layer_normalize(h, kind_, eps_, running_),
                   broadcast_to(select_batch(beta_, class_id), h.shape()));
  }

  void visit(Registry<T>& reg, const std::string& prefix) {
    reg.params.push_back({prefix + ".gamma", gamma_});
    reg.params.push_back({prefix + ".beta", beta_});
    if (kind_ == NormKind::batch) running_.visit(reg, prefix);
  }

 private:
  mutable RunningStats<T> running_;
  Tensor<T> gamma_;
  Tensor<T> beta_;
  NormKind kind_ = NormKind::batch;
  double eps_ = kNormEps;
};

/// Adaptive instance normalization for a single sample: instance-normalize
/// h, then scale by the style sigma and shift by the style mu per channel.
template <class T>
Tensor<T> adain(const Tensor<T>& h, const ChannelStats<T>& style, double eps = kNormEps) {
  const Shape s = h.shape();
  if (s.n != 1) throw DimensionError("adain: expects a single sample, got " + s.str());
  if (style.mu.size() != static_cast<std::size_t>(s.c) || style.sigma.size() != static_cast<std::size_t>(s.c)) {
    throw DimensionError("adain: style statistics do not match channel count");
  }
  const Shape cs{1, s.c, 1, 1};
  const ModulationField<T> field{broadcast_to(Tensor<T>(cs, style.sigma), s), broadcast_to(Tensor<T>(cs, style.mu), s)};
  return spade_denorm(h, field, NormKind::instance, eps);
}

}  // namespace spade
