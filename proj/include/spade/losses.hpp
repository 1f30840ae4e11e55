// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spade/networks.hpp"
#include "spade/ops.hpp"
#include "spade/rng.hpp"

namespace spade {

struct LossWeights {
  double w_gan = 1.0;
  double w_feat = 10.0;
  double w_perc = 10.0;
  double w_kld = 0.05;

  void validate() const {
    if (w_gan < 0 || w_feat < 0 || w_perc < 0 || w_kld < 0) throw ConfigError("loss weights must be nonnegative");
  }
};

inline constexpr double kLogvarClamp = 20.0;

/// mean over scales of mean(relu(1 - r)) + mean(relu(1 + f)).
template <class T>
Tensor<T> hinge_d(const std::vector<Tensor<T>>& real, const std::vector<Tensor<T>>& fake) {
  if (real.size() != fake.size() || real.empty()) throw DimensionError("hinge_d: scale lists differ or are empty");
  Tensor<T> total;
  for (std::size_t s = 0; s < real.size(); ++s) {
    Tensor<T> r = mean(relu(add_scalar(scale(real[s], T(-1)), T(1))));
    Tensor<T> f = mean(relu(add_scalar(fake[s], T(1))));
    Tensor<T> term = add(r, f);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, static_cast<T>(1.0 / static_cast<double>(real.size())));
}

/// -mean(f), averaged over scales.
template <class T>
Tensor<T> hinge_g(const std::vector<Tensor<T>>& fake) {
  if (fake.empty()) throw DimensionError("hinge_g: no scales");
  Tensor<T> total;
  for (const auto& f : fake) total = total.defined() ? add(total, mean(f)) : mean(f);
  return scale(total, static_cast<T>(-1.0 / static_cast<double>(fake.size())));
}

/// Mean L1 between discriminator features, averaged over (scale, layer);
/// real features are detached.
template <class T>
Tensor<T> feature_matching(const std::vector<std::vector<Tensor<T>>>& real,
                           const std::vector<std::vector<Tensor<T>>>& fake) {
  if (real.size() != fake.size() || real.empty()) throw DimensionError("feature_matching: scale counts differ");
  Tensor<T> total;
  std::size_t terms = 0;
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].size() != fake[s].size()) throw DimensionError("feature_matching: layer counts differ at a scale");
    for (std::size_t l = 0; l < real[s].size(); ++l) {
      Tensor<T> term = mean(abs(sub(fake[s][l], real[s][l].detach())));
      total = total.defined() ? add(total, term) : term;
      ++terms;
    }
  }
  if (terms == 0) throw DimensionError("feature_matching: no layers");
  return scale(total, static_cast<T>(1.0 / static_cast<double>(terms)));
}

/// Sum over stages k = 1..K of 2^-(K-k) * mean|phi_k(a) - phi_k(b)|.
template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& a, const Tensor<T>& b, const FeatureNet<T>& net) {
  if (a.shape() != b.shape()) throw DimensionError("perceptual_loss: " + a.shape().str() + " vs " + b.shape().str());
  const auto fa = net(a);
  const auto fb = net(b);
  const int K = static_cast<int>(fa.size());
  Tensor<T> total;
  for (int k = 1; k <= K; ++k) {
    const T w = static_cast<T>(std::ldexp(1.0, -(K - k)));
    Tensor<T> term = scale(mean(abs(sub(fa[static_cast<std::size_t>(k - 1)], fb[static_cast<std::size_t>(k - 1)]))), w);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// 0.5 * sum_j (exp(logvar_j) + mu_j^2 - 1 - logvar_j), averaged over the batch.
template <class T>
Tensor<T> kld_loss(const Tensor<T>& mu, const Tensor<T>& logvar) {
  if (mu.shape() != logvar.shape()) throw DimensionError("kld_loss: mu " + mu.shape().str() + " vs logvar " + logvar.shape().str());
  Tensor<T> inner = sub(add(exp(logvar), square(mu)), add_scalar(logvar, T(1)));
  return scale(sum(inner), static_cast<T>(0.5 / mu.shape().n));
}

/// mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from rng; logvar is
/// clamped to [-20, 20] first.
template <class T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, Rng& rng) {
  if (mu.shape() != logvar.shape()) throw DimensionError("reparameterize: mu/logvar shapes differ");
  Tensor<T> eps(mu.shape());
  for (auto& v : eps.values()) v = static_cast<T>(rng.normal());
  const T c = static_cast<T>(kLogvarClamp);
  Tensor<T> stdev = exp(scale(clamp(logvar, -c, c), T(0.5)));
  return mul_add(stdev, eps, mu);
}

}  // namespace spade
