// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spade/layers.hpp"

namespace spade {

struct AdamHyper {
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moments, aligned with the registry's parameter order.
template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <class T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& st, double lr, const AdamHyper& h = {}) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.tensor.numel(), T(0));
      st.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (st.m.size() != params.size()) throw UsageError("adam_step: optimizer state does not match parameter list");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw UsageError("adam_step: parameter '" + p.name + "' has no gradient");
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].tensor.values();
    const auto g = params[i].tensor.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != w.size()) throw UsageError("adam_step: moment shape mismatch for '" + params[i].name + "'");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(w[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + h.eps));
    }
  }
}

/// Learning rate at an epoch in [0, total): constant through decay_start,
/// then linear to exactly 0 at the final epoch (total - 1).
inline double lr_at(int epoch, int total_epochs, int decay_start, double lr0) {
  if (total_epochs < 1) throw ConfigError("lr schedule: need at least one epoch");
  if (epoch >= total_epochs - 1) return 0.0;
  if (epoch <= decay_start) return lr0;
  const double span = static_cast<double>(total_epochs - 1 - decay_start);
  return lr0 * static_cast<double>(total_epochs - 1 - epoch) / span;
}

}  // namespace spade
