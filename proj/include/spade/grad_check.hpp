// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "spade/rng.hpp"
#include "spade/tensor.hpp"

namespace spade {

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  bool pass = false;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Coordinates per tensor above which a seeded random subset is checked.
  std::size_t max_coords_per_tensor = 256;
  /// Floor on the relative-error denominator max(|analytic|, |numeric|).
  double rel_floor = 1e-3;
  std::uint64_t seed = 7;
};

/// Compares analytic gradients of a scalar function against central
/// differences, perturbing the given leaf tensors in place.
///
/// The relative error at a coordinate is |a - n| / max(|a|, |n|, rel_floor);
/// the check passes when the largest one is below `tol`.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> wrt,
                                  const GradCheckOptions& opt = {}) {
  if (opt.eps <= 0.0) throw UsageError("grad_check: eps must be positive");
  {
    NoGradGuard ng;
    const double a = f().item();
    const double b = f().item();
    if (a != b) throw UsageError("grad_check: function is not deterministic");
  }

  for (auto& t : wrt) {
    if (!t.requires_grad()) throw UsageError("grad_check: tensor does not require grad");
    t.zero_grad();
  }
  f().backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  GradCheckReport report;
  Rng rng(opt.seed);
  NoGradGuard ng;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > opt.max_coords_per_tensor) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opt.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto& v = t.values();
    for (const std::size_t i : coords) {
      const double orig = v[i];
      v[i] = orig + opt.eps;
      const double fp = f().item();
      v[i] = orig - opt.eps;
      const double fm = f().item();
      v[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double a = analytic[ti][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.rel_floor});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
      ++report.coords_checked;
    }
  }
  report.pass = report.max_rel_err < opt.tol;
  return report;
}

/// Single-point form: checks d f(point) / d point.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> point,
                                  const GradCheckOptions& opt = {}) {
  if (!point.requires_grad()) point.set_requires_grad(true);
  return grad_check([&] { return f(point); }, {point}, opt);
}

}  // namespace spade
