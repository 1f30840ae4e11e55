// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "spade/layers.hpp"
#include "spade/mask.hpp"
#include "spade/norm.hpp"
#include "spade/rng.hpp"

namespace spade {

/// A valid conv on the one-hot mask followed by either plain instance
/// normalization or SPADE whose shared conv carries the same weights.
class WashawayProbe {
 public:
  static constexpr int kChannels = 8;
  static constexpr int kKernel = 3;

  WashawayProbe(int num_labels, std::uint64_t seed) : num_labels_(num_labels) {
    if (num_labels < 1) throw ConfigError("washaway: need at least one label");
    Rng rng(seed);
    conv_ = Conv2d<double>(num_labels, kChannels, kKernel, 1, 0, rng, false);
    SpadeConfig sc;
    sc.num_labels = num_labels;
    sc.channels = kChannels;
    sc.hidden = kChannels;
    sc.kernel = kKernel;
    sc.norm = NormKind::instance;
    spade_ = SpadeLayer<double>(sc, rng);
    spade_.shared_conv().weight().raw().values() = conv_.weight().raw().values();
    spade_.shared_conv().bias().values() = conv_.bias().values();
  }

  int num_labels() const { return num_labels_; }

  /// conv(mask) at the valid-conv resolution.
  Tensor<double> features(const SegMask& mask) const {
    NoGradGuard ng;
    return conv_(mask.onehot<double>());
  }

  Tensor<double> instance_path(const SegMask& mask) const {
    NoGradGuard ng;
    return instance_norm(features(mask));
  }

  /// SPADE on the same features, modulated by the mask resized to them.
  Tensor<double> spade_path(const SegMask& mask) const {
    NoGradGuard ng;
    const Tensor<double> h = features(mask);
    const SegMask m = mask.resized(h.shape().h, h.shape().w);
    return spade_(h, m.onehot<double>());
  }

 private:
  int num_labels_;
  Conv2d<double> conv_;
  SpadeLayer<double> spade_;
};

struct WashawayReport {
  int num_labels = 0;
  int resolution = 0;
  std::vector<double> instance_l2;   // per uniform label
  std::vector<double> spade_l2;      // per uniform label
  double min_pairwise_spade_diff = 0.0;
  double nonuniform_instance_l2 = 0.0;

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(9) << "num_labels=" << num_labels << "\nresolution=" << resolution << "\n";
    for (int l = 0; l < num_labels; ++l) {
      os << "label=" << l << " instance_l2=" << instance_l2[static_cast<std::size_t>(l)]
         << " spade_l2=" << spade_l2[static_cast<std::size_t>(l)] << "\n";
    }
    os << "min_pairwise_spade_diff=" << min_pairwise_spade_diff << "\nnonuniform_instance_l2=" << nonuniform_instance_l2
       << "\n";
    return os.str();
  }
};

inline double l2_norm(const Tensor<double>& t) {
  double acc = 0.0;
  for (const double v : t.values()) acc += v * v;
  return std::sqrt(acc);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  double d = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

/// Runs every uniform mask through both paths plus one random mask as a
/// negative control for the instance path.
inline WashawayReport washaway_report(int num_labels = 6, int resolution = 8, std::uint64_t seed = 1) {
  const WashawayProbe probe(num_labels, seed);
  WashawayReport r;
  r.num_labels = num_labels;
  r.resolution = resolution;
  std::vector<Tensor<double>> spade_out;
  for (int l = 0; l < num_labels; ++l) {
    const SegMask m = SegMask::uniform(resolution, resolution, num_labels, l);
    r.instance_l2.push_back(l2_norm(probe.instance_path(m)));
    spade_out.push_back(probe.spade_path(m));
    r.spade_l2.push_back(l2_norm(spade_out.back()));
  }
  r.min_pairwise_spade_diff = num_labels > 1 ? 1e300 : 0.0;
  for (int a = 0; a < num_labels; ++a)
    for (int b = a + 1; b < num_labels; ++b)
      r.min_pairwise_spade_diff = std::min(r.min_pairwise_spade_diff, max_abs_diff(spade_out[static_cast<std::size_t>(a)],
                                                                                   spade_out[static_cast<std::size_t>(b)]));
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  std::vector<int> labels(static_cast<std::size_t>(resolution) * resolution);
  for (auto& v : labels) v = rng.uniform_int(0, num_labels - 1);
  r.nonuniform_instance_l2 = l2_norm(probe.instance_path(SegMask(resolution, resolution, num_labels, std::move(labels))));
  return r;
}

inline WashawayReport run_washaway_demo(const std::string& out_path, int num_labels = 6, std::uint64_t seed = 1) {
  WashawayReport r = washaway_report(num_labels, 8, seed);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write washaway report '" + out_path + "'");
  out << r.to_text();
  if (!out) throw std::runtime_error("write failed for '" + out_path + "'");
  return r;
}

}  // namespace spade
