// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "spade/data.hpp"
#include "spade/mask.hpp"
#include "spade/networks.hpp"
#include "spade/tensor.hpp"

namespace spade {

/// counts[g * L + p]: pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_labels)
      : num_labels_(num_labels), counts_(static_cast<std::size_t>(num_labels) * num_labels, 0) {
    if (num_labels < 1) throw ConfigError("confusion matrix needs at least one label");
  }

  int num_labels() const { return num_labels_; }
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * num_labels_ + pred]; }
  std::int64_t total() const { return total_; }

  void add(const SegMask& pred, const SegMask& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
      throw DimensionError("confusion: prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                           " vs ground truth " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
    }
    if (pred.num_labels() > num_labels_ || gt.num_labels() > num_labels_) {
      throw ConfigError("confusion: mask label count exceeds matrix size");
    }
    const auto p = pred.labels();
    const auto g = gt.labels();
    for (std::size_t i = 0; i < p.size(); ++i) ++counts_[static_cast<std::size_t>(g[i]) * num_labels_ + p[i]];
    total_ += static_cast<std::int64_t>(p.size());
  }

  /// IoU_l = TP / (TP + FP + FN), averaged over labels present in gt or pred.
  double miou() const {
    double acc = 0.0;
    int present = 0;
    for (int l = 0; l < num_labels_; ++l) {
      std::int64_t row = 0, col = 0;
      for (int k = 0; k < num_labels_; ++k) {
        row += at(l, k);
        col += at(k, l);
      }
      const std::int64_t tp = at(l, l);
      const std::int64_t uni = row + col - tp;
      if (uni == 0) continue;
      acc += static_cast<double>(tp) / static_cast<double>(uni);
      ++present;
    }
    return present == 0 ? 0.0 : acc / present;
  }

  double accuracy() const {
    if (total_ == 0) return 0.0;
    std::int64_t diag = 0;
    for (int l = 0; l < num_labels_; ++l) diag += at(l, l);
    return static_cast<double>(diag) / static_cast<double>(total_);
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "gt\\pred";
    for (int p = 0; p < num_labels_; ++p) os << "," << p;
    os << "\n";
    for (int g = 0; g < num_labels_; ++g) {
      os << g;
      for (int p = 0; p < num_labels_; ++p) os << "," << at(g, p);
      os << "\n";
    }
    return os.str();
  }

 private:
  int num_labels_;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

inline double miou(const SegMask& pred, const SegMask& gt) {
  ConfusionMatrix cm(std::max(pred.num_labels(), gt.num_labels()));
  cm.add(pred, gt);
  return cm.miou();
}

inline double pixel_accuracy(const SegMask& pred, const SegMask& gt) {
  ConfusionMatrix cm(std::max(pred.num_labels(), gt.num_labels()));
  cm.add(pred, gt);
  return cm.accuracy();
}

/// Neighbors farther than this (L-infinity, [0, 1] color space) from the
/// center pixel are left out of the local average.
inline constexpr float kOracleSimilarity = 0.125f;

/// Nearest base color after an edge-preserving 3x3 average: each pixel is
/// replaced by the mean of the 3x3 neighbors whose color lies within
/// kOracleSimilarity of its own, then assigned the label with the closest
/// base color (squared L2, ties to the lower label).
inline SegMask oracle_segment(const Tensor<float>& image, const std::vector<Rgb>& base_colors, int n = 0) {
  const Shape s = image.shape();
  if (s.c != 3) throw DimensionError("oracle_segment: expected RGB image, got " + s.str());
  if (base_colors.empty()) throw ConfigError("oracle_segment: empty texture map");
  const int H = s.h, W = s.w;
  auto px = [&](int c, int y, int x) { return (image.at(n, c, y, x) + 1.0f) * 0.5f; };
  std::vector<int> labels(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const float center[3] = {px(0, y, x), px(1, y, x), px(2, y, x)};
      double sum[3] = {0, 0, 0};
      int count = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          float q[3];
          bool near = true;
          for (int c = 0; c < 3; ++c) {
            q[c] = px(c, yy, xx);
            near = near && std::abs(q[c] - center[c]) <= kOracleSimilarity;
          }
          if (!near) continue;
          for (int c = 0; c < 3; ++c) sum[c] += q[c];
          ++count;
        }
      }
      int best = 0;
      double best_d = 1e300;
      for (std::size_t l = 0; l < base_colors.size(); ++l) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double diff = sum[c] / count - base_colors[l][static_cast<std::size_t>(c)];
          d += diff * diff;
        }
        if (d < best_d) best_d = d, best = static_cast<int>(l);
      }
      labels[static_cast<std::size_t>(y) * W + x] = best;
    }
  }
  return SegMask(H, W, static_cast<int>(base_colors.size()), std::move(labels));
}

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t sample_count = 0;
};

/// Mean and unbiased covariance of row samples.
inline GaussianStats gaussian_stats(const std::vector<std::vector<double>>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("gaussian_stats: need at least 2 samples");
  const auto d = static_cast<Eigen::Index>(samples.front().size());
  Eigen::MatrixXd X(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<Eigen::Index>(samples[i].size()) != d) throw DimensionError("gaussian_stats: ragged samples");
    for (Eigen::Index j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), j) = samples[i][static_cast<std::size_t>(j)];
  }
  GaussianStats st;
  st.sample_count = samples.size();
  st.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - st.mean.transpose();
  st.cov = (centered.transpose() * centered) / static_cast<double>(samples.size() - 1);
  st.cov = 0.5 * (st.cov + st.cov.transpose());
  return st;
}

namespace detail {

/// Symmetric PSD square root by eigendecomposition; eigenvalues below
/// 1e-10 are treated as 0.
inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) < 1e-10 ? 0.0 : std::sqrt(ev(i));
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size()) {
    throw DimensionError("frechet_distance: dimensions " + std::to_string(a.mean.size()) + " vs " +
                         std::to_string(b.mean.size()));
  }
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite()) {
    throw NonFiniteError("frechet_distance: non-finite statistics");
  }
  const Eigen::MatrixXd sa = detail::sym_sqrt(a.cov);
  const Eigen::MatrixXd m = sa * b.cov * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev >= 1e-10) tr_sqrt += std::sqrt(ev);
  }
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

/// Global-average-pooled final-stage features of each image in a batch.
inline std::vector<std::vector<double>> pooled_features(const Tensor<float>& images, const FeatureNet<float>& net) {
  NoGradGuard ng;
  const auto feats = net(images);
  const Tensor<float>& last = feats.back();
  const Shape s = last.shape();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(s.n), std::vector<double>(static_cast<std::size_t>(s.c)));
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* p = last.values().data() + last.offset(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out[static_cast<std::size_t>(n)][static_cast<std::size_t>(c)] = acc / static_cast<double>(s.plane());
    }
  return out;
}

inline GaussianStats feature_stats(const Tensor<float>& images, const FeatureNet<float>& net) {
  if (images.shape().n < 2) throw std::invalid_argument("feature_stats: need at least 2 images");
  return gaussian_stats(pooled_features(images, net));
}

struct EvalReport {
  double miou = 0.0;
  double accu = 0.0;
  double fd_star = 0.0;
  std::size_t num_images = 0;
  ConfusionMatrix confusion{1};
};

/// Writes key=value lines to `path` and the confusion matrix to
/// `<path without extension>_confusion.csv`; returns the CSV path.
inline std::string write_eval_report(const std::string& path, const EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report '" + path + "'");
  out << std::setprecision(9) << "miou=" << r.miou << "\naccu=" << r.accu << "\nfd_star=" << r.fd_star
      << "\nnum_images=" << r.num_images << "\n";
  std::string stem = path;
  const auto dot = stem.find_last_of('.');
  const auto slash = stem.find_last_of('/');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) stem = stem.substr(0, dot);
  const std::string csv = stem + "_confusion.csv";
  std::ofstream c(csv);
  if (!c) throw std::runtime_error("cannot write confusion CSV '" + csv + "'");
  c << r.confusion.to_csv();
  return csv;
}

}  // namespace spade
