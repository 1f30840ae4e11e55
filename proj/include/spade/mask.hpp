// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "spade/tensor.hpp"

namespace spade {

/// Integer label map with values in {0 .. num_labels-1}.
class SegMask {
 public:
  SegMask() = default;

  SegMask(int height, int width, int num_labels, std::vector<int> labels)
      : height_(height), width_(width), num_labels_(num_labels), labels_(std::move(labels)) {
    if (height < 1 || width < 1) throw DimensionError("SegMask: empty grid");
    if (num_labels < 1) throw ConfigError("SegMask: num_labels must be positive");
    if (labels_.size() != static_cast<std::size_t>(height) * width) {
      throw DimensionError("SegMask: " + std::to_string(labels_.size()) + " labels for a " + std::to_string(height) +
                           "x" + std::to_string(width) + " grid");
    }
    for (const int l : labels_) {
      if (l < 0 || l >= num_labels) {
        throw std::out_of_range("SegMask: label " + std::to_string(l) + " outside [0, " +
                                std::to_string(num_labels) + ")");
      }
    }
  }

  static SegMask uniform(int height, int width, int num_labels, int label) {
    return SegMask(height, width, num_labels,
                   std::vector<int>(static_cast<std::size_t>(height) * width, label));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int num_labels() const { return num_labels_; }
  std::span<const int> labels() const { return labels_; }
  int at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }

  bool is_uniform() const {
    return std::all_of(labels_.begin(), labels_.end(), [&](int l) { return l == labels_.front(); });
  }

  std::set<int> distinct() const { return {labels_.begin(), labels_.end()}; }

  /// Nearest-neighbour resize on raw labels; output (y, x) samples input
  /// (y * H / h, x * W / w). For a 2x reduction this is the top-left pixel of
  /// each 2x2 cell.
  SegMask resized(int height, int width) const {
    std::vector<int> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * height_ / height);
      for (int x = 0; x < width; ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * width_ / width);
        out[static_cast<std::size_t>(y) * width + x] = at(sy, sx);
      }
    }
    return SegMask(height, width, num_labels_, std::move(out));
  }

  /// One 2x reduction: top-left sample of each 2x2 cell, ceil sizes.
  SegMask halved() const {
    const int h = (height_ + 1) / 2;
    const int w = (width_ + 1) / 2;
    std::vector<int> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(y) * w + x] = at(2 * y, 2 * x);
    return SegMask(h, w, num_labels_, std::move(out));
  }

  /// Levels 0..levels; level k is ceil(H/2^k) x ceil(W/2^k).
  std::vector<SegMask> pyramid(int levels) const {
    if (levels < 0) throw ConfigError("pyramid: negative level count");
    int max_levels = 0;
    for (int m = std::min(height_, width_); m > 1; m /= 2) ++max_levels;
    if (levels > max_levels) {
      throw ConfigError("pyramid: " + std::to_string(levels) + " levels exceeds log2 of the smaller side");
    }
    std::vector<SegMask> out{*this};
    for (int k = 0; k < levels; ++k) out.push_back(out.back().halved());
    return out;
  }

  /// One-hot encoding as [1, L, H, W].
  template <class T>
  Tensor<T> onehot() const {
    Tensor<T> t(Shape{1, num_labels_, height_, width_});
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    for (std::size_t i = 0; i < plane; ++i) t.values()[static_cast<std::size_t>(labels_[i]) * plane + i] = T(1);
    return t;
  }

  friend bool operator==(const SegMask&, const SegMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int num_labels_ = 0;
  std::vector<int> labels_;
};

/// Batched one-hot masks at every resolution a network needs.
template <class T>
class MaskPyramid {
 public:
  MaskPyramid() = default;

  /// Builds levels 0..levels from a batch of equally sized masks.
  MaskPyramid(std::span<const SegMask> masks, int levels) {
    if (masks.empty()) throw DimensionError("MaskPyramid: empty batch");
    const SegMask& first = masks.front();
    num_labels_ = first.num_labels();
    std::vector<std::vector<SegMask>> per_sample;
    for (const auto& m : masks) {
      if (m.height() != first.height() || m.width() != first.width() || m.num_labels() != num_labels_) {
        throw DimensionError("MaskPyramid: masks in a batch must share size and label count");
      }
      per_sample.push_back(m.pyramid(levels));
    }
    for (int k = 0; k <= levels; ++k) {
      const SegMask& ref = per_sample.front()[static_cast<std::size_t>(k)];
      const Shape s{static_cast<int>(masks.size()), num_labels_, ref.height(), ref.width()};
      Tensor<T> t(s);
      for (std::size_t n = 0; n < masks.size(); ++n) {
        const auto one = per_sample[n][static_cast<std::size_t>(k)].template onehot<T>();
        std::copy(one.values().begin(), one.values().end(), t.values().begin() + static_cast<std::ptrdiff_t>(n * s.sample()));
      }
      levels_.push_back(std::move(t));
    }
  }

  MaskPyramid(const SegMask& mask, int levels) : MaskPyramid(std::span<const SegMask>(&mask, 1), levels) {}

  int num_labels() const { return num_labels_; }
  int batch() const { return levels_.empty() ? 0 : levels_.front().shape().n; }
  const Tensor<T>& full() const { return levels_.at(0); }
  std::size_t size() const { return levels_.size(); }

  /// One-hot batch at exactly (h, w); ConfigError when absent.
  const Tensor<T>& at(int h, int w) const {
    for (const auto& t : levels_) {
      if (t.shape().h == h && t.shape().w == w) return t;
    }
    throw ConfigError("mask pyramid has no level at " + std::to_string(h) + "x" + std::to_string(w));
  }

 private:
  int num_labels_ = 0;
  std::vector<Tensor<T>> levels_;
};

}  // namespace spade
