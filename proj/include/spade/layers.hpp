// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spade/ops.hpp"
#include "spade/rng.hpp"
#include "spade/tensor.hpp"

namespace spade {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <class T>
class SpectralWeight;

/// Everything a module owns that training or checkpointing must reach.
template <class T>
struct Registry {
  std::vector<NamedTensor<T>> params;
  std::vector<NamedBuffer<T>> buffers;
  std::vector<SpectralWeight<T>*> spectral;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params) p.tensor.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& p : params) p.tensor.set_requires_grad(on);
  }

  void update_spectral() {
    for (auto* s : spectral) s->update();
  }
};

/// Uniform on +-sqrt(6 / (fan_in + fan_out)); fans from [out, in, k, k].
template <class T>
void glorot_init(Tensor<T>& w, Rng& rng) {
  const Shape s = w.shape();
  const double receptive = static_cast<double>(s.h) * s.w;
  const double fan_in = s.c * receptive;
  const double fan_out = s.n * receptive;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.values()) {
    v = static_cast<T>(rng.uniform(-bound, bound));
    // float rounding of bound*u can land one ulp outside +-bound
    if (static_cast<double>(v) > bound) v = std::nextafter(static_cast<T>(bound), T(0));
    if (static_cast<double>(v) < -bound) v = std::nextafter(static_cast<T>(-bound), T(0));
  }
}

namespace detail {

template <class T>
void normalize_vec(std::vector<T>& v, double eps) {
  double n = 0.0;
  for (const T x : v) n += static_cast<double>(x) * x;
  n = std::sqrt(n);
  const double inv = 1.0 / std::max(n, eps);
  for (auto& x : v) x = static_cast<T>(x * inv);
}

}  // namespace detail

/// Weight with spectral normalization by persistent power iteration.
///
/// The raw weight is viewed as a (out x rest) matrix W. `update()` runs one
/// power-iteration round on (u, v); `effective()` returns W / (u^T W v) with
/// u and v treated as constants for differentiation.
template <class T>
class SpectralWeight {
 public:
  SpectralWeight() = default;

  SpectralWeight(Shape shape, Rng& rng, bool enabled = true, int power_iters = 1)
      : raw_(shape, true), enabled_(enabled), power_iters_(power_iters) {
    glorot_init(raw_, rng);
    u_.resize(static_cast<std::size_t>(shape.n));
    v_.resize(static_cast<std::size_t>(shape.c) * shape.h * shape.w);
    for (auto& x : u_) x = static_cast<T>(rng.normal());
    detail::normalize_vec(u_, kEps);
    refresh_v();
  }

  /// Wraps an existing weight tensor (values used as-is).
  SpectralWeight(Tensor<T> raw, Rng& rng, bool enabled = true, int power_iters = 1)
      : raw_(std::move(raw)), enabled_(enabled), power_iters_(power_iters) {
    const Shape shape = raw_.shape();
    u_.resize(static_cast<std::size_t>(shape.n));
    v_.resize(static_cast<std::size_t>(shape.c) * shape.h * shape.w);
    for (auto& x : u_) x = static_cast<T>(rng.normal());
    detail::normalize_vec(u_, kEps);
    refresh_v();
  }

  Tensor<T>& raw() { return raw_; }
  const Tensor<T>& raw() const { return raw_; }
  bool enabled() const { return enabled_; }
  const std::vector<T>& u() const { return u_; }
  const std::vector<T>& v() const { return v_; }

  /// power_iters rounds of v <- W^T u / |.|, u <- W v / |.|.
  void update() {
    if (!enabled_) return;
    for (int i = 0; i < power_iters_; ++i) {
      refresh_v();
      const std::size_t rows = u_.size();
      const std::size_t cols = v_.size();
      const auto& w = raw_.values();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w[r * cols + c]) * v_[c];
        u_[r] = static_cast<T>(acc);
      }
      detail::normalize_vec(u_, kEps);
    }
  }

  /// Current estimate u^T W v of the largest singular value, floored at eps.
  double sigma() const {
    const std::size_t rows = u_.size();
    const std::size_t cols = v_.size();
    const auto& w = raw_.values();
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w[r * cols + c]) * v_[c];
      s += acc * u_[r];
    }
    return std::max(s, kEps);
  }

  Tensor<T> effective() const {
    if (!enabled_) return raw_;
    const double s = sigma();
    std::vector<T> out(raw_.numel());
    const auto& w = raw_.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(w[i] / s);
    const std::size_t cols = v_.size();
    return Tensor<T>::from_op("spectral_norm", raw_.shape(), std::move(out), {raw_},
                              [raw = raw_, u = u_, v = v_, s, cols](detail::Node<T>& self) mutable {
                                T* gw = grad_ptr(raw);
                                if (!gw) return;
                                // d(W/s) with s = u^T W v:  g/s - (sum g.W) / s^2 * u v^T
                                const auto& w = raw.values();
                                double gdotw = 0.0;
                                for (std::size_t i = 0; i < w.size(); ++i) gdotw += static_cast<double>(self.grad[i]) * w[i];
                                const double k = gdotw / (s * s);
                                for (std::size_t r = 0; r < u.size(); ++r) {
                                  for (std::size_t c = 0; c < cols; ++c) {
                                    const std::size_t i = r * cols + c;
                                    gw[i] += static_cast<T>(self.grad[i] / s - k * u[r] * v[c]);
                                  }
                                }
                              });
  }

  void visit(Registry<T>& reg, const std::string& name) {
    reg.params.push_back({name, raw_});
    if (enabled_) {
      reg.buffers.push_back({name + ".sn_u", &u_});
      reg.buffers.push_back({name + ".sn_v", &v_});
      reg.spectral.push_back(this);
    }
  }

 private:
  static constexpr double kEps = 1e-12;

  void refresh_v() {
    const std::size_t rows = u_.size();
    const std::size_t cols = v_.size();
    const auto& w = raw_.values();
    std::vector<double> acc(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double ur = u_[r];
      for (std::size_t c = 0; c < cols; ++c) acc[c] += static_cast<double>(w[r * cols + c]) * ur;
    }
    for (std::size_t c = 0; c < cols; ++c) v_[c] = static_cast<T>(acc[c]);
    detail::normalize_vec(v_, kEps);
  }

  Tensor<T> raw_;
  std::vector<T> u_;
  std::vector<T> v_;
  bool enabled_ = true;
  int power_iters_ = 1;
};

/// One power-iteration update followed by the normalized weight.
template <class T>
Tensor<T> spectral_normalize(SpectralWeight<T>& w) {
  w.update();
  return w.effective();
}

template <class T>
class Conv2d {
 public:
  Conv2d() = default;

  Conv2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng, bool spectral = true, bool with_bias = true)
      : weight_(Shape{cout, cin, kernel, kernel}, rng, spectral), stride_(stride), pad_(pad) {
    if (with_bias) bias_ = Tensor<T>(Shape{1, cout, 1, 1}, true);
  }

  /// Same-size output for stride 1.
  static Conv2d same(int cin, int cout, int kernel, Rng& rng, bool spectral = true, bool with_bias = true) {
    return Conv2d(cin, cout, kernel, 1, kernel / 2, rng, spectral, with_bias);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_.effective(), bias_, stride_, pad_); }

  SpectralWeight<T>& weight() { return weight_; }
  const SpectralWeight<T>& weight() const { return weight_; }
  Tensor<T>& bias() { return bias_; }
  int out_channels() const { return weight_.raw().shape().n; }

  void visit(Registry<T>& reg, const std::string& prefix) {
    weight_.visit(reg, prefix + ".weight");
    if (bias_.defined()) reg.params.push_back({prefix + ".bias", bias_});
  }

 private:
  SpectralWeight<T> weight_;
  Tensor<T> bias_;
  int stride_ = 1;
  int pad_ = 0;
};

template <class T>
class Linear {
 public:
  Linear() = default;

  Linear(int in, int out, Rng& rng, bool spectral = true)
      : weight_(Shape{out, in, 1, 1}, rng, spectral), bias_(Shape{1, out, 1, 1}, true) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_.effective(), bias_); }

  SpectralWeight<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  void visit(Registry<T>& reg, const std::string& prefix) {
    weight_.visit(reg, prefix + ".weight");
    reg.params.push_back({prefix + ".bias", bias_});
  }

 private:
  SpectralWeight<T> weight_;
  Tensor<T> bias_;
};

}  // namespace spade
