// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spade/tensor.hpp"

namespace spade {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  std::size_t patch() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t out_plane() const { return static_cast<std::size_t>(ho) * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// col is (cin*k*k) x (ho*wo), row-major.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t op = g.out_plane();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * op;
        const T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t op = g.out_plane();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * op;
        T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const char* name, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor<T>::from_op(name, x.shape(), std::move(out), {x}, [x, deriv](detail::Node<T>& self) mutable {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * deriv(xv[i], self.data[i]);
  });
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
///
/// weight is [Cout, Cin, k, k]; bias (optional, may be undefined) holds Cout
/// values in any shape. Output spatial size follows floor semantics:
/// H' = (H + 2 pad - k) / stride + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1, int pad = 0) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw DimensionError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.numel()) + " values for " + std::to_string(ws.n) +
                         " output channels");
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be positive and padding nonnegative");
  const int k = ws.h;
  const int span_h = xs.h + 2 * pad - k;
  const int span_w = xs.w + 2 * pad - k;
  if (span_h < 0 || span_w < 0) {
    throw ConfigError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + xs.str());
  }
  const detail::ConvGeometry g{xs.c, xs.h, xs.w, k, stride, pad, span_h / stride + 1, span_w / stride + 1};
  const int cout = ws.n;
  const Shape os{xs.n, cout, g.ho, g.wo};
  std::vector<T> out(os.numel());

  const std::size_t patch = g.patch();
  const std::size_t opl = g.out_plane();
  std::vector<T> col(g.pointwise() ? 0 : patch * opl);
  detail::ConstMapMat<T> wm(weight.values().data(), cout, static_cast<Eigen::Index>(patch));
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x.values().data() + static_cast<std::size_t>(n) * xs.sample();
    const T* cp = xn;
    if (!g.pointwise()) {
      detail::im2col(xn, g, col.data());
      cp = col.data();
    }
    detail::ConstMapMat<T> cm(cp, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(opl));
    detail::MapMat<T> ym(out.data() + static_cast<std::size_t>(n) * cout * opl, cout, static_cast<Eigen::Index>(opl));
    ym.noalias() = wm * cm;
    if (bias.defined()) {
      const auto& bv = bias.values();
      for (int o = 0; o < cout; ++o) ym.row(o).array() += bv[o];
    }
  }

  return Tensor<T>::from_op(
      "conv2d", os, std::move(out), {x, weight, bias}, [x, weight, bias, g, cout](detail::Node<T>& self) mutable {
        T* gx = grad_ptr(x);
        T* gw = grad_ptr(weight);
        T* gb = grad_ptr(bias);
        const std::size_t patch = g.patch();
        const std::size_t opl = g.out_plane();
        const Shape xs = x.shape();
        std::vector<T> col(g.pointwise() ? 0 : patch * opl);
        std::vector<T> dcol(gx && !g.pointwise() ? patch * opl : 0);
        detail::ConstMapMat<T> wm(weight.values().data(), cout, static_cast<Eigen::Index>(patch));
        for (int n = 0; n < xs.n; ++n) {
          detail::ConstMapMat<T> dy(self.grad.data() + static_cast<std::size_t>(n) * cout * opl, cout,
                                    static_cast<Eigen::Index>(opl));
          if (gb) {
            // fixed-order sums; Eigen reductions peel to the buffer's alignment
            for (int o = 0; o < cout; ++o) {
              T acc = 0;
              for (Eigen::Index i = 0; i < dy.cols(); ++i) acc += dy(o, i);
              gb[o] += acc;
            }
          }
          const T* xn = x.values().data() + static_cast<std::size_t>(n) * xs.sample();
          if (gw) {
            const T* cp = xn;
            if (!g.pointwise()) {
              detail::im2col(xn, g, col.data());
              cp = col.data();
            }
            detail::ConstMapMat<T> cm(cp, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(opl));
            detail::MapMat<T> gwm(gw, cout, static_cast<Eigen::Index>(patch));
            gwm.noalias() += dy * cm.transpose();
          }
          if (gx) {
            T* gxn = gx + static_cast<std::size_t>(n) * xs.sample();
            if (g.pointwise()) {
              detail::MapMat<T> gxm(gxn, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(opl));
              gxm.noalias() += wm.transpose() * dy;
            } else {
              detail::MapMat<T> dcm(dcol.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(opl));
              dcm.noalias() = wm.transpose() * dy;
              detail::col2im_add(dcol.data(), g, gxn);
            }
          }
        }
      });
}

/// Affine map per batch row. Input is flattened to [N, C*H*W]; weight is
/// [Dout, D, 1, 1]; bias (optional) holds Dout values. Output [N, Dout, 1, 1].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const auto d = static_cast<Eigen::Index>(xs.sample());
  if (static_cast<std::size_t>(ws.c) * ws.h * ws.w != xs.sample()) {
    throw DimensionError("linear: input " + xs.str() + " flattens to " + std::to_string(xs.sample()) +
                         " features but weight " + ws.str() + " expects " + std::to_string(ws.c * ws.h * ws.w));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
    throw DimensionError("linear: bias size " + std::to_string(bias.numel()) + " != " + std::to_string(ws.n));
  }
  const int dout = ws.n;
  const Shape os{xs.n, dout, 1, 1};
  std::vector<T> out(os.numel());
  detail::ConstMapMat<T> xm(x.values().data(), xs.n, d);
  detail::ConstMapMat<T> wm(weight.values().data(), dout, d);
  detail::MapMat<T> ym(out.data(), xs.n, dout);
  ym.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (int n = 0; n < xs.n; ++n) {
      for (int o = 0; o < dout; ++o) ym(n, o) += bias.values()[o];
    }
  }
  return Tensor<T>::from_op("linear", os, std::move(out), {x, weight, bias},
                            [x, weight, bias, d, dout](detail::Node<T>& self) mutable {
                              const int nb = x.shape().n;
                              detail::ConstMapMat<T> dy(self.grad.data(), nb, dout);
                              if (T* gb = grad_ptr(bias)) {
                                for (int o = 0; o < dout; ++o) {
                                  T acc = 0;
                                  for (int n = 0; n < nb; ++n) acc += dy(n, o);
                                  gb[o] += acc;
                                }
                              }
                              if (T* gw = grad_ptr(weight)) {
                                detail::ConstMapMat<T> xm(x.values().data(), nb, d);
                                detail::MapMat<T>(gw, dout, d).noalias() += dy.transpose() * xm;
                              }
                              if (T* gx = grad_ptr(x)) {
                                detail::ConstMapMat<T> wm(weight.values().data(), dout, d);
                                detail::MapMat<T>(gx, nb, d).noalias() += dy * wm;
                              }
                            });
}

/// Replicates each pixel into a factor x factor block.
template <class T>
Tensor<T> nearest_upsample(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ConfigError("nearest_upsample: factor must be >= 1");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<T> out(os.numel());
  const auto& xv = x.values();
  for (std::size_t p = 0; p < static_cast<std::size_t>(s.n) * s.c; ++p) {
    for (int y = 0; y < os.h; ++y) {
      const T* src = xv.data() + p * s.plane() + static_cast<std::size_t>(y / factor) * s.w;
      T* dst = out.data() + p * os.plane() + static_cast<std::size_t>(y) * os.w;
      for (int xx = 0; xx < os.w; ++xx) dst[xx] = src[xx / factor];
    }
  }
  return Tensor<T>::from_op("nearest_upsample", os, std::move(out), {x}, [x, factor, s, os](detail::Node<T>& self) mutable {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t p = 0; p < static_cast<std::size_t>(s.n) * s.c; ++p) {
      for (int y = 0; y < os.h; ++y) {
        T* dst = gx + p * s.plane() + static_cast<std::size_t>(y / factor) * s.w;
        const T* src = self.grad.data() + p * os.plane() + static_cast<std::size_t>(y) * os.w;
        for (int xx = 0; xx < os.w; ++xx) dst[xx / factor] += src[xx];
      }
    }
  });
}

/// 2x2 average pooling, stride 2 (floor on odd sizes).
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  if (os.h < 1 || os.w < 1) throw DimensionError("avg_pool2: input too small " + s.str());
  std::vector<T> out(os.numel());
  const auto& xv = x.values();
  for (std::size_t p = 0; p < static_cast<std::size_t>(s.n) * s.c; ++p) {
    const T* src = xv.data() + p * s.plane();
    T* dst = out.data() + p * os.plane();
    for (int y = 0; y < os.h; ++y) {
      for (int xx = 0; xx < os.w; ++xx) {
        const T* r0 = src + static_cast<std::size_t>(2 * y) * s.w + 2 * xx;
        dst[static_cast<std::size_t>(y) * os.w + xx] = (r0[0] + r0[1] + r0[s.w] + r0[s.w + 1]) * T(0.25);
      }
    }
  }
  return Tensor<T>::from_op("avg_pool2", os, std::move(out), {x}, [x, s, os](detail::Node<T>& self) mutable {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t p = 0; p < static_cast<std::size_t>(s.n) * s.c; ++p) {
      T* dst = gx + p * s.plane();
      const T* src = self.grad.data() + p * os.plane();
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx) {
          const T g = src[static_cast<std::size_t>(y) * os.w + xx] * T(0.25);
          T* r0 = dst + static_cast<std::size_t>(2 * y) * s.w + 2 * xx;
          r0[0] += g;
          r0[1] += g;
          r0[s.w] += g;
          r0[s.w + 1] += g;
        }
      }
    }
  });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return detail::unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Elementwise clamp; zero gradient outside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary<T>(
      "clamp", x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return detail::unary<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::from_op("add", a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) mutable {
    if (T* ga = grad_ptr(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (T* gb = grad_ptr(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor<T>::from_op("sub", a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) mutable {
    if (T* ga = grad_ptr(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (T* gb = grad_ptr(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::from_op("mul", a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) mutable {
    if (T* ga = grad_ptr(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b.values()[i];
    }
    if (T* gb = grad_ptr(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a.values()[i];
    }
  });
}

/// Fused a * b + c (elementwise, equal shapes).
template <class T>
Tensor<T> mul_add(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  detail::require_same_shape(a, b, "mul_add");
  detail::require_same_shape(a, c, "mul_add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i] + c.values()[i];
  return Tensor<T>::from_op("mul_add", a.shape(), std::move(out), {a, b, c}, [a, b, c](detail::Node<T>& self) mutable {
    if (T* ga = grad_ptr(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b.values()[i];
    }
    if (T* gb = grad_ptr(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a.values()[i];
    }
    if (T* gc = grad_ptr(c)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gc[i] += self.grad[i];
    }
  });
}

/// Sum of all entries as a [1,1,1,1] scalar. Accumulates in double.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (const T v : x.values()) acc += static_cast<double>(v);
  return Tensor<T>::from_op("sum", Shape{1, 1, 1, 1}, std::vector<T>{static_cast<T>(acc)}, {x},
                            [x](detail::Node<T>& self) mutable {
                              T* gx = grad_ptr(x);
                              if (!gx) return;
                              const T g = self.grad[0];
                              for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
                            });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Repeats size-1 dimensions up to `target`.
template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape target) {
  const Shape s = x.shape();
  auto ok = [](int from, int to) { return from == to || from == 1; };
  if (!ok(s.n, target.n) || !ok(s.c, target.c) || !ok(s.h, target.h) || !ok(s.w, target.w)) {
    throw DimensionError("broadcast_to: cannot expand " + s.str() + " to " + target.str());
  }
  auto src_index = [s](int n, int c, int y, int xx) {
    const int sn = s.n == 1 ? 0 : n;
    const int sc = s.c == 1 ? 0 : c;
    const int sy = s.h == 1 ? 0 : y;
    const int sx = s.w == 1 ? 0 : xx;
    return ((static_cast<std::size_t>(sn) * s.c + sc) * s.h + sy) * s.w + sx;
  };
  std::vector<T> out(target.numel());
  std::size_t i = 0;
  for (int n = 0; n < target.n; ++n)
    for (int c = 0; c < target.c; ++c)
      for (int y = 0; y < target.h; ++y)
        for (int xx = 0; xx < target.w; ++xx) out[i++] = x.values()[src_index(n, c, y, xx)];
  return Tensor<T>::from_op("broadcast_to", target, std::move(out), {x},
                            [x, target, src_index](detail::Node<T>& self) mutable {
                              T* gx = grad_ptr(x);
                              if (!gx) return;
                              std::size_t i = 0;
                              for (int n = 0; n < target.n; ++n)
                                for (int c = 0; c < target.c; ++c)
                                  for (int y = 0; y < target.h; ++y)
                                    for (int xx = 0; xx < target.w; ++xx) gx[src_index(n, c, y, xx)] += self.grad[i++];
                            });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape target) {
  if (target.numel() != x.numel()) {
    throw DimensionError("reshape: " + x.shape().str() + " to " + target.str() + " changes element count");
  }
  return Tensor<T>::from_op("reshape", target, x.values(), {x}, [x](detail::Node<T>& self) mutable {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

/// Concatenates along the channel dimension.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  Shape os = parts.front().shape();
  os.c = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != os.n || s.h != os.h || s.w != os.w) {
      throw DimensionError("concat_channels: " + s.str() + " incompatible with " + parts.front().shape().str());
    }
    os.c += s.c;
  }
  std::vector<T> out(os.numel());
  for (int n = 0; n < os.n; ++n) {
    T* dst = out.data() + static_cast<std::size_t>(n) * os.sample();
    for (const auto& p : parts) {
      const std::size_t len = p.shape().sample();
      const T* src = p.values().data() + static_cast<std::size_t>(n) * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
  return Tensor<T>::from_op("concat_channels", os, std::move(out), parts, [parts, os](detail::Node<T>& self) mutable {
    for (int n = 0; n < os.n; ++n) {
      const T* src = self.grad.data() + static_cast<std::size_t>(n) * os.sample();
      for (auto& p : parts) {
        const std::size_t len = p.shape().sample();
        if (T* gp = grad_ptr(p)) {
          T* dst = gp + static_cast<std::size_t>(n) * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        src += len;
      }
    }
  });
}

/// Selects one batch entry: x[index] as [1, C, H, W].
template <class T>
Tensor<T> select_batch(const Tensor<T>& x, int index) {
  const Shape s = x.shape();
  if (index < 0 || index >= s.n) {
    throw DimensionError("select_batch: index " + std::to_string(index) + " out of range for " + s.str());
  }
  const Shape os{1, s.c, s.h, s.w};
  const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(index * s.sample());
  std::vector<T> out(first, first + static_cast<std::ptrdiff_t>(s.sample()));
  return Tensor<T>::from_op("select_batch", os, std::move(out), {x}, [x, index, s](detail::Node<T>& self) mutable {
    T* gx = grad_ptr(x);
    if (!gx) return;
    T* dst = gx + static_cast<std::size_t>(index) * s.sample();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

/// Stacks [1,C,H,W] (or [k,C,H,W]) tensors along the batch dimension.
template <class T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_batch: no inputs");
  Shape os = parts.front().shape();
  os.n = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.c != os.c || s.h != os.h || s.w != os.w) {
      throw DimensionError("concat_batch: " + s.str() + " incompatible with " + parts.front().shape().str());
    }
    os.n += s.n;
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return Tensor<T>::from_op("concat_batch", os, std::move(out), parts, [parts](detail::Node<T>& self) mutable {
    std::size_t off = 0;
    for (auto& p : parts) {
      if (T* gp = grad_ptr(p)) {
        for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += self.grad[off + i];
      }
      off += p.numel();
    }
  });
}

/// Sum of squares of all gradient entries, for reporting.
template <class T>
double grad_sq_norm(const Tensor<T>& t) {
  double acc = 0.0;
  for (const T g : t.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  return acc;
}

}  // namespace spade
