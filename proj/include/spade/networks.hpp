// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "spade/layers.hpp"
#include "spade/mask.hpp"
#include "spade/norm.hpp"
#include "spade/ops.hpp"
#include "spade/rng.hpp"

namespace spade {

inline constexpr double kLeakySlope = 0.2;

/// How a residual block receives the segmentation mask.
///   spade:  SPADE in place of every normalization
///   concat: affine BatchNorm, mask concatenated to every conv input
///   plain:  affine BatchNorm, no mask
enum class CondMode { spade, concat, plain };

struct ResBlkConfig {
  int in_channels = 16;
  int out_channels = 16;
  int num_labels = 6;
  CondMode mode = CondMode::spade;
  NormKind norm = NormKind::batch;
  int mod_kernel = 3;
  int mod_hidden = 32;
  bool spectral = true;
  bool spectral_modulation = false;
};

/// Residual block: (norm -> LeakyReLU(0.2) -> conv) twice on the main path;
/// a 1x1 shortcut (norm -> conv) exists exactly when channel counts differ.
template <class T>
class ResBlk {
 public:
  ResBlk() = default;

  ResBlk(const ResBlkConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int mid = std::min(cfg.in_channels, cfg.out_channels);
    const int extra = cfg.mode == CondMode::concat ? cfg.num_labels : 0;
    conv_0_ = Conv2d<T>::same(cfg.in_channels + extra, mid, 3, rng, cfg.spectral);
    conv_1_ = Conv2d<T>::same(mid + extra, cfg.out_channels, 3, rng, cfg.spectral);
    if (learned_skip()) {
      conv_s_ = Conv2d<T>::same(cfg.in_channels + extra, cfg.out_channels, 1, rng, cfg.spectral, false);
    }
    const int chans[3] = {cfg.in_channels, mid, cfg.in_channels};
    for (int i = 0; i < 3; ++i) {
      if (i == 2 && !learned_skip()) break;
      if (cfg.mode == CondMode::spade) {
        SpadeConfig sc;
        sc.num_labels = cfg.num_labels;
        sc.channels = chans[i];
        sc.hidden = cfg.mod_hidden;
        sc.kernel = cfg.mod_kernel;
        sc.norm = cfg.norm;
        sc.spectral = cfg.spectral_modulation;
        spade_.emplace_back(sc, rng);
      } else {
        plain_.emplace_back(1, chans[i], cfg.norm);
      }
    }
  }

  bool learned_skip() const { return cfg_.in_channels != cfg_.out_channels; }
  const ResBlkConfig& config() const { return cfg_; }

  Tensor<T> operator()(const Tensor<T>& x, const MaskPyramid<T>& masks) const {
    return add(shortcut(x, masks), main_branch(x, masks));
  }

  Tensor<T> shortcut(const Tensor<T>& x, const MaskPyramid<T>& masks) const {
    if (!learned_skip()) return x;
    return conv_s_(cond(norm(2, x, masks), masks));
  }

  Tensor<T> main_branch(const Tensor<T>& x, const MaskPyramid<T>& masks) const {
    const T slope = static_cast<T>(kLeakySlope);
    Tensor<T> dx = conv_0_(cond(leaky_relu(norm(0, x, masks), slope), masks));
    return conv_1_(cond(leaky_relu(norm(1, dx, masks), slope), masks));
  }

  Conv2d<T>& conv_0() { return conv_0_; }
  Conv2d<T>& conv_1() { return conv_1_; }
  Conv2d<T>& conv_s() { return conv_s_; }
  std::vector<SpadeLayer<T>>& spade_layers() { return spade_; }

  void visit(Registry<T>& reg, const std::string& prefix) {
    conv_0_.visit(reg, prefix + ".conv_0");
    conv_1_.visit(reg, prefix + ".conv_1");
    if (learned_skip()) conv_s_.visit(reg, prefix + ".conv_s");
    static const char* names[3] = {".norm_0", ".norm_1", ".norm_s"};
    for (std::size_t i = 0; i < spade_.size(); ++i) spade_[i].visit(reg, prefix + names[i]);
    for (std::size_t i = 0; i < plain_.size(); ++i) plain_[i].visit(reg, prefix + names[i]);
  }

 private:
  Tensor<T> norm(int i, const Tensor<T>& x, const MaskPyramid<T>& masks) const {
    const auto idx = static_cast<std::size_t>(i);
    if (cfg_.mode == CondMode::spade) return spade_[idx](x, masks);
    return plain_[idx](x, 0);
  }

  Tensor<T> cond(const Tensor<T>& x, const MaskPyramid<T>& masks) const {
    if (cfg_.mode != CondMode::concat) return x;
    return concat_channels<T>({x, masks.at(x.shape().h, x.shape().w)});
  }

  ResBlkConfig cfg_;
  Conv2d<T> conv_0_;
  Conv2d<T> conv_1_;
  Conv2d<T> conv_s_;
  std::vector<SpadeLayer<T>> spade_;
  std::vector<ConditionalBatchNorm<T>> plain_;
};

enum class InputMode { noise, segmap };

/// Generator family:
///   spade:        decoder, SPADE ResBlks
///   concat:       decoder, mask concatenated before every ResBlk conv
///   encdec:       conv encoder on the mask, plain ResBlks, decoder
///   encdec_spade: as encdec with SPADE ResBlks
enum class Arch { spade, concat, encdec, encdec_spade };

inline Arch parse_arch(const std::string& s) {
  if (s == "spade") return Arch::spade;
  if (s == "concat") return Arch::concat;
  if (s == "encdec") return Arch::encdec;
  if (s == "encdec_spade") return Arch::encdec_spade;
  throw ConfigError("unknown generator arch '" + s + "'");
}

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::spade: return "spade";
    case Arch::concat: return "concat";
    case Arch::encdec: return "encdec";
    case Arch::encdec_spade: return "encdec_spade";
  }
  return "?";
}

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "noise") return InputMode::noise;
  if (s == "segmap") return InputMode::segmap;
  throw ConfigError("unknown generator input mode '" + s + "' (expected noise|segmap)");
}

inline std::string to_string(InputMode m) { return m == InputMode::noise ? "noise" : "segmap"; }

struct GeneratorConfig {
  int num_labels = 6;
  int z_dim = 64;
  int nf = 16;
  int num_upsample_stages = 3;
  InputMode input_mode = InputMode::noise;
  NormKind norm = NormKind::batch;
  int mod_kernel = 3;
  /// Hidden width of the modulation nets; 0 means 2 * nf.
  int mod_hidden = 0;
  Arch arch = Arch::spade;
  /// Extra residual blocks at the bottleneck of the encoder-decoder variants.
  int encdec_blocks = 3;
  bool spectral = true;
  bool spectral_modulation = false;

  int output_size() const { return 4 << num_upsample_stages; }
  int hidden() const { return mod_hidden > 0 ? mod_hidden : 2 * nf; }

  /// Channels at resolution level s (0 = 4x4 seed): nf * 2^(S-s), capped at 16 nf.
  int channels(int level) const {
    const int shift = std::min(num_upsample_stages - level, 4);
    return nf << std::max(shift, 0);
  }

  bool uses_z() const { return (arch == Arch::spade || arch == Arch::concat) && input_mode == InputMode::noise; }
};

template <class T>
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.num_upsample_stages < 0 || cfg.nf < 1 || cfg.num_labels < 1) throw ConfigError("generator: bad config");
    if (cfg.uses_z() && cfg.z_dim < 1) throw ConfigError("generator: z_dim must be positive in noise mode");
    const int S = cfg.num_upsample_stages;
    const bool encdec = cfg.arch == Arch::encdec || cfg.arch == Arch::encdec_spade;
    const CondMode mode = cfg.arch == Arch::spade || cfg.arch == Arch::encdec_spade ? CondMode::spade
                          : cfg.arch == Arch::concat                               ? CondMode::concat
                                                                                   : CondMode::plain;
    if (encdec) {
      stem_ = Conv2d<T>::same(cfg.num_labels, cfg.channels(S), 3, rng, cfg.spectral);
      stem_norm_ = ConditionalBatchNorm<T>(1, cfg.channels(S), cfg.norm);
      for (int l = S; l > 0; --l) {
        down_.emplace_back(cfg.channels(l), cfg.channels(l - 1), 3, 2, 1, rng, cfg.spectral);
        down_norm_.emplace_back(1, cfg.channels(l - 1), cfg.norm);
      }
      for (int i = 0; i < cfg.encdec_blocks; ++i) {
        bottleneck_.emplace_back(block_config(cfg.channels(0), cfg.channels(0), mode), rng);
      }
    } else if (cfg.input_mode == InputMode::noise) {
      fc_ = Linear<T>(cfg.z_dim, 16 * cfg.channels(0), rng, cfg.spectral);
    } else {
      fc_conv_ = Conv2d<T>::same(cfg.num_labels, cfg.channels(0), 3, rng, cfg.spectral);
    }
    for (int s = 0; s <= S; ++s) {
      blocks_.emplace_back(block_config(cfg.channels(std::max(s - 1, 0)), cfg.channels(s), mode), rng);
    }
    conv_img_ = Conv2d<T>::same(cfg.channels(S), 3, 3, rng, cfg.spectral);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  const GeneratorConfig& config() const { return cfg_; }

  /// Masks must hold levels 0..num_upsample_stages. z is [N, z_dim, 1, 1]
  /// in noise mode and ignored otherwise.
  Tensor<T> operator()(const Tensor<T>& z, const MaskPyramid<T>& masks) const {
    const int S = cfg_.num_upsample_stages;
    const int size = cfg_.output_size();
    const T slope = static_cast<T>(kLeakySlope);
    const int n = masks.batch();
    if (masks.full().shape().h != size || masks.full().shape().w != size) {
      throw ConfigError("generator: mask is " + masks.full().shape().str() + ", config produces " +
                        std::to_string(size) + "x" + std::to_string(size));
    }
    Tensor<T> x;
    if (cfg_.arch == Arch::encdec || cfg_.arch == Arch::encdec_spade) {
      x = leaky_relu(stem_norm_(stem_(masks.full()), 0), slope);
      for (std::size_t i = 0; i < down_.size(); ++i) x = leaky_relu(down_norm_[i](down_[i](x), 0), slope);
      for (const auto& b : bottleneck_) x = b(x, masks);
    } else if (cfg_.input_mode == InputMode::noise) {
      if (!z.defined() || z.shape().n != n || z.shape().sample() != static_cast<std::size_t>(cfg_.z_dim)) {
        throw DimensionError("generator: z must be [" + std::to_string(n) + "," + std::to_string(cfg_.z_dim) +
                             ",1,1]");
      }
      x = reshape(fc_(z), Shape{n, cfg_.channels(0), 4, 4});
    } else {
      x = fc_conv_(masks.at(4, 4));
    }
    for (int s = 0; s <= S; ++s) {
      x = blocks_[static_cast<std::size_t>(s)](x, masks);
      if (s < S) x = nearest_upsample(x, 2);
    }
    return tanh(conv_img_(leaky_relu(x, slope)));
  }

  std::vector<ResBlk<T>>& blocks() { return blocks_; }

  Registry<T> registry() {
    Registry<T> reg;
    if (cfg_.arch == Arch::encdec || cfg_.arch == Arch::encdec_spade) {
      stem_.visit(reg, "stem");
      stem_norm_.visit(reg, "stem_norm");
      for (std::size_t i = 0; i < down_.size(); ++i) {
        down_[i].visit(reg, "down_" + std::to_string(i));
        down_norm_[i].visit(reg, "down_norm_" + std::to_string(i));
      }
      for (std::size_t i = 0; i < bottleneck_.size(); ++i) bottleneck_[i].visit(reg, "bottleneck_" + std::to_string(i));
    } else if (cfg_.input_mode == InputMode::noise) {
      fc_.visit(reg, "fc");
    } else {
      fc_conv_.visit(reg, "fc");
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(reg, "block_" + std::to_string(i));
    conv_img_.visit(reg, "conv_img");
    return reg;
  }

  std::size_t param_count() { return registry().param_count(); }

 private:
  ResBlkConfig block_config(int in, int out, CondMode mode) const {
    ResBlkConfig b;
    b.in_channels = in;
    b.out_channels = out;
    b.num_labels = cfg_.num_labels;
    b.mode = mode;
    b.norm = cfg_.norm;
    b.mod_kernel = cfg_.mod_kernel;
    b.mod_hidden = cfg_.hidden();
    b.spectral = cfg_.spectral;
    b.spectral_modulation = cfg_.spectral_modulation;
    return b;
  }

  GeneratorConfig cfg_;
  Linear<T> fc_;
  Conv2d<T> fc_conv_;
  Conv2d<T> stem_;
  ConditionalBatchNorm<T> stem_norm_;
  std::vector<Conv2d<T>> down_;
  std::vector<ConditionalBatchNorm<T>> down_norm_;
  std::vector<ResBlk<T>> bottleneck_;
  std::vector<ResBlk<T>> blocks_;
  Conv2d<T> conv_img_;
};

struct DiscriminatorConfig {
  int num_labels = 6;
  int image_channels = 3;
  int ndf = 16;
  int n_layers = 3;
  int num_scales = 2;
  bool spectral = true;
};

template <class T>
struct DiscOutput {
  /// features[scale][layer]: activations after each stride-2 block.
  std::vector<std::vector<Tensor<T>>> features;
  /// logits[scale]: patch logits map [N, 1, h, w].
  std::vector<Tensor<T>> logits;
};

/// Multi-scale patch discriminator on concat(one-hot mask, image). Each
/// scale: n_layers stride-2 3x3 convs (InstanceNorm after all but the
/// first, LeakyReLU 0.2), then a 3x3 conv to one logit channel. The input
/// is 2x average-pooled between scales.
template <class T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.num_scales < 1 || cfg.n_layers < 1) throw ConfigError("discriminator: need >= 1 scale and layer");
    for (int s = 0; s < cfg.num_scales; ++s) {
      std::vector<Conv2d<T>> convs;
      int cin = cfg.num_labels + cfg.image_channels;
      for (int l = 0; l < cfg.n_layers; ++l) {
        const int cout = cfg.ndf << std::min(l, 3);
        convs.emplace_back(cin, cout, 3, 2, 1, rng, cfg.spectral);
        cin = cout;
      }
      convs.push_back(Conv2d<T>::same(cin, 1, 3, rng, cfg.spectral));
      scales_.push_back(std::move(convs));
    }
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  const DiscriminatorConfig& config() const { return cfg_; }

  DiscOutput<T> operator()(const Tensor<T>& image, const Tensor<T>& onehot) const {
    if (image.shape().c != cfg_.image_channels || onehot.shape().c != cfg_.num_labels) {
      throw DimensionError("discriminator: image " + image.shape().str() + " / mask " + onehot.shape().str() +
                           " channel counts do not match config");
    }
    const T slope = static_cast<T>(kLeakySlope);
    DiscOutput<T> out;
    Tensor<T> input = concat_channels<T>({onehot, image});
    for (int s = 0; s < cfg_.num_scales; ++s) {
      if (s > 0) input = avg_pool2(input);
      const auto& convs = scales_[static_cast<std::size_t>(s)];
      std::vector<Tensor<T>> feats;
      Tensor<T> x = input;
      for (int l = 0; l < cfg_.n_layers; ++l) {
        x = convs[static_cast<std::size_t>(l)](x);
        if (l > 0) x = instance_norm(x);
        x = leaky_relu(x, slope);
        feats.push_back(x);
      }
      out.logits.push_back(convs.back()(x));
      out.features.push_back(std::move(feats));
    }
    return out;
  }

  Registry<T> registry() {
    Registry<T> reg;
    for (std::size_t s = 0; s < scales_.size(); ++s) {
      for (std::size_t l = 0; l < scales_[s].size(); ++l) {
        scales_[s][l].visit(reg, "scale_" + std::to_string(s) + ".conv_" + std::to_string(l));
      }
    }
    return reg;
  }

  std::size_t param_count() { return registry().param_count(); }

 private:
  DiscriminatorConfig cfg_;
  std::vector<std::vector<Conv2d<T>>> scales_;
};

struct EncoderConfig {
  int image_size = 32;
  int nf = 16;
  int z_dim = 64;
  bool spectral = true;

  /// log2(size) - 2 stride-2 stages, ending at 4x4.
  int stages() const {
    int s = 0;
    for (int m = image_size; m > 4; m /= 2) ++s;
    return s;
  }
};

template <class T>
struct Posterior {
  Tensor<T> mu;
  Tensor<T> logvar;
};

/// Image encoder for q(z|x): stride-2 3x3 convs with InstanceNorm and
/// LeakyReLU down to 4x4, then two linear heads for mean and log-variance.
template <class T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int size = cfg.image_size;
    if (size < 16 || (size & (size - 1)) != 0) {
      throw ConfigError("encoder: image size must be a power of two >= 16, got " + std::to_string(size));
    }
    int cin = 3;
    for (int i = 0; i < cfg.stages(); ++i) {
      const int cout = cfg.nf << std::min(i, 3);
      convs_.emplace_back(cin, cout, 3, 2, 1, rng, cfg.spectral);
      cin = cout;
    }
    flat_ = cin * 16;
    fc_mu_ = Linear<T>(flat_, cfg.z_dim, rng, cfg.spectral);
    fc_var_ = Linear<T>(flat_, cfg.z_dim, rng, cfg.spectral);
  }

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  const EncoderConfig& config() const { return cfg_; }

  Posterior<T> operator()(const Tensor<T>& image) const {
    const Shape s = image.shape();
    if (s.h != s.w) throw ConfigError("encoder: image must be square, got " + s.str());
    if (s.h != cfg_.image_size || s.c != 3) {
      throw ConfigError("encoder: expects [N,3," + std::to_string(cfg_.image_size) + "," +
                        std::to_string(cfg_.image_size) + "], got " + s.str());
    }
    const T slope = static_cast<T>(kLeakySlope);
    Tensor<T> x = image;
    for (const auto& c : convs_) x = leaky_relu(instance_norm(c(x)), slope);
    return {fc_mu_(x), fc_var_(x)};
  }

  Registry<T> registry() {
    Registry<T> reg;
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].visit(reg, "conv_" + std::to_string(i));
    fc_mu_.visit(reg, "fc_mu");
    fc_var_.visit(reg, "fc_var");
    return reg;
  }

  std::size_t param_count() { return registry().param_count(); }

 private:
  EncoderConfig cfg_;
  std::vector<Conv2d<T>> convs_;
  Linear<T> fc_mu_;
  Linear<T> fc_var_;
  int flat_ = 0;
};

/// Frozen, seed-fixed random conv stack used by the perceptual loss and
/// the FD* statistics. Stages: 3x3 conv + ReLU with widths 16, 32, 32, 64
/// and strides 1, 2, 2, 2. Parameters never require gradients; gradients
/// still flow to the input.
template <class T>
class FeatureNet {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eed0f3a7u;

  explicit FeatureNet(std::uint64_t seed = kDefaultSeed) {
    Rng rng(seed);
    const int widths[4] = {16, 32, 32, 64};
    const int strides[4] = {1, 2, 2, 2};
    int cin = 3;
    for (int i = 0; i < 4; ++i) {
      convs_.emplace_back(cin, widths[i], 3, strides[i], 1, rng, false);
      cin = widths[i];
    }
    for (auto& c : convs_) {
      c.weight().raw().set_requires_grad(false);
      // small positive bias keeps ReLU units from going dead on dark inputs
      c.bias() = Tensor<T>::full(Shape{1, c.out_channels(), 1, 1}, T(0.01));
    }
  }

  int num_stages() const { return static_cast<int>(convs_.size()); }
  int feature_dim() const { return convs_.back().out_channels(); }

  std::vector<Tensor<T>> operator()(const Tensor<T>& image) const {
    std::vector<Tensor<T>> out;
    Tensor<T> x = image;
    for (const auto& c : convs_) {
      x = relu(c(x));
      out.push_back(x);
    }
    return out;
  }

 private:
  std::vector<Conv2d<T>> convs_;
};

}  // namespace spade
