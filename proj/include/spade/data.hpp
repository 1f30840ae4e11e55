// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spade/mask.hpp"
#include "spade/pnm.hpp"
#include "spade/rng.hpp"
#include "spade/tensor.hpp"

namespace spade {

using Rgb = std::array<float, 3>;

/// Appearance of one label, in [0, 1] color space.
struct Texture {
  Rgb base{};
  float noise_amp = 0.03f;
  float stripe_amp = 0.03f;
  int stripe_period = 4;
  /// 0: stripes vary along x, 1: along y, 2: along x + y.
  int stripe_axis = 0;
};

enum class ShapeKind { rectangle, ellipse, half_plane };

/// Integer geometry, interpreted per kind:
///   rectangle:  rows [a, c), cols [b, d)
///   ellipse:    center (a, b) as (row, col), radii (c, d) as (ry, rx)
///   half_plane: pixels strictly left of the directed line (b, a) -> (d, c)
struct ShapeSpec {
  int label = 0;
  ShapeKind kind = ShapeKind::rectangle;
  int a = 0, b = 0, c = 0, d = 0;

  bool contains(int y, int x) const {
    switch (kind) {
      case ShapeKind::rectangle: return y >= a && y < c && x >= b && x < d;
      case ShapeKind::ellipse: {
        const std::int64_t dy = y - a, dx = x - b, ry = c, rx = d;
        return dy * dy * rx * rx + dx * dx * ry * ry <= rx * rx * ry * ry;
      }
      case ShapeKind::half_plane: {
        const std::int64_t cross = static_cast<std::int64_t>(d - b) * (y - a) - static_cast<std::int64_t>(c - a) * (x - b);
        return cross > 0;
      }
    }
    return false;
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int resolution = 32;
  int num_labels = 6;
  int background = 0;
  /// Drawn back to front over the background.
  std::vector<ShapeSpec> shapes;
  std::vector<Texture> textures;
  /// Per-scene global color offset added to every pixel.
  Rgb tint{};
};

struct SynthOptions {
  float noise_amp = 0.03f;
  float stripe_amp = 0.03f;
  float tint_amp = 0.08f;
  int max_shapes = 3;
};

/// Base colors with pairwise L-infinity distance >= 0.25. Up to 8 labels
/// use corners of {0.15, 0.85}^3; beyond that a q^3 grid on [0.1, 0.9]
/// with q = ceil(cbrt(L)).
inline std::vector<Rgb> palette(int num_labels) {
  if (num_labels < 1) throw ConfigError("palette: num_labels must be positive");
  if (num_labels > 64) throw ConfigError("palette: at most 64 labels keep base colors 0.25 apart");
  std::vector<Rgb> out;
  if (num_labels <= 8) {
    static constexpr int kOrder[8] = {0, 7, 1, 6, 2, 5, 3, 4};
    for (int i = 0; i < num_labels; ++i) {
      const int k = kOrder[i];
      out.push_back({k & 4 ? 0.85f : 0.15f, k & 2 ? 0.85f : 0.15f, k & 1 ? 0.85f : 0.15f});
    }
    return out;
  }
  int q = 1;
  while (q * q * q < num_labels) ++q;
  const float step = 0.8f / static_cast<float>(q - 1);
  for (int i = 0; i < num_labels; ++i) {
    out.push_back({0.1f + step * static_cast<float>(i / (q * q)), 0.1f + step * static_cast<float>((i / q) % q),
                   0.1f + step * static_cast<float>(i % q)});
  }
  return out;
}

inline std::vector<Texture> default_textures(int num_labels, const SynthOptions& opt = {}) {
  std::vector<Texture> t;
  const auto colors = palette(num_labels);
  for (int l = 0; l < num_labels; ++l) {
    t.push_back({colors[static_cast<std::size_t>(l)], opt.noise_amp, opt.stripe_amp, 3 + l % 4, l % 3});
  }
  return t;
}

/// Random layout: a background label plus 1..max_shapes shapes with
/// distinct labels, and a tint drawn from [-tint_amp, tint_amp]^3.
inline SceneSpec random_scene_spec(std::uint64_t seed, int resolution, int num_labels, const SynthOptions& opt = {}) {
  if (resolution < 4) throw ConfigError("scene resolution must be >= 4");
  SceneSpec spec;
  spec.seed = seed;
  spec.resolution = resolution;
  spec.num_labels = num_labels;
  spec.textures = default_textures(num_labels, opt);
  Rng rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(num_labels));
  for (int l = 0; l < num_labels; ++l) labels[static_cast<std::size_t>(l)] = l;
  rng.shuffle(labels.begin(), labels.end());
  spec.background = labels[0];
  const int R = resolution;
  const int max_shapes = std::min(opt.max_shapes, num_labels - 1);
  const int count = max_shapes < 1 ? 0 : rng.uniform_int(1, max_shapes);
  for (int i = 0; i < count; ++i) {
    ShapeSpec s;
    s.label = labels[static_cast<std::size_t>(i + 1)];
    s.kind = static_cast<ShapeKind>(rng.below(3));
    switch (s.kind) {
      case ShapeKind::rectangle: {
        const int h = rng.uniform_int(R / 4, R / 2);
        const int w = rng.uniform_int(R / 4, R / 2);
        s.a = rng.uniform_int(0, R - h);
        s.b = rng.uniform_int(0, R - w);
        s.c = s.a + h;
        s.d = s.b + w;
        break;
      }
      case ShapeKind::ellipse:
        s.a = rng.uniform_int(R / 4, R - 1 - R / 4);
        s.b = rng.uniform_int(R / 4, R - 1 - R / 4);
        s.c = rng.uniform_int(R / 8 + 1, R / 3);
        s.d = rng.uniform_int(R / 8 + 1, R / 3);
        break;
      case ShapeKind::half_plane: {
        // a line crossing the frame between opposite borders
        const int p0 = rng.uniform_int(R / 4, R - 1 - R / 4);
        const int p1 = rng.uniform_int(R / 4, R - 1 - R / 4);
        const bool horizontal = rng.below(2) == 0;
        const bool flip = rng.below(2) == 0;
        if (horizontal) {
          s.a = p0, s.b = 0, s.c = p1, s.d = R - 1;
        } else {
          s.a = 0, s.b = p0, s.c = R - 1, s.d = p1;
        }
        if (flip) std::swap(s.a, s.c), std::swap(s.b, s.d);
        break;
      }
    }
    spec.shapes.push_back(s);
  }
  for (auto& t : spec.tint) t = (rng.uniform24() * 2.0f - 1.0f) * opt.tint_amp;
  return spec;
}

struct Scene {
  SegMask mask;
  /// [1, 3, H, W] in [-1, 1].
  Tensor<float> image;
};

namespace detail {

/// Triangle wave in [-1, 1] with integer period.
inline float triangle_wave(int coord, int period) {
  const int t = ((coord % period) + period) % period;
  const int folded = std::abs(2 * t - period);
  return static_cast<float>(folded) * (2.0f / static_cast<float>(period)) - 1.0f;
}

}  // namespace detail

inline SegMask rasterize(const SceneSpec& spec) {
  if (static_cast<int>(spec.shapes.size()) > spec.num_labels) {
    throw ConfigError("scene has " + std::to_string(spec.shapes.size()) + " shapes but only " +
                      std::to_string(spec.num_labels) + " labels");
  }
  const int R = spec.resolution;
  std::vector<int> labels(static_cast<std::size_t>(R) * R, spec.background);
  for (const auto& s : spec.shapes) {
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x)
        if (s.contains(y, x)) labels[static_cast<std::size_t>(y) * R + x] = s.label;
  }
  return SegMask(R, R, spec.num_labels, std::move(labels));
}

/// Pixel = base + tint + stripe + noise in [0, 1], mapped to 2v - 1 and
/// clamped to [-1, 1]. Noise is an Irwin-Hall draw per (pixel, channel) so
/// only IEEE +, -, *, / are involved.
inline Scene generate_scene(const SceneSpec& spec) {
  if (static_cast<int>(spec.textures.size()) != spec.num_labels) {
    throw ConfigError("scene texture map has " + std::to_string(spec.textures.size()) + " entries for " +
                      std::to_string(spec.num_labels) + " labels");
  }
  Scene scene{rasterize(spec), Tensor<float>(Shape{1, 3, spec.resolution, spec.resolution})};
  Rng noise(spec.seed ^ 0xA5A5A5A5DEADBEEFULL);
  const int R = spec.resolution;
  auto& v = scene.image.values();
  const std::size_t plane = static_cast<std::size_t>(R) * R;
  for (int y = 0; y < R; ++y) {
    for (int x = 0; x < R; ++x) {
      const Texture& t = spec.textures[static_cast<std::size_t>(scene.mask.at(y, x))];
      const int coord = t.stripe_axis == 0 ? x : (t.stripe_axis == 1 ? y : x + y);
      const float stripe = t.stripe_amp * detail::triangle_wave(coord, t.stripe_period);
      for (int c = 0; c < 3; ++c) {
        const float n = noise.irwin_hall();
        const float val = t.base[static_cast<std::size_t>(c)] + spec.tint[static_cast<std::size_t>(c)] + stripe +
                          t.noise_amp * n;
        v[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * R + x] =
            std::clamp(val * 2.0f - 1.0f, -1.0f, 1.0f);
      }
    }
  }
  return scene;
}

/// Scene seed for index i under a master seed; attempt > 0 resamples.
inline std::uint64_t scene_seed(std::uint64_t master, std::uint64_t index, std::uint64_t attempt = 0) {
  Rng r(master ^ (index * 0x9E3779B97F4A7C15ULL) ^ (attempt * 0xC2B2AE3D27D4EB4FULL));
  return r.next();
}

struct DatasetMeta {
  std::uint64_t master_seed = 1;
  int num_labels = 6;
  int resolution = 32;
  int num_train = 480;
  int num_val = 64;
  SynthOptions synth;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<SegMask> masks;
  std::vector<Tensor<float>> images;

  std::size_t size() const { return masks.size(); }
};

/// Generates `count` scenes; when some label never appears, trailing scenes
/// are resampled (bounded attempts) until every label is covered.
inline Dataset synthesize(const DatasetMeta& meta, int count, std::uint64_t split_salt) {
  Dataset ds;
  ds.meta = meta;
  std::vector<std::uint64_t> attempts(static_cast<std::size_t>(count), 0);
  const std::uint64_t master = meta.master_seed ^ split_salt;
  auto make = [&](int i) {
    const auto spec = random_scene_spec(scene_seed(master, static_cast<std::uint64_t>(i), attempts[static_cast<std::size_t>(i)]),
                                        meta.resolution, meta.num_labels, meta.synth);
    return generate_scene(spec);
  };
  for (int i = 0; i < count; ++i) {
    Scene s = make(i);
    ds.masks.push_back(std::move(s.mask));
    ds.images.push_back(std::move(s.image));
  }
  auto missing = [&] {
    std::vector<bool> seen(static_cast<std::size_t>(meta.num_labels), false);
    for (const auto& m : ds.masks)
      for (const int l : m.distinct()) seen[static_cast<std::size_t>(l)] = true;
    return std::find(seen.begin(), seen.end(), false) != seen.end();
  };
  for (int round = 0; count > 0 && missing(); ++round) {
    if (round > 64 * count) throw std::runtime_error("synthesize: could not cover every label");
    const int i = count - 1 - round % count;
    ++attempts[static_cast<std::size_t>(i)];
    Scene s = make(i);
    ds.masks[static_cast<std::size_t>(i)] = std::move(s.mask);
    ds.images[static_cast<std::size_t>(i)] = std::move(s.image);
  }
  return ds;
}

inline constexpr std::uint64_t kTrainSalt = 0;
inline constexpr std::uint64_t kValSalt = 0x76616C5F73706C74ULL;

namespace detail {

inline std::string pair_stem(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return buf;
}

}  // namespace detail

/// Writes data/{train,val}/NNNNN.{ppm,pgm} plus index.txt under root.
inline void write_dataset(const std::string& root, const DatasetMeta& meta) {
  namespace fs = std::filesystem;
  std::ostringstream idx;
  idx << "# synthetic (image, mask) pairs; regenerate with the same master_seed\n"
      << "master_seed = " << meta.master_seed << "\n"
      << "num_labels = " << meta.num_labels << "\n"
      << "resolution = " << meta.resolution << "\n"
      << "num_train = " << meta.num_train << "\n"
      << "num_val = " << meta.num_val << "\n"
      << "noise_amp = " << meta.synth.noise_amp << "\n"
      << "stripe_amp = " << meta.synth.stripe_amp << "\n"
      << "tint_amp = " << meta.synth.tint_amp << "\n"
      << "max_shapes = " << meta.synth.max_shapes << "\n";
  const std::pair<const char*, std::pair<int, std::uint64_t>> splits[2] = {{"train", {meta.num_train, kTrainSalt}},
                                                                          {"val", {meta.num_val, kValSalt}}};
  for (const auto& [name, cfg] : splits) {
    fs::create_directories(fs::path(root) / name);
    const Dataset ds = synthesize(meta, cfg.first, cfg.second);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::string stem = std::string(name) + "/" + detail::pair_stem(static_cast<int>(i));
      save_pair((fs::path(root) / (stem + ".ppm")).string(), (fs::path(root) / (stem + ".pgm")).string(), ds.masks[i],
                ds.images[i]);
      idx << "pair " << stem << ".ppm " << stem << ".pgm\n";
    }
  }
  std::ofstream out(fs::path(root) / "index.txt");
  if (!out) throw std::runtime_error("cannot write index.txt under '" + root + "'");
  out << idx.str();
}

struct DatasetIndex {
  DatasetMeta meta;
  std::vector<std::pair<std::string, std::string>> train;
  std::vector<std::pair<std::string, std::string>> val;
};

inline DatasetIndex read_index(const std::string& root) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(root) / "index.txt");
  if (!in) throw std::runtime_error("no index.txt under '" + root + "'");
  DatasetIndex idx;
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "pair") {
      std::string img, mask;
      if (!(ls >> img >> mask)) throw std::runtime_error("index.txt:" + std::to_string(lineno) + ": malformed pair line");
      const bool is_train = img.rfind("train/", 0) == 0;
      (is_train ? idx.train : idx.val).emplace_back((fs::path(root) / img).string(), (fs::path(root) / mask).string());
      continue;
    }
    std::string eq, value;
    if (!(ls >> eq >> value) || eq != "=") throw std::runtime_error("index.txt:" + std::to_string(lineno) + ": expected key = value");
    kv[first] = value;
  }
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error(std::string("index.txt: missing key ") + k);
    return it->second;
  };
  idx.meta.master_seed = std::stoull(get("master_seed"));
  idx.meta.num_labels = std::stoi(get("num_labels"));
  idx.meta.resolution = std::stoi(get("resolution"));
  idx.meta.num_train = std::stoi(get("num_train"));
  idx.meta.num_val = std::stoi(get("num_val"));
  idx.meta.synth.noise_amp = std::stof(get("noise_amp"));
  idx.meta.synth.stripe_amp = std::stof(get("stripe_amp"));
  idx.meta.synth.tint_amp = std::stof(get("tint_amp"));
  idx.meta.synth.max_shapes = std::stoi(get("max_shapes"));
  return idx;
}

/// Loads one split ("train" or "val") from disk.
inline Dataset load_dataset(const std::string& root, const std::string& split) {
  if (split != "train" && split != "val") throw ConfigError("unknown dataset split '" + split + "'");
  const DatasetIndex idx = read_index(root);
  const auto& pairs = split == "train" ? idx.train : idx.val;
  Dataset ds;
  ds.meta = idx.meta;
  for (const auto& [img, mask] : pairs) {
    ImagePair p = load_pair(img, mask, idx.meta.num_labels);
    if (p.mask.height() != idx.meta.resolution || p.mask.width() != idx.meta.resolution) {
      throw DimensionError("'" + mask + "' does not match the indexed resolution");
    }
    ds.masks.push_back(std::move(p.mask));
    ds.images.push_back(std::move(p.image));
  }
  return ds;
}

/// Stacks images [1,3,H,W] at the given indices into [B,3,H,W].
inline Tensor<float> stack_images(const std::vector<Tensor<float>>& images, const std::vector<std::size_t>& which) {
  if (which.empty()) throw DimensionError("stack_images: empty selection");
  const Shape one = images[which.front()].shape();
  Tensor<float> out(Shape{static_cast<int>(which.size()), one.c, one.h, one.w});
  for (std::size_t i = 0; i < which.size(); ++i) {
    const auto& src = images[which[i]].values();
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * one.sample()));
  }
  return out;
}

}  // namespace spade
