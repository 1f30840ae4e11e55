// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "spade/data.hpp"
#include "spade/metrics.hpp"

using namespace spade;

namespace {

SceneSpec half_plane_spec(int res) {
  SceneSpec s;
  s.seed = 3;
  s.resolution = res;
  s.num_labels = 6;
  s.background = 2;
  s.textures = default_textures(6);
  s.shapes.push_back({5, ShapeKind::half_plane, 0, 9, res - 1, 20});
  return s;
}

}  // namespace

TEST(Palette, PairwiseDistanceAtLeastQuarter) {
  for (int L : {1, 2, 6, 8, 9, 27, 64}) {
    const auto p = palette(L);
    ASSERT_EQ(static_cast<int>(p.size()), L);
    for (int i = 0; i < L; ++i)
      for (int j = i + 1; j < L; ++j) {
        float d = 0.0f;
        for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(p[i][c] - p[j][c]));
        EXPECT_GE(d, 0.25f - 1e-6f) << L << ": " << i << "," << j;
      }
  }
  EXPECT_THROW(palette(0), ConfigError);
  EXPECT_THROW(palette(65), ConfigError);
}

TEST(Scene, HalfPlaneHasTwoLabelsAndStraightBoundary) {
  const auto m = rasterize(half_plane_spec(32));
  const auto d = m.distinct();
  EXPECT_EQ(std::set<int>(d.begin(), d.end()), (std::set<int>{2, 5}));
  // a straight boundary: in each row the shape label occupies one contiguous
  // run and its edge moves monotonically down the frame
  int prev_edge = -1;
  for (int y = 0; y < 32; ++y) {
    int transitions = 0, edge = 32;
    for (int x = 1; x < 32; ++x)
      if (m.at(y, x) != m.at(y, x - 1)) ++transitions, edge = x;
    EXPECT_LE(transitions, 1) << "row " << y;
    if (prev_edge >= 0 && transitions == 1) {
      EXPECT_GE(edge, prev_edge);
    }
    if (transitions == 1) prev_edge = edge;
  }
}

TEST(Scene, ShapesDrawnBackToFront) {
  SceneSpec s;
  s.resolution = 8;
  s.num_labels = 3;
  s.textures = default_textures(3);
  s.shapes = {{1, ShapeKind::rectangle, 0, 0, 8, 8}, {2, ShapeKind::rectangle, 2, 2, 4, 4}};
  const auto m = rasterize(s);
  EXPECT_EQ(m.at(0, 0), 1);
  EXPECT_EQ(m.at(3, 3), 2);
  s.shapes.push_back({0, ShapeKind::ellipse, 4, 4, 1, 1});
  s.shapes.push_back({1, ShapeKind::ellipse, 4, 4, 1, 1});
  EXPECT_THROW(rasterize(s), ConfigError);
}

TEST(Scene, SameSeedIsBitIdentical) {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL}) {
    const auto a = generate_scene(random_scene_spec(seed, 32, 6));
    const auto b = generate_scene(random_scene_spec(seed, 32, 6));
    EXPECT_TRUE(std::equal(a.mask.labels().begin(), a.mask.labels().end(), b.mask.labels().begin()));
    EXPECT_EQ(std::memcmp(a.image.values().data(), b.image.values().data(), a.image.numel() * sizeof(float)), 0);
  }
}

TEST(Scene, PixelsInRangeAndPaletteInjective) {
  const auto s = generate_scene(random_scene_spec(4, 32, 6));
  for (const float v : s.image.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Scene, ZeroNoiseIsRecoveredExactlyByOracle) {
  SynthOptions opt;
  opt.noise_amp = 0.0f;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = random_scene_spec(seed, 32, 6, opt);
    const auto s = generate_scene(spec);
    EXPECT_EQ(pixel_accuracy(oracle_segment(s.image, palette(6)), s.mask), 1.0) << seed;
  }
}

TEST(Scene, ZeroNoiseEqualLabelsShareColor) {
  SynthOptions opt;
  opt.noise_amp = 0.0f;
  opt.stripe_amp = 0.0f;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_scene(random_scene_spec(seed, 16, 6, opt));
    std::map<int, std::array<float, 3>> color;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const std::array<float, 3> c{s.image.at(0, 0, y, x), s.image.at(0, 1, y, x), s.image.at(0, 2, y, x)};
        const auto [it, fresh] = color.emplace(s.mask.at(y, x), c);
        if (!fresh) {
          EXPECT_EQ(it->second, c);
        }
      }
  }
}

TEST(Scene, TextureMapMustCoverLabels) {
  auto spec = random_scene_spec(1, 16, 6);
  spec.textures.pop_back();
  EXPECT_THROW(generate_scene(spec), ConfigError);
  EXPECT_THROW(random_scene_spec(1, 2, 6), ConfigError);
}

TEST(Dataset, CoversEveryLabelAndIsDeterministic) {
  DatasetMeta meta;
  meta.num_labels = 8;
  meta.synth.max_shapes = 1;
  const auto a = synthesize(meta, 6, kTrainSalt);
  const auto b = synthesize(meta, 6, kTrainSalt);
  std::set<int> seen;
  for (const auto& m : a.masks)
    for (const int l : m.distinct()) seen.insert(l);
  EXPECT_EQ(seen.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.images[i].values(), b.images[i].values());
  const auto v = synthesize(meta, 6, kValSalt);
  EXPECT_NE(v.images[0].values(), a.images[0].values());
}

TEST(Dataset, DiskRoundTripMatchesQuantizedMemory) {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "spade_test_dataset";
  fs::remove_all(root);
  DatasetMeta meta;
  meta.num_train = 5;
  meta.num_val = 3;
  meta.resolution = 16;
  write_dataset(root.string(), meta);
  const auto idx = read_index(root.string());
  EXPECT_EQ(idx.meta.master_seed, meta.master_seed);
  EXPECT_EQ(idx.train.size(), 5u);
  EXPECT_EQ(idx.val.size(), 3u);
  const auto disk = load_dataset(root.string(), "train");
  const auto mem = synthesize(meta, 5, kTrainSalt);
  ASSERT_EQ(disk.size(), mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    EXPECT_TRUE(std::equal(disk.masks[i].labels().begin(), disk.masks[i].labels().end(), mem.masks[i].labels().begin()));
    for (std::size_t j = 0; j < mem.images[i].numel(); ++j)
      EXPECT_EQ(disk.images[i].values()[j], dequantize(quantize(mem.images[i].values()[j])));
  }
  EXPECT_THROW(load_dataset(root.string(), "test"), ConfigError);
  fs::remove_all(root);
}

TEST(Dataset, StackImages) {
  DatasetMeta meta;
  meta.resolution = 8;
  const auto ds = synthesize(meta, 3, kTrainSalt);
  const auto b = stack_images(ds.images, {2, 0});
  EXPECT_EQ(b.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(b.at(0, 1, 3, 4), ds.images[2].at(0, 1, 3, 4));
  EXPECT_EQ(b.at(1, 2, 7, 0), ds.images[0].at(0, 2, 7, 0));
  EXPECT_THROW(stack_images(ds.images, {}), DimensionError);
}
