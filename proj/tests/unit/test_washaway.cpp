// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "spade/washaway.hpp"

using namespace spade;

TEST(Washaway, UniformMasksVanishUnderInstanceNorm) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto r = washaway_report(6, 8, seed);
    ASSERT_EQ(r.instance_l2.size(), 6u);
    for (const double v : r.instance_l2) EXPECT_LT(v, 1e-5) << "seed " << seed;
  }
}

TEST(Washaway, SpadePathKeepsLabelInformation) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto r = washaway_report(6, 8, seed);
    EXPECT_GT(r.min_pairwise_spade_diff, 1e-6) << "seed " << seed;
    for (const double v : r.spade_l2) EXPECT_GT(v, 1e-6);
  }
  const WashawayProbe probe(2, 1);
  const auto a = probe.spade_path(SegMask::uniform(8, 8, 2, 0));
  const auto b = probe.spade_path(SegMask::uniform(8, 8, 2, 1));
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(Washaway, NonUniformMaskIsNegativeControl) {
  const auto r = washaway_report(6, 8, 1);
  EXPECT_GT(r.nonuniform_instance_l2, 1e-3);
}

TEST(Washaway, PathsShareConvolutionWeights) {
  // with the shared conv matched, both paths normalize the same features
  const WashawayProbe probe(3, 4);
  std::vector<int> labels(64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  const SegMask m(8, 8, 3, labels);
  const auto h = probe.features(m);
  EXPECT_EQ(h.shape(), (Shape{1, WashawayProbe::kChannels, 6, 6}));
  EXPECT_EQ(probe.instance_path(m).values(), instance_norm(h).values());
}

TEST(Washaway, DemoWritesReport) {
  const auto path = (std::filesystem::temp_directory_path() / "spade_washaway.txt").string();
  const auto r = run_washaway_demo(path, 4, 1);
  std::ifstream in(path);
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(text, r.to_text());
  EXPECT_NE(text.find("label=3 instance_l2="), std::string::npos);
  std::filesystem::remove(path);
  EXPECT_THROW(WashawayProbe(0, 1), ConfigError);
}
