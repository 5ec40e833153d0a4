// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cgdrcn/densitygen.hpp"
#include "support.hpp"

namespace cgdrcn {
namespace {

using testing::oracle_density;

std::vector<HeadAnnotation> random_heads(int n, int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, w);
  std::uniform_real_distribution<double> uy(0.0, h);
  std::uniform_real_distribution<double> size(3.0, 40.0);
  std::vector<HeadAnnotation> heads(static_cast<std::size_t>(n));
  for (auto& hd : heads) {
    hd.x = ux(rng);
    hd.y = uy(rng);
    hd.width = hd.height = size(rng);
  }
  return heads;
}

TEST(DensityMap, GridDimsAreCeilOfImageOverScale) {
  const std::vector<HeadAnnotation> none;
  const DensityMap m = generate_density_map(none, 100, 70, 4.0, 8);
  EXPECT_EQ(m.rows(), 9);
  EXPECT_EQ(m.cols(), 13);
  EXPECT_EQ(m.scale, 8);
  EXPECT_DOUBLE_EQ(m.count(), 0.0);
}

TEST(DensityMap, SingleCenteredHeadIsSymmetricWithUnitMass) {
  HeadAnnotation h;
  h.x = 32;
  h.y = 32;
  const std::vector<HeadAnnotation> heads{h};
  const DensityMap m = generate_density_map(heads, 64, 64, 4.0, 1);
  EXPECT_NEAR(m.count(), 1.0, 1e-12);
  for (int d = 0; d < 12; ++d) {
    EXPECT_NEAR(m.values.at(0, 31 - d, 32), m.values.at(0, 32 + d, 32), 1e-15);
    EXPECT_NEAR(m.values.at(0, 32, 31 - d), m.values.at(0, 32, 32 + d), 1e-15);
  }
  // Support is the truncation window: |offset| <= 12 px around the head.
  EXPECT_DOUBLE_EQ(m.values.at(0, 32, 32 + 13), 0.0);
  EXPECT_GT(m.values.at(0, 32, 32 + 11), 0.0);
}

TEST(DensityMap, MatchesBruteForceOracle) {
  for (int scale : {1, 4, 8, 16, 32}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto heads = random_heads(25, 150, 97, seed);
      const DensityMap m = generate_density_map(heads, 150, 97, 4.0, scale);
      const Tensor o = oracle_density(heads, 150, 97, 4.0, scale);
      ASSERT_EQ(m.values.shape(), o.shape());
      for (std::size_t i = 0; i < o.size(); ++i) ASSERT_NEAR(m.values[i], o[i], 1e-12) << "scale " << scale;
    }
  }
}

TEST(DensityMap, MassEqualsCountAtEveryLevel) {
  for (int n : {0, 1, 17, 300}) {
    const auto heads = random_heads(n, 256, 192, static_cast<std::uint64_t>(n));
    for (const auto& [level, map] : pyramid_targets(heads, 256, 192, DensityConfig{})) {
      EXPECT_NEAR(map.count(), n, 1e-9) << "level " << level;
      EXPECT_EQ(map.scale, level_scale(level));
    }
  }
}

TEST(DensityMap, HeadsOnTheBorderKeepTheirMass) {
  HeadAnnotation corner;
  corner.x = 64;
  corner.y = 0;
  const std::vector<HeadAnnotation> heads{corner};
  for (int scale : {1, 4, 32}) EXPECT_NEAR(generate_density_map(heads, 64, 64, 6.0, scale).count(), 1.0, 1e-12);
}

TEST(DensityMap, TranslationEquivariance) {
  std::vector<HeadAnnotation> heads = random_heads(6, 40, 40, 9);
  for (auto& h : heads) {
    h.x += 40;
    h.y += 40;
  }
  const DensityMap a = generate_density_map(heads, 160, 160, 3.0, 4);
  for (auto& h : heads) {
    h.x += 24;
    h.y += 8;
  }
  const DensityMap b = generate_density_map(heads, 160, 160, 3.0, 4);
  for (int r = 0; r + 2 < a.rows(); ++r)
    for (int c = 0; c + 6 < a.cols(); ++c) EXPECT_NEAR(a.values.at(0, r, c), b.values.at(0, r + 2, c + 6), 1e-15);
}

TEST(DensityMap, LargerSigmaLowersThePeak) {
  HeadAnnotation h;
  h.x = 50.5;
  h.y = 50.5;
  const std::vector<HeadAnnotation> heads{h};
  double previous = 2.0;
  for (double sigma : {1.0, 2.0, 4.0, 8.0}) {
    const double peak = generate_density_map(heads, 101, 101, sigma, 1).values.at(0, 50, 50);
    EXPECT_LT(peak, previous);
    previous = peak;
  }
}

TEST(DensityMap, TinySigmaPutsMassInTheHostCell) {
  HeadAnnotation h;
  h.x = 10.3;
  h.y = 5.9;
  const std::vector<HeadAnnotation> heads{h};
  const DensityMap m = generate_density_map(heads, 32, 32, 1e-3, 4);
  EXPECT_NEAR(m.values.at(0, 1, 2), 1.0, 1e-12);
  EXPECT_NEAR(m.count(), 1.0, 1e-12);
}

TEST(DensityMap, AdaptiveSigmaFollowsHeadSize) {
  HeadAnnotation h;
  h.width = 20;
  h.height = 10;
  EXPECT_DOUBLE_EQ(adaptive_sigma(h), 6.0);
  h.width = h.height = 1;
  EXPECT_DOUBLE_EQ(adaptive_sigma(h), 2.0);
  h.width = 200;
  EXPECT_DOUBLE_EQ(adaptive_sigma(h), 15.0);
  const auto heads = random_heads(20, 128, 128, 4);
  const DensityMap m = generate_density_map(heads, 128, 128, DensityConfig{4.0, SigmaMode::adaptive}, 4);
  EXPECT_NEAR(m.count(), 20.0, 1e-10);
}

TEST(DensityMap, InvalidInputsThrow) {
  const std::vector<HeadAnnotation> none;
  EXPECT_THROW(generate_density_map(none, 64, 64, 0.0, 4), DensityError);
  EXPECT_THROW(generate_density_map(none, 64, 64, -1.0, 4), DensityError);
  EXPECT_THROW(generate_density_map(none, 64, 64, 4.0, 3), DensityError);
  EXPECT_THROW(generate_density_map(none, 0, 64, 4.0, 4), DensityError);
}

TEST(DensityBinary, HeaderAndRoundTrip) {
  const auto heads = random_heads(10, 64, 48, 3);
  const DensityMap m = generate_density_map(heads, 64, 48, 4.0, 4);
  std::stringstream buf;
  write_density_binary(buf, m);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 16u + 4u * m.values.size());
  EXPECT_EQ(bytes.substr(0, 8), std::string(kDensityMagic, 8));
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 12);  // rows, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 16);  // cols
  const DensityMap back = read_density_binary(buf);
  ASSERT_EQ(back.values.shape(), m.values.shape());
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(m.values[i])));
  }
  std::istringstream junk("NOTADMAP........");
  EXPECT_THROW(read_density_binary(junk), DensityError);
}

}  // namespace
}  // namespace cgdrcn
