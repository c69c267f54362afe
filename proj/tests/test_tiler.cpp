#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "stylenorm/tiler.hpp"
#include "synthetic.hpp"

namespace stylenorm {
namespace {

Image smooth_gradient(int h, int w) {
  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x) = 0.3 + 0.2 * double(x) / w + 0.1 * double(y) / h +
                     0.2 * std::sin(2 * M_PI * x / 300.0) * std::cos(2 * M_PI * y / 500.0);
    }
  }
  return img;
}

TEST(Tiler, ScaleNames) {
  for (Scale s : kAllScales) EXPECT_EQ(parse_scale(to_string(s)), s);
  EXPECT_THROW(parse_scale("scale3"), Error);
}

TEST(Tiler, Scale1FourTiles) {
  const TileGrid g = plan_grid(2048, 2048, Scale::scale1, 0);
  EXPECT_EQ(g.positions,
            (std::vector<TilePosition>{{0, 0}, {0, 1024}, {1024, 0}, {1024, 1024}}));
  EXPECT_EQ(g.tile_height, 1024);
}

TEST(Tiler, Scale2SixteenTiles) {
  const TileGrid g = plan_grid(2048, 2048, Scale::scale2, 0);
  EXPECT_EQ(g.tile_count(), 16u);
  EXPECT_EQ(g.row_starts, (std::vector<int>{0, 512, 1024, 1536}));
  EXPECT_EQ(g.col_starts, g.row_starts);
}

TEST(Tiler, Scale2OverlapClampsLastPosition) {
  const TileGrid g = plan_grid(2048, 2048, Scale::scale2, 128);
  EXPECT_EQ(g.tile_count(), 25u);
  EXPECT_EQ(g.row_starts, (std::vector<int>{0, 384, 768, 1152, 1536}));
}

TEST(Tiler, Scale0IsSingleTile) {
  const TileGrid g = plan_grid(600, 400, Scale::scale0, 64);
  EXPECT_EQ(g.tile_count(), 1u);
  EXPECT_EQ(g.overlap, 0);
  EXPECT_EQ(g.tile_height, 600);
  EXPECT_EQ(g.tile_width, 400);
}

TEST(Tiler, InvalidGeometryIsRejected) {
  EXPECT_THROW(plan_grid(512, 512, Scale::scale2, 128), Error);  // overlap == tile
  EXPECT_THROW(plan_grid(3, 3, Scale::scale2, 0), Error);
  EXPECT_THROW(plan_grid(0, 10, Scale::scale0, 0), Error);
  EXPECT_THROW(plan_grid(64, 64, Scale::scale1, -1), Error);
}

TEST(Tiler, ConstantImageGivesConstantTiles) {
  const Image img(300, 200, 0.42);
  const TileGrid g = plan_grid(300, 200, Scale::scale2, 20, 64);
  for (const Image& t : decompose(img, g)) {
    ASSERT_EQ(t.height(), 64);
    for (double v : t.values()) EXPECT_DOUBLE_EQ(v, 0.42);
  }
}

TEST(Tiler, TilesAreExactCropsWithoutResampling) {
  const Image img = testing::random_image(256, 256, 1);
  const TileGrid g = plan_grid(256, 256, Scale::scale2, 0, 64);
  const auto tiles = decompose(img, g);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    EXPECT_EQ(tiles[k], crop(img, g.positions[k].row, g.positions[k].col, 64, 64));
  }
}

TEST(Tiler, TilesMatchCropThenResizeOracle) {
  const Image img = smooth_gradient(200, 160);
  const TileGrid g = plan_grid(200, 160, Scale::scale1, 0, 64);
  const auto tiles = decompose(img, g);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const Image c = crop(img, g.positions[k].row, g.positions[k].col, g.tile_height, g.tile_width);
    EXPECT_LE(max_abs_diff(tiles[k], testing::oracle_resize(c, 64, 64)), 1e-6);
  }
}

TEST(Tiler, RoundTripWithoutOverlapIsBitExact) {
  const Image img = testing::random_image(512, 512, 2);
  for (Scale s : kAllScales) {
    const TileGrid g = plan_grid(512, 512, s, 0, 512 >> int(s));
    EXPECT_EQ(reconstruct(decompose(img, g), g), img) << to_string(s);
  }
}

TEST(Tiler, RoundTripWithOverlapWithinTolerance) {
  const Image img = testing::random_image(1024, 1024, 3);
  const TileGrid g = plan_grid(1024, 1024, Scale::scale2, 128, 256);
  EXPECT_LE(max_abs_diff(reconstruct(decompose(img, g), g), img), 1e-6);
}

TEST(Tiler, ResampledRoundTripOnSmoothGradients) {
  // 1024 -> 512 -> 1024 per tile.
  const Image a = smooth_gradient(1024, 1024);
  const TileGrid g0 = plan_grid(1024, 1024, Scale::scale0, 0, 512);
  EXPECT_LE(max_abs_diff(reconstruct(decompose(a, g0), g0), a), 0.02);
  const Image b = smooth_gradient(2048, 2048);
  const TileGrid g1 = plan_grid(2048, 2048, Scale::scale1, 128, 512);
  EXPECT_LE(max_abs_diff(reconstruct(decompose(b, g1), g1), b), 0.02);
}

TEST(Tiler, WeightsFormAPartitionOfUnity) {
  const std::vector<std::pair<int, int>> sizes = {{512, 512}, {1024, 1024}, {2048, 2048}, {1536, 2048}, {333, 517}};
  for (auto [h, w] : sizes) {
    for (Scale s : kAllScales) {
      for (int overlap : {0, 64, 128}) {
        if (s != Scale::scale0 && overlap >= std::min(h, w) / (s == Scale::scale1 ? 2 : 4)) continue;
        const TileGrid g = plan_grid(h, w, s, overlap);
        const Image sum = g.weight_sum();
        double worst = 0.0;
        for (double v : sum.values()) worst = std::max(worst, std::abs(v - 1.0));
        EXPECT_LE(worst, 1e-6) << h << "x" << w << " " << to_string(s) << " overlap " << overlap;
      }
    }
  }
}

TEST(Tiler, ReconstructRejectsWrongTileCount) {
  const TileGrid g = plan_grid(64, 64, Scale::scale1, 0, 32);
  EXPECT_THROW(reconstruct(std::vector<Image>(3, Image(32, 32)), g), Error);
  EXPECT_THROW(decompose(Image(65, 64), g), Error);
}

}  // namespace
}  // namespace stylenorm
