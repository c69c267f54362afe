#include "stylenorm/tiler.hpp"

#include <algorithm>
#include <string>

namespace stylenorm {

std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::scale0: return "scale0";
    case Scale::scale1: return "scale1";
    case Scale::scale2: return "scale2";
  }
  return "scale?";
}

Scale parse_scale(std::string_view s) {
  if (s == "scale0" || s == "0") return Scale::scale0;
  if (s == "scale1" || s == "1") return Scale::scale1;
  if (s == "scale2" || s == "2") return Scale::scale2;
  throw Error("unknown scale '" + std::string(s) + "'");
}

namespace {

int divisions(Scale s) {
  switch (s) {
    case Scale::scale0: return 1;
    case Scale::scale1: return 2;
    case Scale::scale2: return 4;
  }
  return 1;
}

std::vector<int> axis_starts(int side, int tile, int stride) {
  std::vector<int> starts{0};
  while (starts.back() + tile < side) starts.push_back(std::min(starts.back() + stride, side - tile));
  return starts;
}

// Linear ramps of width `overlap` on interior borders, normalised along the axis.
std::vector<std::vector<double>> axis_weights(int side, int tile, int overlap, const std::vector<int>& starts) {
  std::vector<std::vector<double>> w(starts.size(), std::vector<double>(tile, 1.0));
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const bool ramp_in = starts[i] > 0;
    const bool ramp_out = starts[i] + tile < side;
    for (int o = 0; o < tile; ++o) {
      double v = 1.0;
      if (ramp_in && o < overlap) v = std::min(v, double(o + 1) / double(overlap + 1));
      if (ramp_out && tile - 1 - o < overlap) v = std::min(v, double(tile - o) / double(overlap + 1));
      w[i][o] = v;
    }
  }
  std::vector<double> sum(side, 0.0);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    for (int o = 0; o < tile; ++o) sum[starts[i] + o] += w[i][o];
  }
  for (std::size_t i = 0; i < starts.size(); ++i) {
    for (int o = 0; o < tile; ++o) w[i][o] /= sum[starts[i] + o];
  }
  return w;
}

}  // namespace

TileGrid plan_grid(int height, int width, Scale scale, int overlap, int work_size) {
  if (height <= 0 || width <= 0) throw Error("plan_grid: empty image");
  if (work_size <= 0) throw Error("plan_grid: work size must be positive");
  if (overlap < 0) throw Error("plan_grid: negative overlap");
  const int k = divisions(scale);
  TileGrid g;
  g.scale = scale;
  g.image_height = height;
  g.image_width = width;
  g.tile_height = (height + k - 1) / k;
  g.tile_width = (width + k - 1) / k;
  g.overlap = scale == Scale::scale0 ? 0 : overlap;
  g.work_size = work_size;
  if (g.tile_height > height || g.tile_width > width || (k > 1 && (height < k || width < k))) {
    throw Error("plan_grid: image smaller than the tile size for " + std::string(to_string(scale)));
  }
  if (g.overlap >= std::min(g.tile_height, g.tile_width)) {
    throw Error("plan_grid: overlap " + std::to_string(overlap) + " must be smaller than the tile size " +
                std::to_string(std::min(g.tile_height, g.tile_width)));
  }
  g.row_starts = axis_starts(height, g.tile_height, g.tile_height - g.overlap);
  g.col_starts = axis_starts(width, g.tile_width, g.tile_width - g.overlap);
  g.row_weights = axis_weights(height, g.tile_height, g.overlap, g.row_starts);
  g.col_weights = axis_weights(width, g.tile_width, g.overlap, g.col_starts);
  for (int r : g.row_starts) {
    for (int c : g.col_starts) g.positions.push_back({r, c});
  }
  return g;
}

Image TileGrid::blend(std::size_t k) const {
  const std::size_t r = k / col_starts.size(), c = k % col_starts.size();
  Image out(tile_height, tile_width);
  for (int y = 0; y < tile_height; ++y) {
    for (int x = 0; x < tile_width; ++x) out.at(y, x) = row_weights[r][y] * col_weights[c][x];
  }
  return out;
}

Image TileGrid::weight_sum() const {
  Image sum(image_height, image_width);
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const Image b = blend(k);
    for (int y = 0; y < tile_height; ++y) {
      for (int x = 0; x < tile_width; ++x) sum.at(positions[k].row + y, positions[k].col + x) += b.at(y, x);
    }
  }
  return sum;
}

std::vector<Image> decompose(const Image& image, const TileGrid& grid) {
  if (image.height() != grid.image_height || image.width() != grid.image_width) {
    throw Error("decompose: grid was planned for a different image size");
  }
  std::vector<Image> tiles;
  tiles.reserve(grid.tile_count());
  for (const auto& p : grid.positions) {
    tiles.push_back(resize_bilinear(crop(image, p.row, p.col, grid.tile_height, grid.tile_width), grid.work_size,
                                    grid.work_size));
  }
  return tiles;
}

Image reconstruct(const std::vector<Image>& tiles, const TileGrid& grid) {
  if (tiles.size() != grid.tile_count()) {
    throw Error("reconstruct: expected " + std::to_string(grid.tile_count()) + " tiles, got " +
                std::to_string(tiles.size()));
  }
  Image out(grid.image_height, grid.image_width);
  const std::size_t ncols = grid.col_starts.size();
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const Image tile = resize_bilinear(tiles[k], grid.tile_height, grid.tile_width);
    const auto& rw = grid.row_weights[k / ncols];
    const auto& cw = grid.col_weights[k % ncols];
    const TilePosition p = grid.positions[k];
    for (int y = 0; y < grid.tile_height; ++y) {
      auto src = tile.row(y);
      auto dst = out.row(p.row + y);
      for (int x = 0; x < grid.tile_width; ++x) dst[p.col + x] += rw[y] * cw[x] * src[x];
    }
  }
  return out;
}

}  // namespace stylenorm
