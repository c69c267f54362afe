#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "stylenorm/image.hpp"

namespace stylenorm {

/// scale0: whole image; scale1: nominal 2x2 tiles; scale2: nominal 4x4 tiles.
enum class Scale { scale0 = 0, scale1 = 1, scale2 = 2 };

inline constexpr std::array<Scale, 3> kAllScales = {Scale::scale0, Scale::scale1, Scale::scale2};

std::string_view to_string(Scale s);
Scale parse_scale(std::string_view s);

struct TilePosition {
  int row = 0;
  int col = 0;
  bool operator==(const TilePosition&) const = default;
};

/// Tile layout for one scale. Blend weights are separable: the weight of tile
/// (r, c) at pixel (y, x) is row_weights[r][y - row_starts[r]] *
/// col_weights[c][x - col_starts[c]], already normalised so the weights of all
/// covering tiles sum to one.
struct TileGrid {
  Scale scale = Scale::scale0;
  int image_height = 0;
  int image_width = 0;
  int tile_height = 0;
  int tile_width = 0;
  int overlap = 0;
  int work_size = 512;
  std::vector<int> row_starts;
  std::vector<int> col_starts;
  std::vector<TilePosition> positions;  // row-major over (row_starts, col_starts)
  std::vector<std::vector<double>> row_weights;
  std::vector<std::vector<double>> col_weights;

  std::size_t tile_count() const { return positions.size(); }
  /// Blend weight map of tile k (tile_height x tile_width).
  Image blend(std::size_t k) const;
  /// Sum of blend weights of every covering tile at each image pixel.
  Image weight_sum() const;
};

/// Throws when overlap >= tile size or the image is smaller than a tile.
TileGrid plan_grid(int height, int width, Scale scale, int overlap, int work_size = 512);

/// Crops each tile and resamples it to work_size x work_size.
std::vector<Image> decompose(const Image& image, const TileGrid& grid);

/// Resamples tiles back to tile size and accumulates them with blend weights.
Image reconstruct(const std::vector<Image>& tiles, const TileGrid& grid);

}  // namespace stylenorm
