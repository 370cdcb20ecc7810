#include <cmath>
#include <limits>
#include <string>

#include "nucseg/error.hpp"
#include "nucseg/pipeline.hpp"

namespace nucseg {

namespace {

std::vector<int> axis_origins(int size, int tile, int stride) {
  if (size <= tile) return {0};
  std::vector<int> origins;
  for (int o = 0; o + tile < size; o += stride) origins.push_back(o);
  origins.push_back(size - tile);
  return origins;
}

}  // namespace

bool Tile::holds(const Point& p) const {
  const int col = static_cast<int>(std::floor(p.x));
  const int row = static_cast<int>(std::floor(p.y));
  return col >= x0 && col < x1 && row >= y0 && row < y1;
}

TileLayout plan_tiles(int width, int height, int tile, int overlap) {
  if (width < 1 || height < 1) throw InvalidArgument("plan_tiles: image dimensions must be >= 1");
  if (tile < 1) throw InvalidArgument("plan_tiles: tile size must be >= 1");
  if (overlap < 0 || overlap >= tile) {
    throw InvalidArgument("plan_tiles: overlap " + std::to_string(overlap) + " must lie in [0, " + std::to_string(tile) +
                          ")");
  }
  TileLayout layout;
  layout.tile = tile;
  layout.overlap = overlap;
  layout.image_width = width;
  layout.image_height = height;
  const int stride = tile - overlap;
  const auto xs = axis_origins(width, tile, stride);
  const auto ys = axis_origins(height, tile, stride);
  for (int y : ys) {
    for (int x : xs) {
      layout.tiles.push_back({x, y, std::min(x + tile, width), std::min(y + tile, height)});
    }
  }
  return layout;
}

std::size_t choose_tile(const TileLayout& layout, const Point& p) {
  std::size_t best = layout.tiles.size();
  double best_d = std::numeric_limits<double>::infinity();
  // Clamp so a point on the far image edge still falls in the last pixel.
  const auto px = pixel_of(p, layout.image_width, layout.image_height);
  const Point probe{px.col + 0.5, px.row + 0.5};
  for (std::size_t t = 0; t < layout.tiles.size(); ++t) {
    const Tile& tile = layout.tiles[t];
    if (!tile.holds(probe)) continue;
    const Point c = tile.center();
    const double d = (c.x - p.x) * (c.x - p.x) + (c.y - p.y) * (c.y - p.y);
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  if (best == layout.tiles.size()) {
    throw InvalidArgument("choose_tile: point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ") is not covered by any tile");
  }
  return best;
}

}  // namespace nucseg
