#include "nucseg/segmentors.hpp"

#include <set>
#include <string>

#include "json.hpp"
#include "nucseg/error.hpp"
#include "nucseg/io.hpp"

namespace nucseg {

namespace {

void check_gt_covers(const InstanceMap& gt, const Tile& tile) {
  if (tile.x0 < 0 || tile.y0 < 0 || tile.x1 > gt.width || tile.y1 > gt.height) {
    throw InvalidArgument("tile [" + std::to_string(tile.x0) + "," + std::to_string(tile.x1) + ")x[" +
                          std::to_string(tile.y0) + "," + std::to_string(tile.y1) + ") exceeds the " +
                          std::to_string(gt.width) + "x" + std::to_string(gt.height) + " ground truth");
  }
}

// Global pixel under a tile-local point.
PixelIndex global_pixel(const Tile& tile, const Point& local) {
  const PixelIndex px = pixel_of(local, tile.width(), tile.height());
  return {px.row + tile.y0, px.col + tile.x0};
}

}  // namespace

OracleSegmentor::OracleSegmentor(InstanceMap gt, int max_tile) : gt_(std::move(gt)), max_tile_(max_tile) {
  gt_.validate();
}

TileMask OracleSegmentor::segment(const Tile& tile, const PromptSet& prompts) const {
  check_gt_covers(gt_, tile);
  TileMask out{BinaryMask(tile.width(), tile.height()), 0.0};
  const PixelIndex px = global_pixel(tile, prompts.positive);
  const std::uint16_t id = gt_.at(px.row, px.col);
  if (id == 0) return out;
  for (int r = 0; r < tile.height(); ++r) {
    for (int c = 0; c < tile.width(); ++c) {
      if (gt_.at(r + tile.y0, c + tile.x0) == id) out.mask.set(r, c, true);
    }
  }
  out.score = 1.0;
  return out;
}

BlobSegmentor::BlobSegmentor(InstanceMap gt, int max_tile) : gt_(std::move(gt)), max_tile_(max_tile) {
  gt_.validate();
}

TileMask BlobSegmentor::segment(const Tile& tile, const PromptSet& prompts) const {
  check_gt_covers(gt_, tile);
  const int w = tile.width(), h = tile.height();
  TileMask out{BinaryMask(w, h), 0.0};
  const PixelIndex seed = global_pixel(tile, prompts.positive);
  if (gt_.at(seed.row, seed.col) == 0) return out;

  std::set<std::uint16_t> excluded;
  for (const auto& n : prompts.negatives) {
    const PixelIndex px = global_pixel(tile, n);
    if (const auto id = gt_.at(px.row, px.col); id != 0) excluded.insert(id);
  }

  std::vector<int> stack{(seed.row - tile.y0) * w + (seed.col - tile.x0)};
  out.mask.bits[stack.back()] = 1;
  while (!stack.empty()) {
    const int idx = stack.back();
    stack.pop_back();
    const int r = idx / w, c = idx % w;
    const int nr[4] = {r - 1, r + 1, r, r};
    const int nc[4] = {c, c, c - 1, c + 1};
    for (int k = 0; k < 4; ++k) {
      if (nr[k] < 0 || nr[k] >= h || nc[k] < 0 || nc[k] >= w) continue;
      const int j = nr[k] * w + nc[k];
      if (out.mask.bits[j] || gt_.at(nr[k] + tile.y0, nc[k] + tile.x0) == 0) continue;
      out.mask.bits[j] = 1;
      stack.push_back(j);
    }
  }
  bool any = false;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!out.mask.at(r, c)) continue;
      if (excluded.count(gt_.at(r + tile.y0, c + tile.x0))) {
        out.mask.set(r, c, false);
      } else {
        any = true;
      }
    }
  }
  out.score = any ? 1.0 : 0.0;
  return out;
}

ReplaySegmentor::ReplaySegmentor(std::filesystem::path dir, int image_width, int image_height, int max_tile)
    : dir_(std::move(dir)), width_(image_width), height_(image_height), max_tile_(max_tile) {
  if (!std::filesystem::is_directory(dir_)) throw DataError("replay directory " + dir_.string() + " does not exist");
  const auto scores_file = dir_ / "scores.json";
  if (std::filesystem::exists(scores_file)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_text(scores_file));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(scores_file.string() + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_array()) throw DataError(scores_file.string() + ": expected an array of numbers");
    for (const auto& v : j) {
      if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
        throw DataError(scores_file.string() + ": scores must be numbers in [0, 1]");
      }
      scores_.push_back(v.get<double>());
    }
  }
}

std::filesystem::path ReplaySegmentor::mask_path(const std::filesystem::path& dir, std::size_t row) {
  return dir / ("mask_" + std::to_string(row) + ".png");
}

TileMask ReplaySegmentor::segment(const Tile& tile, const PromptSet& prompts) const {
  const auto path = mask_path(dir_, prompts.source_index);
  if (!std::filesystem::exists(path)) throw DataError("missing replay mask " + path.string());
  const BinaryMask full = io::read_mask_png(path);
  if (full.width != width_ || full.height != height_) {
    throw DataError(path.string() + ": mask is " + std::to_string(full.width) + "x" + std::to_string(full.height) +
                    ", image is " + std::to_string(width_) + "x" + std::to_string(height_));
  }
  TileMask out{BinaryMask(tile.width(), tile.height()), 1.0};
  for (int r = 0; r < tile.height(); ++r) {
    for (int c = 0; c < tile.width(); ++c) out.mask.set(r, c, full.at(r + tile.y0, c + tile.x0));
  }
  if (prompts.source_index < scores_.size()) out.score = scores_[prompts.source_index];
  return out;
}

}  // namespace nucseg
