#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "nucseg/pipeline.hpp"

namespace nucseg {

/// Answers from ground truth: the instance under the positive prompt, score 1;
/// background prompts give an empty mask with score 0.
class OracleSegmentor final : public SegmentorBackend {
 public:
  explicit OracleSegmentor(InstanceMap gt, int max_tile = 1 << 16);
  const char* name() const override { return "oracle"; }
  int max_tile_size() const override { return max_tile_; }
  TileMask segment(const Tile& tile, const PromptSet& prompts) const override;

 private:
  InstanceMap gt_;
  int max_tile_;
};

/// Mimics an over-segmenting model: the 4-connected foreground component
/// under the positive prompt, minus every gt instance hit by a negative prompt.
class BlobSegmentor final : public SegmentorBackend {
 public:
  explicit BlobSegmentor(InstanceMap gt, int max_tile = 1 << 16);
  const char* name() const override { return "blob"; }
  int max_tile_size() const override { return max_tile_; }
  TileMask segment(const Tile& tile, const PromptSet& prompts) const override;

 private:
  InstanceMap gt_;
  int max_tile_;
};

/// Replays masks precomputed by an external model: `<dir>/mask_<row>.png`
/// holds the full-image mask for prompt row `row` (nonzero = foreground),
/// and an optional `<dir>/scores.json` array gives the estimated IoU per row
/// (1.0 when absent).
class ReplaySegmentor final : public SegmentorBackend {
 public:
  ReplaySegmentor(std::filesystem::path dir, int image_width, int image_height, int max_tile = 1 << 16);
  const char* name() const override { return "replay"; }
  int max_tile_size() const override { return max_tile_; }
  TileMask segment(const Tile& tile, const PromptSet& prompts) const override;

  static std::filesystem::path mask_path(const std::filesystem::path& dir, std::size_t row);

 private:
  std::filesystem::path dir_;
  int width_, height_, max_tile_;
  std::vector<double> scores_;
};

}  // namespace nucseg
