#pragma once

#include <span>
#include <vector>

#include "nucseg/corpus.hpp"

namespace nucseg {

/// Anchor points at the centers of a step x step lattice, row-major.
struct AnchorGrid {
  int width = 0;
  int height = 0;
  int step = 16;
  int cols = 0;
  int rows = 0;
  std::vector<Point> anchors;

  std::size_t size() const { return anchors.size(); }
};

AnchorGrid build_anchor_grid(int width, int height, int step);

/// One pyramid level P_j, stored channel-major: all of channel 0, then channel 1, ...
struct FeatureLevel {
  int j = 2;
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  std::span<const float> plane(int channel) const {
    const std::size_t n = static_cast<std::size_t>(width) * height;
    return std::span<const float>(data).subspan(n * channel, n);
  }
};

struct FeaturePyramid {
  int image_width = 0;
  int image_height = 0;
  std::vector<FeatureLevel> levels;

  /// Level j must be ceil(W / 2^j) x ceil(H / 2^j); throws DataError otherwise.
  void validate() const;
  std::size_t total_channels() const;
};

/// Bilinear interpolation on a single plane in texel units, texel centers at
/// (c + 0.5, r + 0.5); samples beyond the border replicate the edge texels.
double bilinear_sample(std::span<const float> plane, int width, int height, double x, double y);

/// Concatenated per-level features for an image-space point, levels in order.
std::vector<double> sample_pyramid(const FeaturePyramid& pyramid, const Point& p);

double sample_probability(const ProbabilityMap& prob, const Point& p);

struct RefinedAnchors {
  std::vector<Point> offsets;
  std::vector<Point> positions;
};

/// position_i = clamp(anchor_i + offset_i) into the closed image rectangle.
RefinedAnchors apply_offsets(const AnchorGrid& grid, std::span<const Point> offsets);

}  // namespace nucseg
