#include "nucseg/prompter_geom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nucseg/error.hpp"

namespace nucseg {

AnchorGrid build_anchor_grid(int width, int height, int step) {
  if (width < 1 || height < 1) throw InvalidArgument("anchor grid: image dimensions must be >= 1");
  if (step < 1) throw InvalidArgument("anchor grid: step must be >= 1");
  AnchorGrid g;
  g.width = width;
  g.height = height;
  g.step = step;
  g.cols = (width + step - 1) / step;
  g.rows = (height + step - 1) / step;
  g.anchors.reserve(static_cast<std::size_t>(g.cols) * g.rows);
  const double half = step / 2.0;
  for (int v = 0; v < g.rows; ++v) {
    const double y = std::min(half + v * static_cast<double>(step), height - 0.5);
    for (int u = 0; u < g.cols; ++u) {
      const double x = std::min(half + u * static_cast<double>(step), width - 0.5);
      g.anchors.push_back({x, y});
    }
  }
  return g;
}

void FeaturePyramid::validate() const {
  if (levels.empty()) throw DataError("feature pyramid: no levels");
  for (const auto& lvl : levels) {
    if (lvl.j < 0 || lvl.j > 30) throw DataError("feature pyramid: level index out of range");
    const int scale = 1 << lvl.j;
    const int ew = (image_width + scale - 1) / scale;
    const int eh = (image_height + scale - 1) / scale;
    if (lvl.width != ew || lvl.height != eh) {
      throw DataError("feature pyramid: level " + std::to_string(lvl.j) + " is " + std::to_string(lvl.width) + "x" +
                      std::to_string(lvl.height) + ", expected " + std::to_string(ew) + "x" + std::to_string(eh));
    }
    if (lvl.channels < 1) throw DataError("feature pyramid: level " + std::to_string(lvl.j) + " has no channels");
    if (lvl.data.size() != static_cast<std::size_t>(lvl.width) * lvl.height * lvl.channels) {
      throw DataError("feature pyramid: level " + std::to_string(lvl.j) + " buffer size mismatch");
    }
  }
}

std::size_t FeaturePyramid::total_channels() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += static_cast<std::size_t>(l.channels);
  return n;
}

double bilinear_sample(std::span<const float> plane, int width, int height, double x, double y) {
  const double u = x - 0.5;
  const double v = y - 0.5;
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  const double tx = u - fu;
  const double ty = v - fv;
  const int c0 = static_cast<int>(fu);
  const int r0 = static_cast<int>(fv);
  const int ca = std::clamp(c0, 0, width - 1), cb = std::clamp(c0 + 1, 0, width - 1);
  const int ra = std::clamp(r0, 0, height - 1), rb = std::clamp(r0 + 1, 0, height - 1);
  auto at = [&](int r, int c) { return static_cast<double>(plane[static_cast<std::size_t>(r) * width + c]); };
  const double top = at(ra, ca) * (1.0 - tx) + at(ra, cb) * tx;
  const double bottom = at(rb, ca) * (1.0 - tx) + at(rb, cb) * tx;
  return top * (1.0 - ty) + bottom * ty;
}

std::vector<double> sample_pyramid(const FeaturePyramid& pyramid, const Point& p) {
  if (!inside_image(p, pyramid.image_width, pyramid.image_height)) {
    throw InvalidArgument("sample_pyramid: point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ") outside the image");
  }
  std::vector<double> out;
  out.reserve(pyramid.total_channels());
  for (const auto& lvl : pyramid.levels) {
    const double scale = static_cast<double>(1 << lvl.j);
    const double lx = p.x / scale;
    const double ly = p.y / scale;
    for (int ch = 0; ch < lvl.channels; ++ch) out.push_back(bilinear_sample(lvl.plane(ch), lvl.width, lvl.height, lx, ly));
  }
  return out;
}

double sample_probability(const ProbabilityMap& prob, const Point& p) {
  if (!inside_image(p, prob.width, prob.height)) {
    throw InvalidArgument("probability lookup at (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ") outside the " + std::to_string(prob.width) + "x" + std::to_string(prob.height) + " map");
  }
  return bilinear_sample(prob.values, prob.width, prob.height, p.x, p.y);
}

RefinedAnchors apply_offsets(const AnchorGrid& grid, std::span<const Point> offsets) {
  if (offsets.size() != grid.anchors.size()) {
    throw InvalidArgument("apply_offsets: " + std::to_string(offsets.size()) + " offsets for " +
                          std::to_string(grid.anchors.size()) + " anchors");
  }
  RefinedAnchors out;
  out.offsets.assign(offsets.begin(), offsets.end());
  out.positions.reserve(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const Point& a = grid.anchors[i];
    out.positions.push_back({std::clamp(a.x + offsets[i].x, 0.0, static_cast<double>(grid.width)),
                             std::clamp(a.y + offsets[i].y, 0.0, static_cast<double>(grid.height))});
  }
  return out;
}

}  // namespace nucseg
