#include "nucseg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nucseg/error.hpp"

namespace nucseg {

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

InstanceMap::InstanceMap(int w, int h) : width(w), height(h) {
  if (w < 0 || h < 0) throw InvalidArgument("instance map dimensions must be non-negative");
  ids.assign(static_cast<std::size_t>(w) * h, 0);
}

std::uint16_t InstanceMap::max_id() const {
  std::uint16_t m = 0;
  for (auto v : ids) m = std::max(m, v);
  return m;
}

int InstanceMap::class_of(std::uint16_t id) const {
  if (!classes) return 1;
  auto it = classes->find(id);
  return it == classes->end() ? 1 : it->second;
}

void InstanceMap::validate() const {
  if (width < 0 || height < 0 || ids.size() != static_cast<std::size_t>(width) * height) {
    throw DataError("instance map: pixel buffer does not match " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  const std::uint16_t n = max_id();
  std::vector<char> seen(static_cast<std::size_t>(n) + 1, 0);
  for (auto v : ids) seen[v] = 1;
  for (std::uint16_t id = 1; id <= n; ++id) {
    if (!seen[id]) {
      throw DataError("instance map: ids are not dense, id " + std::to_string(id) + " missing below max " +
                      std::to_string(n));
    }
  }
  if (classes) {
    if (classes->size() != n) {
      throw DataError("instance map: class table has " + std::to_string(classes->size()) + " entries for " +
                      std::to_string(n) + " instances");
    }
    for (const auto& [id, cls] : *classes) {
      if (id == 0 || id > n) throw DataError("instance map: class table names unknown id " + std::to_string(id));
      if (cls < 1) throw DataError("instance map: class of id " + std::to_string(id) + " must be >= 1");
    }
  }
}

BinaryMask::BinaryMask(int w, int h, bool value) : width(w), height(h) {
  if (w < 0 || h < 0) throw InvalidArgument("mask dimensions must be non-negative");
  bits.assign(static_cast<std::size_t>(w) * h, value ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

ProbabilityMap::ProbabilityMap(int w, int h, float value) : width(w), height(h) {
  if (w < 0 || h < 0) throw InvalidArgument("probability map dimensions must be non-negative");
  values.assign(static_cast<std::size_t>(w) * h, value);
}

void ProbabilityMap::validate() const {
  if (values.size() != static_cast<std::size_t>(width) * height) {
    throw DataError("probability map: value buffer does not match dimensions");
  }
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("probability map: value outside [0,1]");
  }
}

PixelIndex pixel_of(const Point& p, int width, int height) {
  const int col = std::clamp(static_cast<int>(std::floor(p.x)), 0, std::max(width - 1, 0));
  const int row = std::clamp(static_cast<int>(std::floor(p.y)), 0, std::max(height - 1, 0));
  return {row, col};
}

bool inside_image(const Point& p, int width, int height) {
  return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.y >= 0.0 && p.x <= width && p.y <= height;
}

GroundTruthPoints centroids_from_instance_map(const InstanceMap& map) {
  const std::uint16_t n = map.max_id();
  std::vector<double> sx(n + 1, 0.0), sy(n + 1, 0.0);
  std::vector<std::size_t> cnt(n + 1, 0);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const auto id = map.at(r, c);
      if (id == 0) continue;
      sx[id] += c + 0.5;
      sy[id] += r + 0.5;
      ++cnt[id];
    }
  }
  GroundTruthPoints out;
  out.reserve(n);
  for (std::uint16_t id = 1; id <= n; ++id) {
    if (cnt[id] == 0) continue;
    const double k = static_cast<double>(cnt[id]);
    out.push_back({{sx[id] / k, sy[id] / k}, map.class_of(id), std::nullopt});
  }
  return out;
}

BinaryMask binary_mask_from_instances(const InstanceMap& map) {
  BinaryMask m(map.width, map.height);
  for (std::size_t i = 0; i < map.ids.size(); ++i) m.bits[i] = map.ids[i] != 0 ? 1 : 0;
  return m;
}

BinaryMask instance_mask(const InstanceMap& map, std::uint16_t id) {
  BinaryMask m(map.width, map.height);
  bool any = false;
  if (id != 0) {
    for (std::size_t i = 0; i < map.ids.size(); ++i) {
      if (map.ids[i] == id) {
        m.bits[i] = 1;
        any = true;
      }
    }
  }
  if (!any) throw InvalidArgument("instance_mask: unknown instance id " + std::to_string(id));
  return m;
}

ProbabilityMap probability_from_mask(const BinaryMask& mask) {
  ProbabilityMap p(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) p.values[i] = mask.bits[i] ? 1.0f : 0.0f;
  return p;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw InvalidArgument("uniform_int: empty range");
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(rng());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return lo + static_cast<std::int64_t>(v % range);
}

Point sample_positive_prompt(const BinaryMask& mask, std::mt19937_64& rng) {
  const std::size_t n = mask.count();
  if (n == 0) throw InvalidArgument("sample_positive_prompt: mask has no foreground pixels");
  auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    if (k-- == 0) {
      const auto row = static_cast<int>(i / mask.width);
      const auto col = static_cast<int>(i % mask.width);
      return {col + 0.5, row + 0.5};
    }
  }
  throw InvariantError("sample_positive_prompt: foreground count changed during scan");
}

bool Ellipse::contains(const Point& p) const {
  const double dx = p.x - center.x;
  const double dy = p.y - center.y;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return (u * u) / (semi_major * semi_major) + (v * v) / (semi_minor * semi_minor) <= 1.0;
}

}  // namespace nucseg
