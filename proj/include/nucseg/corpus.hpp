#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

namespace nucseg {

/// Continuous image coordinate. Pixel (row r, col c) has its center at
/// (c + 0.5, r + 0.5); x grows right, y grows down.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

double distance(const Point& a, const Point& b);

/// Dense label grid: 0 is background, instances are numbered 1..N.
struct InstanceMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> ids;
  /// instance id -> class in 1..C
  std::optional<std::map<std::uint16_t, int>> classes;

  InstanceMap() = default;
  InstanceMap(int w, int h);

  std::size_t size() const { return ids.size(); }
  std::uint16_t at(int row, int col) const { return ids[static_cast<std::size_t>(row) * width + col]; }
  std::uint16_t& at(int row, int col) { return ids[static_cast<std::size_t>(row) * width + col]; }

  /// Largest id present (the instance count N for a valid map).
  std::uint16_t max_id() const;
  int class_of(std::uint16_t id) const;

  /// Throws DataError when the dense-id or class-table invariants fail.
  void validate() const;

  friend bool operator==(const InstanceMap&, const InstanceMap&) = default;
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, bool value = false);

  bool at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col] != 0; }
  void set(int row, int col, bool v) { bits[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct ProbabilityMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  ProbabilityMap() = default;
  ProbabilityMap(int w, int h, float value = 0.0f);

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

  /// Throws DataError if any value is outside [0, 1] or not finite.
  void validate() const;

  friend bool operator==(const ProbabilityMap&, const ProbabilityMap&) = default;
};

struct LabeledPoint {
  Point pos;
  int cls = 1;
  std::optional<double> score;

  friend bool operator==(const LabeledPoint&, const LabeledPoint&) = default;
};

using GroundTruthPoints = std::vector<LabeledPoint>;

/// Pixel containing a continuous point, clamped into the grid.
struct PixelIndex {
  int row = 0;
  int col = 0;
};
PixelIndex pixel_of(const Point& p, int width, int height);

/// True when p lies in the closed image rectangle [0, w] x [0, h].
bool inside_image(const Point& p, int width, int height);

GroundTruthPoints centroids_from_instance_map(const InstanceMap& map);
BinaryMask binary_mask_from_instances(const InstanceMap& map);
BinaryMask instance_mask(const InstanceMap& map, std::uint16_t id);
ProbabilityMap probability_from_mask(const BinaryMask& mask);

/// Center of a uniformly chosen foreground pixel.
Point sample_positive_prompt(const BinaryMask& mask, std::mt19937_64& rng);

/// Uniform double in [0, 1) from the top 53 bits of one draw. Unlike
/// std::uniform_real_distribution this is identical across standard libraries.
double uniform01(std::mt19937_64& rng);
/// Uniform integer in [lo, hi] (inclusive) by rejection sampling.
std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi);

struct SynthConfig {
  int width = 256;
  int height = 256;
  int min_count = 10;
  int max_count = 30;
  /// Semi-axis lengths in pixels.
  double min_axis = 4.0;
  double max_axis = 12.0;
  /// Fraction of nuclei placed so that they overlap an earlier one.
  double overlap = 0.1;
  int num_classes = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Ellipse {
  Point center;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle = 0.0;  // radians

  bool contains(const Point& p) const;
  /// Radius of the smallest circle about the center enclosing the ellipse.
  double bounding_radius() const { return semi_major; }
};

struct SynthImage {
  InstanceMap map;
  GroundTruthPoints points;
  /// Fraction of final instances whose ellipse intersects an earlier one.
  double achieved_overlap = 0.0;
};

SynthImage generate_synthetic(const SynthConfig& cfg);

}  // namespace nucseg
