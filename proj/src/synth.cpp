#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "nucseg/corpus.hpp"
#include "nucseg/error.hpp"

namespace nucseg {

void SynthConfig::validate() const {
  if (width < 1 || height < 1) throw InvalidArgument("synth: image size must be positive");
  if (min_count < 0 || max_count < min_count) throw InvalidArgument("synth: bad nucleus count range");
  if (max_count > 65535) throw InvalidArgument("synth: at most 65535 nuclei per image");
  if (!(min_axis > 0.0) || max_axis < min_axis) throw InvalidArgument("synth: axis range must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidArgument("synth: overlap target must lie in [0,1)");
  if (num_classes < 1) throw InvalidArgument("synth: class count must be >= 1");
}

namespace {

constexpr int kMaxAttempts = 500;
// An overlapped nucleus must keep at least this share of its pixels.
constexpr double kMinVisibleShare = 0.4;

struct Box {
  double x0, y0, x1, y1;
  bool intersects(const Box& o, double margin) const {
    return x0 - margin < o.x1 && o.x0 - margin < x1 && y0 - margin < o.y1 && o.y0 - margin < y1;
  }
};

Box bounds_of(const Ellipse& e) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double a = e.semi_major, b = e.semi_minor;
  const double hx = std::sqrt(a * a * c * c + b * b * s * s);
  const double hy = std::sqrt(a * a * s * s + b * b * c * c);
  return {e.center.x - hx, e.center.y - hy, e.center.x + hx, e.center.y + hy};
}

// Distance from the center to the boundary along direction phi.
double radius_along(const Ellipse& e, double phi) {
  const double t = phi - e.angle;
  const double c = std::cos(t) / e.semi_major, s = std::sin(t) / e.semi_minor;
  return 1.0 / std::sqrt(c * c + s * s);
}

struct Placed {
  Ellipse shape;
  Box box;
  int cls = 1;
  std::size_t full_pixels = 0;
  bool paired = false;
};

class Canvas {
 public:
  explicit Canvas(const SynthConfig& cfg) : map_(cfg.width, cfg.height) {}

  InstanceMap& map() { return map_; }

  struct Window {
    int r0, r1, c0, c1;
  };

  Window window_of(const Box& b) const {
    return {std::max(0, static_cast<int>(std::floor(b.y0))), std::min(map_.height - 1, static_cast<int>(std::ceil(b.y1))),
            std::max(0, static_cast<int>(std::floor(b.x0))), std::min(map_.width - 1, static_cast<int>(std::ceil(b.x1)))};
  }

  std::vector<std::uint16_t> snapshot(const Window& w) const {
    std::vector<std::uint16_t> s;
    for (int r = w.r0; r <= w.r1; ++r)
      for (int c = w.c0; c <= w.c1; ++c) s.push_back(map_.at(r, c));
    return s;
  }

  void restore(const Window& w, const std::vector<std::uint16_t>& s) {
    std::size_t k = 0;
    for (int r = w.r0; r <= w.r1; ++r)
      for (int c = w.c0; c <= w.c1; ++c) map_.at(r, c) = s[k++];
  }

  std::size_t paint(const Ellipse& e, const Window& w, std::uint16_t id) {
    std::size_t n = 0;
    for (int r = w.r0; r <= w.r1; ++r) {
      for (int c = w.c0; c <= w.c1; ++c) {
        if (e.contains({c + 0.5, r + 0.5})) {
          map_.at(r, c) = id;
          ++n;
        }
      }
    }
    return n;
  }

  std::size_t count(const Window& w, std::uint16_t id) const {
    std::size_t n = 0;
    for (int r = w.r0; r <= w.r1; ++r)
      for (int c = w.c0; c <= w.c1; ++c) n += map_.at(r, c) == id;
    return n;
  }

  // The centroid's pixel and the four texels around it all carry `id`.
  bool centroid_well_inside(const Window& w, std::uint16_t id) const {
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (int r = w.r0; r <= w.r1; ++r) {
      for (int c = w.c0; c <= w.c1; ++c) {
        if (map_.at(r, c) != id) continue;
        sx += c + 0.5;
        sy += r + 0.5;
        ++n;
      }
    }
    if (n == 0) return false;
    const double cx = sx / n, cy = sy / n;
    const int c0 = static_cast<int>(std::floor(cx - 0.5)), r0 = static_cast<int>(std::floor(cy - 0.5));
    for (int dr = 0; dr <= 1; ++dr) {
      for (int dc = 0; dc <= 1; ++dc) {
        const int r = std::clamp(r0 + dr, 0, map_.height - 1);
        const int c = std::clamp(c0 + dc, 0, map_.width - 1);
        if (map_.at(r, c) != id) return false;
      }
    }
    return true;
  }

 private:
  InstanceMap map_;
};

}  // namespace

SynthImage generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto n = static_cast<int>(uniform_int(rng, cfg.min_count, cfg.max_count));

  // Choose which placements try to overlap an earlier nucleus.
  const int pairs = std::min(n / 2, static_cast<int>(std::lround(cfg.overlap * n / 2.0)));
  std::vector<char> wants_overlap(static_cast<std::size_t>(n), 0);
  if (n > 1) {
    std::vector<int> order(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n - 1; ++i) order[i] = i + 1;
    for (int i = n - 2; i > 0; --i) std::swap(order[i], order[uniform_int(rng, 0, i)]);
    for (int i = 0; i < pairs; ++i) wants_overlap[order[i]] = 1;
  }

  Canvas canvas(cfg);
  std::vector<Placed> placed;
  placed.reserve(static_cast<std::size_t>(n));

  for (int k = 0; k < n; ++k) {
    const auto id = static_cast<std::uint16_t>(k + 1);
    bool done = false;
    for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      Ellipse e;
      const double a = cfg.min_axis + (cfg.max_axis - cfg.min_axis) * uniform01(rng);
      const double b = cfg.min_axis + (cfg.max_axis - cfg.min_axis) * uniform01(rng);
      e.semi_major = std::max(a, b);
      e.semi_minor = std::min(a, b);
      e.angle = std::numbers::pi * uniform01(rng);

      std::vector<std::size_t> free_partners;
      if (wants_overlap[k]) {
        for (std::size_t j = 0; j < placed.size(); ++j)
          if (!placed[j].paired) free_partners.push_back(j);
      }
      std::optional<std::size_t> partner;
      if (!free_partners.empty()) {
        partner = free_partners[uniform_int(rng, 0, static_cast<std::int64_t>(free_partners.size()) - 1)];
        const Ellipse& p = placed[*partner].shape;
        const double phi = 2.0 * std::numbers::pi * uniform01(rng);
        const double reach = radius_along(p, phi) + radius_along(e, phi);
        const double d = (0.6 + 0.25 * uniform01(rng)) * reach;
        e.center = {p.center.x + d * std::cos(phi), p.center.y + d * std::sin(phi)};
      } else {
        e.center = {cfg.width * uniform01(rng), cfg.height * uniform01(rng)};
      }

      const Box box = bounds_of(e);
      if (box.x0 < 0.0 || box.y0 < 0.0 || box.x1 > cfg.width || box.y1 > cfg.height) continue;
      bool clash = false;
      for (std::size_t j = 0; j < placed.size() && !clash; ++j) {
        if (partner && j == *partner) continue;
        clash = box.intersects(placed[j].box, 1.0);
      }
      if (clash) continue;

      const auto win = canvas.window_of(box);
      const auto saved = canvas.snapshot(win);
      const std::size_t painted = canvas.paint(e, win, id);
      bool ok = painted > 0 && canvas.centroid_well_inside(win, id);
      if (ok && partner) {
        const Placed& p = placed[*partner];
        const auto pwin = canvas.window_of(p.box);
        const std::size_t left = canvas.count(pwin, static_cast<std::uint16_t>(*partner + 1));
        ok = left >= kMinVisibleShare * static_cast<double>(p.full_pixels) &&
             canvas.centroid_well_inside(pwin, static_cast<std::uint16_t>(*partner + 1));
      }
      if (!ok) {
        canvas.restore(win, saved);
        continue;
      }

      Placed rec{e, box, static_cast<int>(uniform_int(rng, 1, cfg.num_classes)), painted, false};
      if (partner) {
        rec.paired = true;
        placed[*partner].paired = true;
      }
      placed.push_back(rec);
      done = true;
    }
    if (!done) {
      throw DataError("synth: could not place nucleus " + std::to_string(k + 1) + " of " + std::to_string(n) +
                      " after " + std::to_string(kMaxAttempts) + " attempts (seed " + std::to_string(cfg.seed) + ")");
    }
  }

  SynthImage out;
  out.map = std::move(canvas.map());
  std::map<std::uint16_t, int> classes;
  std::size_t overlapping = 0;
  for (std::size_t j = 0; j < placed.size(); ++j) {
    classes[static_cast<std::uint16_t>(j + 1)] = placed[j].cls;
    overlapping += placed[j].paired ? 1 : 0;
  }
  out.map.classes = std::move(classes);
  out.points = centroids_from_instance_map(out.map);
  out.achieved_overlap = placed.empty() ? 0.0 : static_cast<double>(overlapping) / placed.size();
  return out;
}

}  // namespace nucseg
