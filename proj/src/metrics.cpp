#include "nucseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "nucseg/assignment.hpp"
#include "nucseg/error.hpp"

namespace nucseg {

namespace {

void check_same_size(const InstanceMap& pred, const InstanceMap& gt, const char* what) {
  if (pred.width != gt.width || pred.height != gt.height || pred.ids.size() != gt.ids.size()) {
    throw InvalidArgument(std::string(what) + ": prediction is " + std::to_string(pred.width) + "x" +
                          std::to_string(pred.height) + ", ground truth is " + std::to_string(gt.width) + "x" +
                          std::to_string(gt.height));
  }
}

double ratio_or_one(std::size_t num, std::size_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Contingency build_contingency(const InstanceMap& pred, const InstanceMap& gt) {
  check_same_size(pred, gt, "contingency");
  Contingency t;
  t.pred_area.assign(static_cast<std::size_t>(pred.max_id()) + 1, 0);
  t.gt_area.assign(static_cast<std::size_t>(gt.max_id()) + 1, 0);
  std::unordered_map<std::uint32_t, std::uint64_t> joint;
  const std::size_t n = pred.ids.size();
  const std::uint16_t* p = pred.ids.data();
  const std::uint16_t* g = gt.ids.data();
  for (std::size_t i = 0; i < n; ++i) {
    ++t.pred_area[p[i]];
    ++t.gt_area[g[i]];
    if (p[i] != 0 && g[i] != 0) ++joint[(static_cast<std::uint32_t>(g[i]) << 16) | p[i]];
  }
  t.overlaps.reserve(joint.size());
  for (const auto& [key, count] : joint) {
    t.overlaps.push_back({static_cast<std::uint16_t>(key & 0xffff), static_cast<std::uint16_t>(key >> 16), count});
  }
  std::sort(t.overlaps.begin(), t.overlaps.end(), [](const auto& a, const auto& b) {
    return a.gt != b.gt ? a.gt < b.gt : a.pred < b.pred;
  });
  return t;
}

std::vector<InstanceMatch> match_instances(const Contingency& t) {
  std::vector<InstanceMatch> out;
  for (const auto& cell : t.overlaps) {
    const std::uint64_t uni = t.pred_area[cell.pred] + t.gt_area[cell.gt] - cell.count;
    // IoU > 1/2 exactly, in integers.
    if (2 * cell.count > uni) {
      out.push_back({cell.pred, cell.gt, static_cast<double>(cell.count) / static_cast<double>(uni)});
    }
  }
  return out;
}

std::vector<InstanceMatch> match_instances(const InstanceMap& pred, const InstanceMap& gt) {
  return match_instances(build_contingency(pred, gt));
}

double PQStats::dq() const {
  const double den = tp + 0.5 * fp + 0.5 * fn;
  return den == 0.0 ? 1.0 : tp / den;
}

double PQStats::sq() const {
  if (tp == 0) return empty() ? 1.0 : 0.0;
  return iou_sum() / static_cast<double>(tp);
}

double PQStats::pq() const {
  if (empty()) return 1.0;
  if (tp == 0) return 0.0;
  return dq() * sq();
}

double PQStats::iou_sum() const {
  std::vector<double> sorted = ious;
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double v : sorted) s += v;
  return s;
}

void PQStats::merge(const PQStats& o) {
  ious.insert(ious.end(), o.ious.begin(), o.ious.end());
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
}

PQStats pq_from_matches(const Contingency& t, const std::vector<InstanceMatch>& matches, const InstanceMap& pred,
                        const InstanceMap& gt, std::optional<int> cls) {
  auto in_scope = [&](const InstanceMap& map, std::uint16_t id) { return !cls || map.class_of(id) == *cls; };
  PQStats s;
  std::size_t n_pred = 0, n_gt = 0;
  for (std::size_t id = 1; id < t.pred_area.size(); ++id) {
    if (t.pred_area[id] > 0 && in_scope(pred, static_cast<std::uint16_t>(id))) ++n_pred;
  }
  for (std::size_t id = 1; id < t.gt_area.size(); ++id) {
    if (t.gt_area[id] > 0 && in_scope(gt, static_cast<std::uint16_t>(id))) ++n_gt;
  }
  for (const auto& m : matches) {
    if (in_scope(pred, m.pred) && in_scope(gt, m.gt)) s.ious.push_back(m.iou);
  }
  s.tp = s.ious.size();
  s.fp = n_pred - s.tp;
  s.fn = n_gt - s.tp;
  return s;
}

PQStats compute_pq(const InstanceMap& pred, const InstanceMap& gt, std::optional<int> cls) {
  if (cls && (!pred.classes || !gt.classes)) {
    throw InvalidArgument("compute_pq: class mode needs class tables on both maps");
  }
  const Contingency t = build_contingency(pred, gt);
  return pq_from_matches(t, match_instances(t), pred, gt, cls);
}

MPQResult mpq_from_stats(const std::vector<PQStats>& class_stats) {
  MPQResult r;
  r.class_stats = class_stats;
  std::vector<double> present;
  for (std::size_t c = 0; c < class_stats.size(); ++c) {
    if (class_stats[c].empty()) {
      r.per_class[static_cast<int>(c) + 1] = std::nullopt;
    } else {
      const double v = class_stats[c].pq();
      r.per_class[static_cast<int>(c) + 1] = v;
      present.push_back(v);
    }
  }
  r.mpq = present.empty() ? 1.0 : std::accumulate(present.begin(), present.end(), 0.0) / present.size();
  return r;
}

MPQResult compute_mpq(const InstanceMap& pred, const InstanceMap& gt, int num_classes) {
  if (num_classes < 1) throw InvalidArgument("compute_mpq: need at least one class");
  if (num_classes > 1 && (!pred.classes || !gt.classes)) {
    throw InvalidArgument("compute_mpq: class tables required for more than one class");
  }
  const Contingency t = build_contingency(pred, gt);
  const auto matches = match_instances(t);
  std::vector<PQStats> stats;
  for (int c = 1; c <= num_classes; ++c) {
    stats.push_back(num_classes > 1 ? pq_from_matches(t, matches, pred, gt, c)
                                    : pq_from_matches(t, matches, pred, gt, std::nullopt));
  }
  return mpq_from_stats(stats);
}

double AJIStats::value() const {
  return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_);
}

AJIStats aji_stats(const Contingency& t) {
  AJIStats s;
  std::vector<char> used(t.pred_area.size(), 0);
  std::size_t k = 0;
  for (std::size_t g = 1; g < t.gt_area.size(); ++g) {
    if (t.gt_area[g] == 0) continue;
    while (k < t.overlaps.size() && t.overlaps[k].gt < g) ++k;
    std::uint64_t best_inter = 0, best_union = 1;
    std::uint16_t best = 0;
    for (std::size_t i = k; i < t.overlaps.size() && t.overlaps[i].gt == g; ++i) {
      const auto& cell = t.overlaps[i];
      if (used[cell.pred]) continue;
      const std::uint64_t uni = t.pred_area[cell.pred] + t.gt_area[g] - cell.count;
      // cell.count / uni > best_inter / best_union; preds arrive in id order so ties keep the smaller id
      if (best == 0 || cell.count * best_union > best_inter * uni) {
        best = cell.pred;
        best_inter = cell.count;
        best_union = uni;
      }
    }
    if (best == 0) {
      s.union_ += t.gt_area[g];
    } else {
      used[best] = 1;
      s.intersection += best_inter;
      s.union_ += best_union;
    }
  }
  for (std::size_t p = 1; p < t.pred_area.size(); ++p) {
    if (!used[p]) s.union_ += t.pred_area[p];
  }
  return s;
}

double compute_aji(const InstanceMap& pred, const InstanceMap& gt) {
  return aji_stats(build_contingency(pred, gt)).value();
}

double DetectionCounts::precision() const { return ratio_or_one(tp, tp + fp); }
double DetectionCounts::recall() const { return ratio_or_one(tp, tp + fn); }
double DetectionCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

DetectionStats detection_f1(const GroundTruthPoints& pred, const GroundTruthPoints& gt, double radius,
                            int num_classes) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidArgument("detection_f1: radius must be > 0");
  if (num_classes < 1) throw InvalidArgument("detection_f1: need at least one class");
  DetectionStats out;
  out.radius = radius;
  out.per_class.assign(num_classes, {});
  const std::size_t np = pred.size(), ng = gt.size();
  for (const auto* set : {&pred, &gt}) {
    for (const auto& p : *set) {
      if (p.cls < 1 || p.cls > num_classes) {
        throw InvalidArgument("detection_f1: class " + std::to_string(p.cls) + " outside 1.." +
                              std::to_string(num_classes));
      }
    }
  }

  // Radius graph over the gt points bucketed on a grid of cell size `radius`.
  auto cell_of = [&](const Point& p) {
    return std::pair<long long, long long>{static_cast<long long>(std::floor(p.x / radius)),
                                           static_cast<long long>(std::floor(p.y / radius))};
  };
  std::map<std::pair<long long, long long>, std::vector<std::size_t>> grid;
  for (std::size_t j = 0; j < ng; ++j) grid[cell_of(gt[j].pos)].push_back(j);
  std::vector<std::vector<std::size_t>> nbrs(np);
  UnionFind uf(np + ng);
  for (std::size_t i = 0; i < np; ++i) {
    const auto [cx, cy] = cell_of(pred[i].pos);
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        auto it = grid.find({cx + dx, cy + dy});
        if (it == grid.end()) continue;
        for (std::size_t j : it->second) {
          if (distance(pred[i].pos, gt[j].pos) <= radius) {
            nbrs[i].push_back(j);
            uf.unite(i, np + j);
          }
        }
      }
    }
  }

  std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> comps;
  for (std::size_t i = 0; i < np; ++i) {
    if (!nbrs[i].empty()) comps[uf.find(i)].first.push_back(i);
  }
  for (std::size_t j = 0; j < ng; ++j) {
    const std::size_t root = uf.find(np + j);
    if (comps.count(root)) comps[root].second.push_back(j);
  }
  for (const auto& [root, members] : comps) {
    const auto& [ps, gs] = members;
    const double big = (static_cast<double>(std::min(ps.size(), gs.size())) + 1.0) * radius + 1.0;
    Matrix w(ps.size(), gs.size(), 0.0);
    std::vector<std::vector<char>> allowed(ps.size(), std::vector<char>(gs.size(), 0));
    for (std::size_t a = 0; a < ps.size(); ++a) {
      for (std::size_t b = 0; b < gs.size(); ++b) {
        const double d = distance(pred[ps[a]].pos, gt[gs[b]].pos);
        if (d <= radius) {
          w(a, b) = big - d;
          allowed[a][b] = 1;
        }
      }
    }
    for (const auto& [a, b] : hungarian_match(w).pairs) {
      if (allowed[a][b]) out.pairs.emplace_back(ps[a], gs[b]);
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const auto& x, const auto& y) { return x.second < y.second; });

  out.detection.tp = out.pairs.size();
  out.detection.fp = np - out.pairs.size();
  out.detection.fn = ng - out.pairs.size();
  std::vector<std::size_t> class_tp(num_classes, 0), pred_count(num_classes, 0), gt_count(num_classes, 0);
  for (const auto& p : pred) ++pred_count[p.cls - 1];
  for (const auto& g : gt) ++gt_count[g.cls - 1];
  for (const auto& [i, j] : out.pairs) {
    if (pred[i].cls == gt[j].cls) ++class_tp[pred[i].cls - 1];
  }
  for (int c = 0; c < num_classes; ++c) {
    out.per_class[c] = {class_tp[c], pred_count[c] - class_tp[c], gt_count[c] - class_tp[c]};
  }
  return out;
}

ImageAccumulator evaluate_image(const InstanceMap& pred, const InstanceMap& gt, int num_classes, double radius_px,
                                std::string name) {
  if (num_classes < 1) throw InvalidArgument("evaluate_image: need at least one class");
  if (num_classes > 1 && (!pred.classes || !gt.classes)) {
    throw DataError("evaluate_image" + (name.empty() ? std::string() : " (" + name + ")") +
                    ": class tables are required when evaluating more than one class");
  }
  ImageAccumulator acc;
  acc.name = std::move(name);
  acc.num_classes = num_classes;
  const Contingency t = build_contingency(pred, gt);
  const auto matches = match_instances(t);
  acc.binary = pq_from_matches(t, matches, pred, gt, std::nullopt);
  for (int c = 1; c <= num_classes; ++c) {
    acc.per_class.push_back(num_classes > 1 ? pq_from_matches(t, matches, pred, gt, c) : acc.binary);
  }
  acc.aji = aji_stats(t);

  auto points = [&](const InstanceMap& map) {
    GroundTruthPoints pts = centroids_from_instance_map(map);
    if (num_classes == 1) {
      for (auto& p : pts) p.cls = 1;
    }
    for (const auto& p : pts) {
      if (p.cls < 1 || p.cls > num_classes) {
        throw DataError("evaluate_image: class " + std::to_string(p.cls) + " outside 1.." + std::to_string(num_classes));
      }
    }
    return pts;
  };
  const DetectionStats det = detection_f1(points(pred), points(gt), radius_px, num_classes);
  acc.detection = det.detection;
  acc.detection_per_class = det.per_class;
  return acc;
}

EvalReport aggregate_reports(const std::vector<ImageAccumulator>& images, int num_classes, double radius_px) {
  if (num_classes < 1) throw InvalidArgument("aggregate_reports: need at least one class");
  EvalReport r;
  r.num_classes = num_classes;
  r.radius_px = radius_px;
  std::vector<PQStats> per_class(num_classes);
  r.detection_per_class.assign(num_classes, {});
  for (const auto& img : images) {
    if (img.num_classes != num_classes || img.per_class.size() != static_cast<std::size_t>(num_classes) ||
        img.detection_per_class.size() != static_cast<std::size_t>(num_classes)) {
      throw InvalidArgument("aggregate_reports: image '" + img.name + "' has " + std::to_string(img.num_classes) +
                            " classes, expected " + std::to_string(num_classes));
    }
    r.binary.merge(img.binary);
    for (int c = 0; c < num_classes; ++c) {
      per_class[c].merge(img.per_class[c]);
      r.detection_per_class[c].merge(img.detection_per_class[c]);
    }
    r.aji_stats.merge(img.aji);
    r.detection.merge(img.detection);
  }
  r.bpq = r.binary.pq();
  r.mpq = mpq_from_stats(per_class);
  r.aji = r.aji_stats.value();
  r.images = images;
  return r;
}

}  // namespace nucseg
