#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nucseg/corpus.hpp"

namespace nucseg {

/// Joint label counts of two equally sized instance maps.
struct Contingency {
  std::vector<std::uint64_t> pred_area;  // indexed by id, [0] counts background
  std::vector<std::uint64_t> gt_area;
  struct Cell {
    std::uint16_t pred;
    std::uint16_t gt;
    std::uint64_t count;
  };
  /// Nonzero overlaps of nonzero ids, sorted by (gt, pred).
  std::vector<Cell> overlaps;
};

Contingency build_contingency(const InstanceMap& pred, const InstanceMap& gt);

struct InstanceMatch {
  std::uint16_t pred = 0;
  std::uint16_t gt = 0;
  double iou = 0.0;
};

/// Pairs with IoU > 0.5, sorted by gt id.
std::vector<InstanceMatch> match_instances(const InstanceMap& pred, const InstanceMap& gt);
std::vector<InstanceMatch> match_instances(const Contingency& table);

struct PQStats {
  std::vector<double> ious;  // matched IoUs
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double dq() const;
  double sq() const;
  double pq() const;
  /// Sum of the matched IoUs taken in sorted order, so merged stats do not
  /// depend on merge order.
  double iou_sum() const;
  bool empty() const { return tp == 0 && fp == 0 && fn == 0; }
  void merge(const PQStats& other);
};

/// Binary PQ, or PQ over the instances of one class when `cls` is set
/// (both maps then need class tables).
PQStats compute_pq(const InstanceMap& pred, const InstanceMap& gt, std::optional<int> cls = std::nullopt);
PQStats pq_from_matches(const Contingency& table, const std::vector<InstanceMatch>& matches,
                        const InstanceMap& pred, const InstanceMap& gt, std::optional<int> cls);

struct MPQResult {
  double mpq = 0.0;
  /// Classes 1..C; nullopt for a class with no instances in either map.
  std::map<int, std::optional<double>> per_class;
  std::vector<PQStats> class_stats;  // index c - 1
};

/// Mean of per-class PQ over classes present in pred or gt; 1 when no class is present.
MPQResult mpq_from_stats(const std::vector<PQStats>& class_stats);
MPQResult compute_mpq(const InstanceMap& pred, const InstanceMap& gt, int num_classes);

struct AJIStats {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;

  /// 1 when both maps are empty.
  double value() const;
  void merge(const AJIStats& o) {
    intersection += o.intersection;
    union_ += o.union_;
  }
};

AJIStats aji_stats(const Contingency& table);
double compute_aji(const InstanceMap& pred, const InstanceMap& gt);

struct DetectionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  /// Empty denominators count as 1.
  double precision() const;
  double recall() const;
  double f1() const;
  void merge(const DetectionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
  }
};

struct DetectionStats {
  double radius = 12.0;
  DetectionCounts detection;
  /// Classification counts for classes 1..C, index c - 1.
  std::vector<DetectionCounts> per_class;
  /// (pred index, gt index) of the detection matching, sorted by gt index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Maximum-cardinality, minimum-total-distance matching of pred to gt points
/// within `radius` (inclusive).
DetectionStats detection_f1(const GroundTruthPoints& pred, const GroundTruthPoints& gt, double radius,
                            int num_classes);

/// Everything needed to recompute dataset statistics for one image.
struct ImageAccumulator {
  std::string name;
  int num_classes = 1;
  PQStats binary;
  std::vector<PQStats> per_class;
  AJIStats aji;
  DetectionCounts detection;
  std::vector<DetectionCounts> detection_per_class;
};

/// Classes are taken from the class tables when num_classes > 1 (required
/// then); with one class every instance counts as class 1.
ImageAccumulator evaluate_image(const InstanceMap& pred, const InstanceMap& gt, int num_classes, double radius_px,
                                std::string name = {});

struct EvalReport {
  int num_classes = 1;
  double radius_px = 12.0;
  PQStats binary;
  double bpq = 0.0;
  MPQResult mpq;
  AJIStats aji_stats;
  double aji = 0.0;
  DetectionCounts detection;
  std::vector<DetectionCounts> detection_per_class;
  std::vector<ImageAccumulator> images;
};

/// Order-independent fold of per-image accumulators. Throws InvalidArgument on
/// a class-count mismatch.
EvalReport aggregate_reports(const std::vector<ImageAccumulator>& images, int num_classes, double radius_px);

}  // namespace nucseg
