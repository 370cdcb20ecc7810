#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nucseg/corpus.hpp"
#include "nucseg/hungarian.hpp"

namespace nucseg {

/// A refined anchor with its class logits. Logit index c - 1 holds class c
/// (1..C); the last index, C, is the background class.
struct PromptCandidate {
  Point position;
  std::vector<double> logits;

  std::size_t num_classes() const { return logits.empty() ? 0 : logits.size() - 1; }
  std::size_t background_index() const { return num_classes(); }
  std::vector<double> probabilities() const;
};

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// q_i(c) - alpha * |position - gt|, with q_i(c) the softmax probability of class c.
double edge_weight(const PromptCandidate& cand, const Point& gt, int gt_class, double alpha);

/// M x N matrix of edge weights, candidates on rows, ground truths on columns.
Matrix build_weight_matrix(std::span<const PromptCandidate> cands, const GroundTruthPoints& gts, double alpha);

struct Matching {
  /// (anchor index, gt index), sorted by gt index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched_anchors;
  /// Ground truths left without an anchor (only when M < N).
  std::vector<std::size_t> unassigned_gts;
  double total_weight = 0.0;
};

/// Maximum-weight matching of min(M, N) pairs. Among optimal matchings the
/// one whose pair list, sorted by (gt, anchor), is lexicographically smallest
/// is returned.
Matching hungarian_match(const Matrix& weights);

/// Exhaustive search with the same objective and tie rule as
/// hungarian_match. Refuses inputs with min(M, N) > 8.
Matching exhaustive_match(const Matrix& weights);

/// Sum of weights over `pairs`, accumulated in pair order.
double matching_weight(const Matrix& weights, const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

struct AnchorTarget {
  /// Class in 1..C for a matched anchor; empty means background.
  std::optional<int> cls;
  std::optional<Point> position;
  std::optional<std::size_t> gt_index;
};

struct TargetSet {
  std::vector<AnchorTarget> anchors;
  std::size_t num_gt = 0;

  std::size_t num_matched() const;
};

TargetSet derive_targets(const Matching& match, const GroundTruthPoints& gts, std::size_t num_anchors);

}  // namespace nucseg
