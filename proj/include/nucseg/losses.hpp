#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nucseg/assignment.hpp"
#include "nucseg/corpus.hpp"

namespace nucseg {

/// Predictions are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

struct SamLossConfig {
  double omega = 20.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smooth = 1.0;

  void validate() const;
};

struct PrompterLossConfig {
  double beta = 0.5;
  double gamma = 0.05;
  double aux_focal_gamma = 2.0;
  double aux_focal_alpha = 0.25;

  void validate() const;
};

/// A scalar loss and its gradient with respect to each input value.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

struct LossTerm {
  std::string name;
  double weight = 1.0;
  double value = 0.0;
};

struct LossReport {
  std::vector<LossTerm> terms;
  double total = 0.0;
  /// Named gradients, e.g. "pred" (per pixel) or "logits" (row-major M x (C+1)).
  std::vector<std::pair<std::string, std::vector<double>>> gradients;

  double term(const std::string& name) const;
};

/// Mean over pixels of -a_t (1 - p_t)^gamma log p_t.
LossValue focal_loss(std::span<const double> pred, std::span<const std::uint8_t> gt, double gamma, double alpha);
LossValue focal_loss(const ProbabilityMap& pred, const BinaryMask& gt, double gamma, double alpha);

/// 1 - (2 sum(p g) + smooth) / (sum p + sum g + smooth).
LossValue dice_loss(std::span<const double> pred, std::span<const std::uint8_t> gt, double smooth);
LossValue dice_loss(const ProbabilityMap& pred, const BinaryMask& gt, double smooth);

/// IoU of (pred > 0.5) against gt; 1 when both are empty.
double thresholded_iou(std::span<const double> pred, std::span<const std::uint8_t> gt);

/// (predicted - actual)^2, gradient taken with respect to `predicted`.
LossValue iou_mse_loss(double predicted_iou, double actual_iou);

LossReport sam_loss(std::span<const double> pred, std::span<const std::uint8_t> gt, double predicted_iou,
                    const SamLossConfig& cfg);
LossReport sam_loss(const ProbabilityMap& pred, const BinaryMask& gt, double predicted_iou, const SamLossConfig& cfg);

/// Row-major M x (C+1) logits; gradient has the same layout.
LossValue prompter_cls_loss(std::span<const double> logits, std::size_t num_logits, const TargetSet& targets,
                            double beta);

/// Refined positions interleaved (x0, y0, x1, y1, ...); gradient has the same layout.
LossValue prompter_reg_loss(std::span<const double> positions, const TargetSet& targets, double gamma);

struct PrompterLossInputs {
  std::vector<double> logits;  // M x (C+1)
  std::size_t num_logits = 0;
  std::vector<double> positions;  // 2M
  TargetSet targets;
  std::vector<double> aux_pred;  // probability map
  std::vector<std::uint8_t> aux_gt;
};

/// L_reg + L_cls + L_aux.
LossReport prompter_total_loss(const PrompterLossInputs& in, const PrompterLossConfig& cfg);

std::vector<double> to_doubles(const ProbabilityMap& p);

}  // namespace nucseg
