#include "nucseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nucseg/error.hpp"

namespace nucseg {

namespace {

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_same_size(std::size_t a, std::size_t b, const char* who) {
  if (a != b) {
    throw InvalidArgument(std::string(who) + ": prediction has " + std::to_string(a) + " values, target has " +
                          std::to_string(b));
  }
}

void check_dims(const ProbabilityMap& p, const BinaryMask& g, const char* who) {
  if (p.width != g.width || p.height != g.height) {
    throw InvalidArgument(std::string(who) + ": dimension mismatch " + std::to_string(p.width) + "x" +
                          std::to_string(p.height) + " vs " + std::to_string(g.width) + "x" + std::to_string(g.height));
  }
}

}  // namespace

void SamLossConfig::validate() const {
  if (!(omega > 0.0)) throw InvalidArgument("sam loss: omega must be > 0");
  if (!(focal_gamma >= 0.0)) throw InvalidArgument("sam loss: focal gamma must be >= 0");
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw InvalidArgument("sam loss: focal alpha must lie in (0,1)");
  if (!(dice_smooth >= 0.0)) throw InvalidArgument("sam loss: dice smooth must be >= 0");
}

void PrompterLossConfig::validate() const {
  if (!(beta > 0.0)) throw InvalidArgument("prompter loss: beta must be > 0");
  if (!(gamma > 0.0)) throw InvalidArgument("prompter loss: gamma must be > 0");
  if (!(aux_focal_gamma >= 0.0)) throw InvalidArgument("prompter loss: aux focal gamma must be >= 0");
  if (!(aux_focal_alpha > 0.0 && aux_focal_alpha < 1.0)) {
    throw InvalidArgument("prompter loss: aux focal alpha must lie in (0,1)");
  }
}

double LossReport::term(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return t.value;
  throw InvalidArgument("loss report has no term '" + name + "'");
}

std::vector<double> to_doubles(const ProbabilityMap& p) { return {p.values.begin(), p.values.end()}; }

LossValue focal_loss(std::span<const double> pred, std::span<const std::uint8_t> gt, double gamma, double alpha) {
  check_same_size(pred.size(), gt.size(), "focal_loss");
  LossValue out;
  out.grad.assign(pred.size(), 0.0);
  if (pred.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  CompensatedSum total;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double raw = pred[k];
    const double p = std::clamp(raw, kProbEps, 1.0 - kProbEps);
    const bool clamped = raw < kProbEps || raw > 1.0 - kProbEps;
    if (gt[k]) {
      const double q = 1.0 - p;
      total.add(-alpha * std::pow(q, gamma) * std::log(p));
      if (!clamped) {
        double d = std::pow(q, gamma) / p;
        if (gamma != 0.0) d -= gamma * std::pow(q, gamma - 1.0) * std::log(p);
        out.grad[k] = -alpha * d * inv_n;
      }
    } else {
      const double q = 1.0 - p;
      total.add(-(1.0 - alpha) * std::pow(p, gamma) * std::log(q));
      if (!clamped) {
        double d = -std::pow(p, gamma) / q;
        if (gamma != 0.0) d += gamma * std::pow(p, gamma - 1.0) * std::log(q);
        out.grad[k] = -(1.0 - alpha) * d * inv_n;
      }
    }
  }
  out.value = total.value() * inv_n;
  return out;
}

LossValue focal_loss(const ProbabilityMap& pred, const BinaryMask& gt, double gamma, double alpha) {
  check_dims(pred, gt, "focal_loss");
  return focal_loss(to_doubles(pred), gt.bits, gamma, alpha);
}

LossValue dice_loss(std::span<const double> pred, std::span<const std::uint8_t> gt, double smooth) {
  check_same_size(pred.size(), gt.size(), "dice_loss");
  CompensatedSum inter, psum, gsum;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double g = gt[k] ? 1.0 : 0.0;
    inter.add(pred[k] * g);
    psum.add(pred[k]);
    gsum.add(g);
  }
  const double num = 2.0 * inter.value() + smooth;
  const double den = psum.value() + gsum.value() + smooth;
  LossValue out;
  out.grad.assign(pred.size(), 0.0);
  if (den == 0.0) return out;  // both empty with no smoothing: perfect
  out.value = 1.0 - num / den;
  const double den2 = den * den;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double g = gt[k] ? 1.0 : 0.0;
    out.grad[k] = -(2.0 * g * den - num) / den2;
  }
  return out;
}

LossValue dice_loss(const ProbabilityMap& pred, const BinaryMask& gt, double smooth) {
  check_dims(pred, gt, "dice_loss");
  return dice_loss(to_doubles(pred), gt.bits, smooth);
}

double thresholded_iou(std::span<const double> pred, std::span<const std::uint8_t> gt) {
  check_same_size(pred.size(), gt.size(), "thresholded_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const bool p = pred[k] > 0.5;
    const bool g = gt[k] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LossValue iou_mse_loss(double predicted_iou, double actual_iou) {
  if (!(predicted_iou >= 0.0 && predicted_iou <= 1.0) || !(actual_iou >= 0.0 && actual_iou <= 1.0)) {
    throw InvalidArgument("iou_mse_loss: IoU values must lie in [0,1]");
  }
  const double d = predicted_iou - actual_iou;
  return {d * d, {2.0 * d}};
}

LossReport sam_loss(std::span<const double> pred, std::span<const std::uint8_t> gt, double predicted_iou,
                    const SamLossConfig& cfg) {
  cfg.validate();
  const LossValue fl = focal_loss(pred, gt, cfg.focal_gamma, cfg.focal_alpha);
  const LossValue dl = dice_loss(pred, gt, cfg.dice_smooth);
  const LossValue mse = iou_mse_loss(predicted_iou, thresholded_iou(pred, gt));

  LossReport r;
  r.terms = {{"focal", cfg.omega, fl.value}, {"dice", 1.0, dl.value}, {"iou_mse", 1.0, mse.value}};
  r.total = cfg.omega * fl.value + dl.value + mse.value;
  std::vector<double> g(pred.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = cfg.omega * fl.grad[k] + dl.grad[k];
  r.gradients.emplace_back("pred", std::move(g));
  r.gradients.emplace_back("iou", mse.grad);
  return r;
}

LossReport sam_loss(const ProbabilityMap& pred, const BinaryMask& gt, double predicted_iou, const SamLossConfig& cfg) {
  check_dims(pred, gt, "sam_loss");
  return sam_loss(to_doubles(pred), gt.bits, predicted_iou, cfg);
}

LossValue prompter_cls_loss(std::span<const double> logits, std::size_t num_logits, const TargetSet& targets,
                            double beta) {
  const std::size_t m = targets.anchors.size();
  if (num_logits < 2) throw InvalidArgument("prompter_cls_loss: need at least one class plus background");
  if (logits.size() != m * num_logits) {
    throw InvalidArgument("prompter_cls_loss: " + std::to_string(logits.size()) + " logits for " + std::to_string(m) +
                          " anchors x " + std::to_string(num_logits));
  }
  if (!(beta >= 0.0)) throw InvalidArgument("prompter_cls_loss: beta must be >= 0");
  LossValue out;
  out.grad.assign(logits.size(), 0.0);
  if (m == 0) return out;
  const double inv_m = 1.0 / static_cast<double>(m);
  CompensatedSum matched, background;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = logits.subspan(i * num_logits, num_logits);
    const auto& t = targets.anchors[i];
    std::size_t target = num_logits - 1;
    double w = beta;
    if (t.cls) {
      if (*t.cls < 1 || static_cast<std::size_t>(*t.cls) >= num_logits) {
        throw InvalidArgument("prompter_cls_loss: target class " + std::to_string(*t.cls) + " out of range");
      }
      target = static_cast<std::size_t>(*t.cls) - 1;
      w = 1.0;
    }
    const auto ls = log_softmax(row);
    (t.cls ? matched : background).add(ls[target]);
    for (std::size_t k = 0; k < num_logits; ++k) {
      const double p = std::exp(ls[k]);
      out.grad[i * num_logits + k] = w * inv_m * (p - (k == target ? 1.0 : 0.0));
    }
  }
  out.value = -inv_m * (matched.value() + beta * background.value());
  return out;
}

LossValue prompter_reg_loss(std::span<const double> positions, const TargetSet& targets, double gamma) {
  const std::size_t m = targets.anchors.size();
  if (positions.size() != 2 * m) {
    throw InvalidArgument("prompter_reg_loss: " + std::to_string(positions.size()) + " coordinates for " +
                          std::to_string(m) + " anchors");
  }
  LossValue out;
  out.grad.assign(positions.size(), 0.0);
  if (targets.num_gt == 0) return out;
  const double scale = gamma / static_cast<double>(targets.num_gt);
  CompensatedSum total;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = targets.anchors[i];
    if (!t.position) continue;
    const double dx = positions[2 * i] - t.position->x;
    const double dy = positions[2 * i + 1] - t.position->y;
    const double d = std::hypot(dx, dy);
    total.add(d);
    if (d > 0.0) {
      out.grad[2 * i] = scale * dx / d;
      out.grad[2 * i + 1] = scale * dy / d;
    }
  }
  out.value = scale * total.value();
  return out;
}

LossReport prompter_total_loss(const PrompterLossInputs& in, const PrompterLossConfig& cfg) {
  cfg.validate();
  const LossValue reg = prompter_reg_loss(in.positions, in.targets, cfg.gamma);
  const LossValue cls = prompter_cls_loss(in.logits, in.num_logits, in.targets, cfg.beta);
  const LossValue aux = focal_loss(in.aux_pred, in.aux_gt, cfg.aux_focal_gamma, cfg.aux_focal_alpha);
  LossReport r;
  r.terms = {{"reg", 1.0, reg.value}, {"cls", 1.0, cls.value}, {"aux", 1.0, aux.value}};
  r.total = reg.value + cls.value + aux.value;
  r.gradients.emplace_back("positions", reg.grad);
  r.gradients.emplace_back("logits", cls.grad);
  r.gradients.emplace_back("aux_pred", aux.grad);
  return r;
}

}  // namespace nucseg
