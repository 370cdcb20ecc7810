#include "nucseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nucseg/corpus.hpp"
#include "nucseg/losses.hpp"

namespace nucseg {

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
    scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  }
  return diff / scale;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = probe[k];
    probe[k] = keep + h;
    const double up = f(probe);
    probe[k] = keep - h;
    const double down = f(probe);
    probe[k] = keep;
    out[k] = (up - down) / (2.0 * h);
  }
  return out;
}

namespace {

double in_range(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::vector<double> random_probs(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> p(n);
  for (auto& v : p) v = in_range(rng, 0.02, 0.98);
  return p;
}

std::vector<std::uint8_t> random_bits(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::uint8_t> g(n);
  for (auto& v : g) v = uniform01(rng) < 0.4 ? 1 : 0;
  return g;
}

TargetSet random_targets(std::mt19937_64& rng, std::size_t m, std::size_t classes) {
  TargetSet t;
  t.anchors.resize(m);
  for (auto& a : t.anchors) {
    if (uniform01(rng) < 0.5) {
      a.cls = static_cast<int>(uniform_int(rng, 1, static_cast<std::int64_t>(classes)));
      a.position = Point{in_range(rng, 0.0, 64.0), in_range(rng, 0.0, 64.0)};
      ++t.num_gt;
    }
  }
  if (t.num_gt == 0) {
    t.anchors[0].cls = 1;
    t.anchors[0].position = Point{in_range(rng, 0.0, 64.0), in_range(rng, 0.0, 64.0)};
    t.num_gt = 1;
  }
  return t;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed, std::size_t points, double h) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> results = {{"focal", points, 0.0}, {"dice", points, 0.0},   {"iou_mse", points, 0.0},
                                          {"cls", points, 0.0},   {"reg", points, 0.0},    {"sam", points, 0.0},
                                          {"prompter_total", points, 0.0}};
  auto record = [&](std::size_t which, std::span<const double> a, std::span<const double> n) {
    results[which].max_relative_error = std::max(results[which].max_relative_error, gradient_relative_error(a, n));
  };

  for (std::size_t pt = 0; pt < points; ++pt) {
    const std::size_t pixels = static_cast<std::size_t>(uniform_int(rng, 4, 64));
    const auto gt = random_bits(rng, pixels);

    {
      const auto p = random_probs(rng, pixels);
      const double g = in_range(rng, 0.0, 3.0), a = in_range(rng, 0.1, 0.9);
      const auto fd = central_difference([&](std::span<const double> x) { return focal_loss(x, gt, g, a).value; }, p, h);
      record(0, focal_loss(p, gt, g, a).grad, fd);
    }
    {
      const auto p = random_probs(rng, pixels);
      const double s = in_range(rng, 0.0, 2.0);
      const auto fd = central_difference([&](std::span<const double> x) { return dice_loss(x, gt, s).value; }, p, h);
      record(1, dice_loss(p, gt, s).grad, fd);
    }
    {
      const std::vector<double> nu_pred = {in_range(rng, 0.05, 0.95)};
      const double nu = uniform01(rng);
      const auto fd =
          central_difference([&](std::span<const double> x) { return iou_mse_loss(x[0], nu).value; }, nu_pred, h);
      record(2, iou_mse_loss(nu_pred[0], nu).grad, fd);
    }
    {
      const auto m = static_cast<std::size_t>(uniform_int(rng, 1, 8));
      const auto c = static_cast<std::size_t>(uniform_int(rng, 1, 4));
      const auto targets = random_targets(rng, m, c);
      std::vector<double> logits(m * (c + 1));
      for (auto& l : logits) l = in_range(rng, -4.0, 4.0);
      const double beta = in_range(rng, 0.05, 2.0);
      const auto fd = central_difference(
          [&](std::span<const double> x) { return prompter_cls_loss(x, c + 1, targets, beta).value; }, logits, h);
      record(3, prompter_cls_loss(logits, c + 1, targets, beta).grad, fd);
    }
    {
      const auto m = static_cast<std::size_t>(uniform_int(rng, 1, 8));
      const auto targets = random_targets(rng, m, 1);
      std::vector<double> pos(2 * m);
      for (auto& v : pos) v = in_range(rng, 0.0, 64.0);
      const double gamma = in_range(rng, 0.01, 3.0);
      const auto fd = central_difference(
          [&](std::span<const double> x) { return prompter_reg_loss(x, targets, gamma).value; }, pos, h);
      record(4, prompter_reg_loss(pos, targets, gamma).grad, fd);
    }
    {
      SamLossConfig cfg;
      cfg.omega = in_range(rng, 1.0, 30.0);
      const auto p = random_probs(rng, pixels);
      const double nu_pred = uniform01(rng);
      const auto fd =
          central_difference([&](std::span<const double> x) { return sam_loss(x, gt, nu_pred, cfg).total; }, p, h);
      const auto report = sam_loss(p, gt, nu_pred, cfg);
      record(5, report.gradients.front().second, fd);
    }
    {
      const auto m = static_cast<std::size_t>(uniform_int(rng, 1, 6));
      const auto c = static_cast<std::size_t>(uniform_int(rng, 1, 3));
      PrompterLossInputs in;
      in.targets = random_targets(rng, m, c);
      in.num_logits = c + 1;
      in.logits.resize(m * (c + 1));
      for (auto& l : in.logits) l = in_range(rng, -3.0, 3.0);
      in.positions.resize(2 * m);
      for (auto& v : in.positions) v = in_range(rng, 0.0, 64.0);
      in.aux_pred = random_probs(rng, pixels);
      in.aux_gt = gt;
      const PrompterLossConfig cfg;
      // Stack every differentiable input into one vector.
      std::vector<double> x = in.positions;
      x.insert(x.end(), in.logits.begin(), in.logits.end());
      x.insert(x.end(), in.aux_pred.begin(), in.aux_pred.end());
      auto unpack = [&](std::span<const double> v) {
        PrompterLossInputs copy = in;
        std::copy_n(v.begin(), copy.positions.size(), copy.positions.begin());
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(copy.positions.size()), copy.logits.size(), copy.logits.begin());
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(copy.positions.size() + copy.logits.size()),
                    copy.aux_pred.size(), copy.aux_pred.begin());
        return copy;
      };
      const auto fd =
          central_difference([&](std::span<const double> v) { return prompter_total_loss(unpack(v), cfg).total; }, x, h);
      const auto report = prompter_total_loss(in, cfg);
      std::vector<double> analytic;
      for (const auto& [name, g] : report.gradients) analytic.insert(analytic.end(), g.begin(), g.end());
      record(6, analytic, fd);
    }
  }
  return results;
}

}  // namespace nucseg
