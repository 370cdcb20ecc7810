#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nucseg {

struct GradCheckResult {
  std::string loss;
  std::size_t points = 0;
  double max_relative_error = 0.0;
};

/// max_k |a_k - n_k| / max(max_k |a_k|, max_k |n_k|, 1e-12).
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of f at x with step h, one coordinate at a time.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h);

/// Compares analytic and finite-difference gradients of every loss at
/// `points` random configurations each.
std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed, std::size_t points = 100, double h = 1e-5);

}  // namespace nucseg
