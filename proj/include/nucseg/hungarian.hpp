#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace nucseg {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Optimal solution of a rectangular min-cost assignment with rows <= cols:
/// every row gets a distinct column. The potentials satisfy
/// row_potential[i] + col_potential[j] <= cost(i, j), with equality on
/// assigned pairs and col_potential == 0 on unassigned columns.
struct AssignmentSolution {
  std::vector<std::size_t> row_to_col;
  std::vector<double> row_potential;
  std::vector<double> col_potential;
  double cost = 0.0;
};

/// Shortest-augmenting-path Hungarian method, O(rows^2 * cols).
/// Throws InvalidArgument when rows > cols or an entry is not finite.
AssignmentSolution solve_min_cost(const Matrix& cost);

}  // namespace nucseg
