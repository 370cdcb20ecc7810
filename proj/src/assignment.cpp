#include "nucseg/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "nucseg/error.hpp"

namespace nucseg {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - mx);
    z += out[k];
  }
  for (auto& v : out) v /= z;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lz = mx + std::log(z);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lz;
  return out;
}

std::vector<double> PromptCandidate::probabilities() const { return softmax(logits); }

double edge_weight(const PromptCandidate& cand, const Point& gt, int gt_class, double alpha) {
  const auto c = cand.num_classes();
  if (gt_class < 1 || static_cast<std::size_t>(gt_class) > c) {
    throw InvalidArgument("edge_weight: class " + std::to_string(gt_class) + " outside 1.." + std::to_string(c));
  }
  if (!(alpha >= 0.0)) throw InvalidArgument("edge_weight: alpha must be >= 0");
  const auto probs = softmax(cand.logits);
  return probs[static_cast<std::size_t>(gt_class) - 1] - alpha * distance(cand.position, gt);
}

Matrix build_weight_matrix(std::span<const PromptCandidate> cands, const GroundTruthPoints& gts, double alpha) {
  if (!(alpha >= 0.0)) throw InvalidArgument("build_weight_matrix: alpha must be >= 0");
  Matrix w(cands.size(), gts.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto probs = softmax(cands[i].logits);
    const auto c = cands[i].num_classes();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const int cls = gts[j].cls;
      if (cls < 1 || static_cast<std::size_t>(cls) > c) {
        throw InvalidArgument("build_weight_matrix: gt " + std::to_string(j) + " has class " + std::to_string(cls) +
                              " outside 1.." + std::to_string(c));
      }
      w(i, j) = probs[static_cast<std::size_t>(cls) - 1] - alpha * distance(cands[i].position, gts[j].pos);
    }
  }
  return w;
}

double matching_weight(const Matrix& weights, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  double total = 0.0;
  for (const auto& [a, g] : pairs) total += weights(a, g);
  return total;
}

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct Pairing {
  std::vector<std::size_t> row_mate;
  std::vector<std::size_t> col_mate;

  void link(std::size_t r, std::size_t c) {
    row_mate[r] = c;
    col_mate[c] = r;
  }
  void unlink_row(std::size_t r) {
    if (row_mate[r] != kNone) col_mate[row_mate[r]] = kNone;
    row_mate[r] = kNone;
  }
  void unlink_col(std::size_t c) {
    if (col_mate[c] != kNone) row_mate[col_mate[c]] = kNone;
    col_mate[c] = kNone;
  }
};

// Picks the lexicographically smallest optimum among all optimal
// assignments. Optimal assignments are exactly those that use only tight
// edges (zero reduced cost under the optimal potentials), cover every row,
// and cover every column with a negative potential. Two matchings are
// maintained: one covering the rows, one covering the required columns; a
// single matching covering both exists whenever both do.
class LexRefiner {
 public:
  LexRefiner(const Matrix& cost, const AssignmentSolution& sol) : n_(cost.rows()), m_(cost.cols()) {
    double scale = 1.0;
    for (double v : cost.data()) scale = std::max(scale, std::abs(v));
    const double tol = 1e-9 * scale;
    row_adj_.resize(n_);
    col_adj_.resize(m_);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < m_; ++j) {
        if (cost(i, j) - sol.row_potential[i] - sol.col_potential[j] <= tol) {
          row_adj_[i].push_back(j);
          col_adj_[j].push_back(i);
        }
      }
    }
    required_.resize(m_);
    for (std::size_t j = 0; j < m_; ++j) required_[j] = sol.col_potential[j] < -tol;
    row_locked_.assign(n_, 0);
    col_locked_.assign(m_, 0);
    cover_rows_.row_mate.assign(n_, kNone);
    cover_rows_.col_mate.assign(m_, kNone);
    for (std::size_t i = 0; i < n_; ++i) cover_rows_.link(i, sol.row_to_col[i]);
    cover_required_ = cover_rows_;
  }

  const std::vector<std::size_t>& row_candidates(std::size_t r) const { return row_adj_[r]; }
  const std::vector<std::size_t>& col_candidates(std::size_t c) const { return col_adj_[c]; }
  bool row_locked(std::size_t r) const { return row_locked_[r] != 0; }
  bool col_locked(std::size_t c) const { return col_locked_[c] != 0; }

  bool try_force(std::size_t r, std::size_t c) {
    row_locked_[r] = col_locked_[c] = 1;

    Pairing rows = cover_rows_;
    const std::size_t displaced_row = rows.col_mate[c];
    rows.unlink_row(r);
    rows.unlink_col(c);
    rows.link(r, c);
    if (displaced_row != kNone && displaced_row != r && !augment_row(rows, displaced_row)) {
      row_locked_[r] = col_locked_[c] = 0;
      return false;
    }

    Pairing req = cover_required_;
    const std::size_t displaced_col = req.row_mate[r];
    req.unlink_row(r);
    req.unlink_col(c);
    req.link(r, c);
    if (displaced_col != kNone && displaced_col != c && required_[displaced_col] && !augment_col(req, displaced_col)) {
      row_locked_[r] = col_locked_[c] = 0;
      return false;
    }

    cover_rows_ = std::move(rows);
    cover_required_ = std::move(req);
    return true;
  }

  bool try_exclude_col(std::size_t c) {
    if (required_[c]) return false;
    col_locked_[c] = 1;
    Pairing rows = cover_rows_;
    const std::size_t displaced_row = rows.col_mate[c];
    rows.unlink_col(c);
    if (displaced_row != kNone && !augment_row(rows, displaced_row)) {
      col_locked_[c] = 0;
      return false;
    }
    cover_rows_ = std::move(rows);
    cover_required_.unlink_col(c);
    return true;
  }

  std::vector<std::size_t> assignment() const { return cover_rows_.row_mate; }

 private:
  bool augment_row(Pairing& p, std::size_t r) {
    seen_.assign(m_, 0);
    return augment_row_rec(p, r);
  }

  bool augment_row_rec(Pairing& p, std::size_t r) {
    for (std::size_t c : row_adj_[r]) {
      if (col_locked_[c] || seen_[c]) continue;
      seen_[c] = 1;
      if (p.col_mate[c] == kNone || augment_row_rec(p, p.col_mate[c])) {
        p.link(r, c);
        return true;
      }
    }
    return false;
  }

  bool augment_col(Pairing& p, std::size_t c) {
    seen_.assign(n_, 0);
    return augment_col_rec(p, c);
  }

  bool augment_col_rec(Pairing& p, std::size_t c) {
    for (std::size_t r : col_adj_[c]) {
      if (row_locked_[r] || seen_[r]) continue;
      seen_[r] = 1;
      const std::size_t held = p.row_mate[r];
      if (held == kNone) {
        p.link(r, c);
        return true;
      }
      if (!required_[held]) {
        p.col_mate[held] = kNone;
        p.link(r, c);
        return true;
      }
      if (augment_col_rec(p, held)) {
        p.link(r, c);
        return true;
      }
    }
    return false;
  }

  std::size_t n_, m_;
  std::vector<std::vector<std::size_t>> row_adj_, col_adj_;
  std::vector<char> required_, row_locked_, col_locked_, seen_;
  Pairing cover_rows_, cover_required_;
};

std::optional<std::vector<std::size_t>> lexicographic_optimum(const Matrix& cost, const AssignmentSolution& sol,
                                                              bool gts_are_rows) {
  LexRefiner lex(cost, sol);
  if (gts_are_rows) {
    for (std::size_t g = 0; g < cost.rows(); ++g) {
      bool fixed = false;
      for (std::size_t a : lex.row_candidates(g)) {
        if (lex.col_locked(a)) continue;
        if ((fixed = lex.try_force(g, a))) break;
      }
      if (!fixed) return std::nullopt;
    }
  } else {
    for (std::size_t g = 0; g < cost.cols(); ++g) {
      bool fixed = false;
      for (std::size_t a : lex.col_candidates(g)) {
        if (lex.row_locked(a)) continue;
        if ((fixed = lex.try_force(a, g))) break;
      }
      if (!fixed && !lex.try_exclude_col(g)) return std::nullopt;
    }
  }
  auto rows = lex.assignment();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] == kNone || !lex.row_locked(r)) return std::nullopt;
  }
  return rows;
}

Matching finish(const Matrix& weights, std::vector<std::pair<std::size_t, std::size_t>> pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  Matching m;
  std::vector<char> anchor_used(weights.rows(), 0), gt_used(weights.cols(), 0);
  for (const auto& [a, g] : pairs) {
    anchor_used[a] = 1;
    gt_used[g] = 1;
  }
  for (std::size_t a = 0; a < weights.rows(); ++a)
    if (!anchor_used[a]) m.unmatched_anchors.push_back(a);
  for (std::size_t g = 0; g < weights.cols(); ++g)
    if (!gt_used[g]) m.unassigned_gts.push_back(g);
  m.total_weight = matching_weight(weights, pairs);
  m.pairs = std::move(pairs);
  return m;
}

void require_finite(const Matrix& weights, const char* who) {
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    for (std::size_t c = 0; c < weights.cols(); ++c) {
      if (!std::isfinite(weights(r, c))) {
        throw InvalidArgument(std::string(who) + ": non-finite weight at (" + std::to_string(r) + ", " +
                              std::to_string(c) + ")");
      }
    }
  }
}

}  // namespace

Matching hungarian_match(const Matrix& weights) {
  require_finite(weights, "hungarian_match");
  const std::size_t num_anchors = weights.rows();
  const std::size_t num_gt = weights.cols();
  if (num_anchors == 0 || num_gt == 0) return finish(weights, {});

  // Rows of the cost matrix are the smaller side.
  const bool gts_are_rows = num_gt <= num_anchors;
  Matrix cost = gts_are_rows ? weights.transposed() : weights;
  for (std::size_t r = 0; r < cost.rows(); ++r)
    for (std::size_t c = 0; c < cost.cols(); ++c) cost(r, c) = -cost(r, c);

  const AssignmentSolution sol = solve_min_cost(cost);
  auto to_pairs = [&](const std::vector<std::size_t>& row_to_col) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t r = 0; r < row_to_col.size(); ++r) {
      pairs.emplace_back(gts_are_rows ? row_to_col[r] : r, gts_are_rows ? r : row_to_col[r]);
    }
    return pairs;
  };

  Matching plain = finish(weights, to_pairs(sol.row_to_col));
  const auto lex = lexicographic_optimum(cost, sol, gts_are_rows);
  if (!lex) return plain;
  Matching refined = finish(weights, to_pairs(*lex));
  // The tight-edge tolerance must never trade optimality for order.
  const double slack = 1e-12 * (1.0 + std::abs(plain.total_weight)) * static_cast<double>(plain.pairs.size());
  return refined.total_weight >= plain.total_weight - slack ? refined : plain;
}

Matching exhaustive_match(const Matrix& weights) {
  require_finite(weights, "exhaustive_match");
  const std::size_t m = weights.rows();
  const std::size_t n = weights.cols();
  const std::size_t need = std::min(m, n);
  if (need > 8) throw InvalidArgument("exhaustive_match: min(M, N) must be <= 8");

  std::vector<std::pair<std::size_t, std::size_t>> current, best;
  double best_total = -std::numeric_limits<double>::infinity();
  bool found = false;
  std::vector<char> used(m, 0);

  // Gts in order; each takes an anchor (ascending) or is skipped. This visits
  // pair lists in lexicographic order, so the first strict maximum wins ties.
  std::function<void(std::size_t, double)> visit = [&](std::size_t g, double total) {
    if (current.size() == need) {
      if (!found || total > best_total) {
        best_total = total;
        best = current;
        found = true;
      }
      return;
    }
    if (g == n) return;
    for (std::size_t a = 0; a < m; ++a) {
      if (used[a]) continue;
      used[a] = 1;
      current.emplace_back(a, g);
      visit(g + 1, total + weights(a, g));
      current.pop_back();
      used[a] = 0;
    }
    if (n - g - 1 >= need - current.size()) visit(g + 1, total);
  };
  visit(0, 0.0);
  return finish(weights, best);
}

std::size_t TargetSet::num_matched() const {
  return static_cast<std::size_t>(std::count_if(anchors.begin(), anchors.end(), [](const AnchorTarget& t) { return t.cls.has_value(); }));
}

TargetSet derive_targets(const Matching& match, const GroundTruthPoints& gts, std::size_t num_anchors) {
  TargetSet t;
  t.anchors.resize(num_anchors);
  t.num_gt = gts.size();
  for (const auto& [a, g] : match.pairs) {
    if (a >= num_anchors || g >= gts.size()) {
      throw InvalidArgument("derive_targets: pair (" + std::to_string(a) + ", " + std::to_string(g) + ") out of range");
    }
    t.anchors[a] = {gts[g].cls, gts[g].pos, g};
  }
  return t;
}

}  // namespace nucseg
