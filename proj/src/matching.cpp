#include "sgol/matching.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace sgol {

namespace {

void validate(const char* op, const CostMatrix& m) {
  if (m.values.size() != m.rows * m.cols) {
    throw TensorError(std::string(op) + ": cost matrix storage mismatch");
  }
  if (m.rows > m.cols) {
    throw TensorError(std::string(op) + ": more rows (" +
                      std::to_string(m.rows) + ") than columns (" +
                      std::to_string(m.cols) + ")");
  }
  for (double v : m.values) {
    if (!std::isfinite(v)) {
      throw TensorError(std::string(op) + ": non-finite cost entry");
    }
  }
}

// Jonker-Volgenant style shortest augmenting path with dual potentials,
// 1-based internally with column 0 as the virtual source.
std::vector<std::size_t> solve_jv(const CostMatrix& m) {
  std::size_t n = m.rows, w = m.cols;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(w + 1, 0.0);
  std::vector<std::size_t> p(w + 1, 0), way(w + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(w + 1, inf);
    std::vector<char> used(w + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= w; ++j) {
        if (used[j]) continue;
        double cur = m.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= w; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= w; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

// Re-solves the suffix rows over the unused columns; empty when r covers all
// rows. Returns the full candidate column sequence with row `r` pinned to
// `c`, or empty when infeasible (never at rows <= cols).
std::vector<std::size_t> candidate_with_pin(
    const CostMatrix& m, const std::vector<std::size_t>& current,
    std::size_t r, std::size_t c) {
  std::vector<std::size_t> result(current.begin(), current.begin() + r);
  result.push_back(c);

  std::size_t tail = m.rows - r - 1;
  if (tail == 0) return result;

  std::vector<char> taken(m.cols, 0);
  for (std::size_t q : result) taken[q] = 1;
  std::vector<std::size_t> free_cols;
  for (std::size_t j = 0; j < m.cols; ++j) {
    if (!taken[j]) free_cols.push_back(j);
  }

  CostMatrix sub = CostMatrix::zeros(tail, free_cols.size());
  for (std::size_t i = 0; i < tail; ++i) {
    for (std::size_t j = 0; j < free_cols.size(); ++j) {
      sub.at(i, j) = m.at(r + 1 + i, free_cols[j]);
    }
  }
  std::vector<std::size_t> sub_cols = solve_jv(sub);
  for (std::size_t q : sub_cols) result.push_back(free_cols[q]);
  return result;
}

// Walks rows in order and moves each to the smallest column that still
// admits a completion with exactly the optimal row-order cost sum. A no-op
// when the optimum is unique; on exact ties it pins down the
// lexicographically smallest optimal column sequence.
std::vector<std::size_t> canonicalize(const CostMatrix& m,
                                      std::vector<std::size_t> cols,
                                      double best_cost) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < cols[r]; ++c) {
      bool used_above = false;
      for (std::size_t q = 0; q < r && !used_above; ++q) {
        used_above = cols[q] == c;
      }
      if (used_above) continue;
      std::vector<std::size_t> candidate = candidate_with_pin(m, cols, r, c);
      if (assignment_cost(m, candidate) == best_cost) {
        cols = std::move(candidate);
        break;
      }
    }
  }
  return cols;
}

}  // namespace

CostMatrix CostMatrix::zeros(std::size_t rows, std::size_t cols) {
  CostMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.values.assign(rows * cols, 0.0);
  return m;
}

double assignment_cost(const CostMatrix& cost,
                       const std::vector<std::size_t>& col_of_row) {
  double total = 0.0;
  for (std::size_t r = 0; r < col_of_row.size(); ++r) {
    total += cost.at(r, col_of_row[r]);
  }
  return total;
}

Assignment hungarian(const CostMatrix& cost) {
  validate("hungarian", cost);
  if (cost.rows == 0) return {};

  std::vector<std::size_t> cols = solve_jv(cost);
  double total = assignment_cost(cost, cols);
  cols = canonicalize(cost, std::move(cols), total);
  return {cols, assignment_cost(cost, cols)};
}

Assignment brute_force_assignment(const CostMatrix& cost) {
  validate("brute_force_assignment", cost);
  if (cost.rows > 8) {
    throw TensorError("brute_force_assignment: instance too large (" +
                      std::to_string(cost.rows) + " rows)");
  }
  if (cost.rows == 0) return {};

  Assignment best;
  best.cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> picked(cost.rows, 0);
  std::vector<char> used(cost.cols, 0);

  // Depth-first in ascending column order visits column sequences
  // lexicographically; strict improvement keeps the first optimum.
  auto recurse = [&](auto&& self, std::size_t r, double acc) -> void {
    if (r == cost.rows) {
      if (acc < best.cost) {
        best.cost = acc;
        best.col_of_row = picked;
      }
      return;
    }
    for (std::size_t c = 0; c < cost.cols; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      picked[r] = c;
      self(self, r + 1, acc + cost.at(r, c));
      used[c] = 0;
    }
  };
  recurse(recurse, 0, 0.0);
  return best;
}

double match_cost(double pred_obj_prob, const BoxC& pred_box,
                  const BoxC& gt_box, double lambda_iou, double lambda_l1) {
  double g = giou(to_xyxy(pred_box), to_xyxy(gt_box));
  return -pred_obj_prob + lambda_iou * (1.0 - g) +
         lambda_l1 * l1_box(pred_box, gt_box);
}

}  // namespace sgol
