#pragma once

#include <cstddef>
#include <vector>

#include "sgol/geometry.hpp"

namespace sgol {

/// Pair-wise matching costs: one row per ground-truth instance, one column
/// per predicted slot. Requires rows <= cols and finite entries.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  static CostMatrix zeros(std::size_t rows, std::size_t cols);
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

/// Injective row -> column map with its total cost. The cost is always the
/// sum of the selected entries in ascending row order, so equal assignments
/// from different solvers compare bit-identically.
struct Assignment {
  std::vector<std::size_t> col_of_row;
  double cost = 0.0;
};

/// Sum of cost(r, cols[r]) in ascending row order.
double assignment_cost(const CostMatrix& cost,
                       const std::vector<std::size_t>& col_of_row);

/// Minimum-cost injective assignment of every row (shortest augmenting path
/// with potentials). Ties are broken toward the lexicographically smallest
/// column sequence among assignments whose row-order cost sum is exactly
/// equal to the optimum.
Assignment hungarian(const CostMatrix& cost);

/// Exhaustive minimum over all injections, same tie rule. Testing oracle;
/// rejects instances with more than 8 rows.
Assignment brute_force_assignment(const CostMatrix& cost);

/// Matching cost between one predicted slot and one ground-truth box:
/// -p(object) + lambda_iou * (1 - giou) + lambda_l1 * l1. Plain doubles;
/// no gradient flows through the matching step.
double match_cost(double pred_obj_prob, const BoxC& pred_box,
                  const BoxC& gt_box, double lambda_iou, double lambda_l1);

}  // namespace sgol
