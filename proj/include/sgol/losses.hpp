#pragma once

#include <cstddef>
#include <vector>

#include "sgol/detection.hpp"
#include "sgol/geometry.hpp"
#include "sgol/matching.hpp"
#include "sgol/tensor.hpp"

namespace sgol {

/// Loss hyper-parameters. Defaults are the reference values used throughout.
struct LossWeights {
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
  double eos_weight = 0.1;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double lambda_focal = 1.0;
  double lambda_dice = 1.0;
};

/// Components of the set-prediction loss. `total` is the differentiable
/// scalar used for backward; the doubles mirror the unweighted component
/// values, so total == classification + lambda_iou*box_giou +
/// lambda_l1*box_l1 + lambda_focal*mask_focal + lambda_dice*mask_dice.
struct LossBreakdown {
  Tensor total;
  double classification = 0.0;
  double box_giou = 0.0;
  double box_l1 = 0.0;
  double mask_focal = 0.0;
  double mask_dice = 0.0;
};

/// Cross-entropy over {object, empty} logits (N×2), weighted per query:
/// queries assigned to a target get class 0 (object) with weight 1, the
/// rest get class 1 (empty) with weight eos_weight. Mean over the N queries
/// (weighted sum divided by N).
Tensor classification_loss(const Tensor& obj_logits,
                           const Assignment& assignment, double eos_weight);

/// General form: explicit per-query target class and weight; logits are
/// (N×K). Used by the multi-class variant.
Tensor classification_loss(const Tensor& logits,
                           const std::vector<std::size_t>& target_class,
                           const std::vector<double>& weight);

/// Per-pair box regression loss: lambda_iou*(1 - giou) + lambda_l1*l1.
/// `pred_box` is a 4-element center-form tensor; gradients flow into it.
Tensor box_loss(const Tensor& pred_box, const BoxC& gt, const LossWeights& w);

/// Sigmoid focal loss, mean over all positions of
/// alpha_t * (1 - p_t)^gamma * (-log p_t) where p_t is the predicted
/// probability of the true label and alpha_t = alpha for positives,
/// (1 - alpha) for negatives. Computed in a softplus form that never
/// evaluates log of a saturated sigmoid.
Tensor focal_loss(const Tensor& logits, const Mask& target, double alpha,
                  double gamma);

/// Soft dice loss 1 - (2*sum(m*sigmoid(l)) + 1) / (sum(sigmoid(l)) +
/// sum(m) + 1) with additive smoothing of 1 in both numerator and
/// denominator.
Tensor dice_loss(const Tensor& mask_logits, const Mask& target);

/// Full set-prediction loss: Hungarian-match targets to queries on detached
/// costs, then sum classification over all queries plus box (and, when mask
/// logits and target masks are present, focal+dice) terms over matched
/// pairs, the matched terms normalized by max(1, n_targets). Matched-pair
/// sums run in query-index order, so the result is invariant to the order
/// in which targets are listed.
LossBreakdown hungarian_loss(const DetectionOutput& outputs,
                             const std::vector<TargetInstance>& targets,
                             const LossWeights& w);

}  // namespace sgol
