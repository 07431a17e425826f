#include "sgol/losses.hpp"

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace sgol {

namespace {

Tensor box_tensor(const BoxC& b) {
  return Tensor::from_data({4}, {b.cx, b.cy, b.w, b.h});
}

Tensor mask_tensor(const Mask& m) {
  std::vector<double> vals(m.data.size());
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    vals[i] = m.data[i] ? 1.0 : 0.0;
  }
  return Tensor::from_data({m.height, m.width}, vals);
}

void check_logits_match_mask(const Tensor& logits, const Mask& target,
                             const char* op) {
  if (logits.rank() != 2 || logits.shape()[0] != target.height ||
      logits.shape()[1] != target.width) {
    throw TensorError(std::string(op) + ": logits shape " +
                      shape_str(logits.shape()) + " does not match target " +
                      std::to_string(target.height) + "x" +
                      std::to_string(target.width));
  }
  if (target.height == 0 || target.width == 0) {
    throw TensorError(std::string(op) + ": empty target mask");
  }
}

}  // namespace

Tensor classification_loss(const Tensor& logits,
                           const std::vector<std::size_t>& target_class,
                           const std::vector<double>& weight) {
  if (logits.rank() != 2) {
    throw TensorError("classification_loss: logits must be rank 2, got " +
                      shape_str(logits.shape()));
  }
  const std::size_t n = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  if (n == 0 || k < 2) {
    throw TensorError("classification_loss: need at least 1 query and 2 "
                      "classes, got " +
                      shape_str(logits.shape()));
  }
  if (target_class.size() != n || weight.size() != n) {
    throw TensorError(
        "classification_loss: expected " + std::to_string(n) +
        " targets and weights, got " + std::to_string(target_class.size()) +
        " and " + std::to_string(weight.size()));
  }
  std::vector<double> sel(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (target_class[i] >= k) {
      throw TensorError("classification_loss: target class " +
                        std::to_string(target_class[i]) + " out of range for " +
                        std::to_string(k) + " classes");
    }
    sel[i * k + target_class[i]] = weight[i];
  }
  Tensor pick = Tensor::from_data({n, k}, sel);
  return sum(mul(log_softmax(logits, 1), pick)) *
         (-1.0 / static_cast<double>(n));
}

Tensor classification_loss(const Tensor& obj_logits,
                           const Assignment& assignment, double eos_weight) {
  if (obj_logits.rank() != 2 || obj_logits.shape()[1] != 2) {
    throw TensorError("classification_loss: obj_logits must be (N x 2), got " +
                      shape_str(obj_logits.shape()));
  }
  const std::size_t n = obj_logits.shape()[0];
  std::vector<std::size_t> target(n, 1);  // class 1 = empty
  std::vector<double> weight(n, eos_weight);
  for (std::size_t col : assignment.col_of_row) {
    if (col >= n) {
      throw TensorError("classification_loss: assigned query " +
                        std::to_string(col) + " out of range for " +
                        std::to_string(n) + " queries");
    }
    if (target[col] == 0) {
      throw TensorError("classification_loss: query " + std::to_string(col) +
                        " assigned twice");
    }
    target[col] = 0;  // class 0 = object
    weight[col] = 1.0;
  }
  return classification_loss(obj_logits, target, weight);
}

Tensor box_loss(const Tensor& pred_box, const BoxC& gt, const LossWeights& w) {
  Tensor gt_t = box_tensor(gt);
  Tensor giou_term = -giou(pred_box, gt_t) + 1.0;
  return giou_term * w.lambda_iou + l1_box(pred_box, gt_t) * w.lambda_l1;
}

Tensor focal_loss(const Tensor& logits, const Mask& target, double alpha,
                  double gamma) {
  check_logits_match_mask(logits, target, "focal_loss");
  const std::size_t n = target.data.size();
  std::vector<double> sign(n), alpha_t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = target.data[i] != 0;
    // For positives p_t = sigmoid(x) so -log p_t = softplus(-x); for
    // negatives p_t = sigmoid(-x) so -log p_t = softplus(x). Both collapse
    // to softplus(s*x) with s = -1 for positives, +1 for negatives, and
    // (1 - p_t) = sigmoid(s*x).
    sign[i] = positive ? -1.0 : 1.0;
    alpha_t[i] = positive ? alpha : 1.0 - alpha;
  }
  Tensor s = Tensor::from_data(logits.shape(), sign);
  Tensor a = Tensor::from_data(logits.shape(), alpha_t);
  Tensor sx = mul(logits, s);
  Tensor nll = softplus(sx);
  Tensor per = gamma == 0.0 ? mul(a, nll)
                            : mul(mul(a, pow_scalar(sigmoid(sx), gamma)), nll);
  return mean(per);
}

Tensor dice_loss(const Tensor& mask_logits, const Mask& target) {
  check_logits_match_mask(mask_logits, target, "dice_loss");
  Tensor m = mask_tensor(target);
  double m_sum = 0.0;
  for (unsigned char v : target.data) m_sum += v ? 1.0 : 0.0;
  Tensor p = sigmoid(mask_logits);
  Tensor num = sum(mul(p, m)) * 2.0 + 1.0;
  Tensor den = sum(p) + (m_sum + 1.0);
  return -div(num, den) + 1.0;
}

LossBreakdown hungarian_loss(const DetectionOutput& outputs,
                             const std::vector<TargetInstance>& targets,
                             const LossWeights& w) {
  if (!outputs.boxes.defined() || outputs.boxes.rank() != 2 ||
      outputs.boxes.shape()[1] != 4) {
    throw TensorError("hungarian_loss: boxes must be (N x 4)");
  }
  if (outputs.obj_logits.defined() == outputs.class_logits.defined()) {
    throw TensorError(
        "hungarian_loss: exactly one of obj_logits/class_logits must be set");
  }
  const Tensor& logits = outputs.logits();
  const std::size_t n_queries = outputs.boxes.shape()[0];
  if (logits.rank() != 2 || logits.shape()[0] != n_queries) {
    throw TensorError("hungarian_loss: logits shape " +
                      shape_str(logits.shape()) + " does not match " +
                      std::to_string(n_queries) + " queries");
  }
  const std::size_t n_classes = logits.shape()[1];
  const std::size_t empty_class = n_classes - 1;
  const bool multiclass = outputs.is_multiclass();
  const std::size_t n_gt = targets.size();
  if (n_gt > n_queries) {
    throw TensorError("hungarian_loss: " + std::to_string(n_gt) +
                      " targets exceed " + std::to_string(n_queries) +
                      " queries");
  }

  // Match on detached values: probabilities of each target's class and the
  // current box coordinates, combined per (target, query) pair.
  Assignment asn;
  {
    NoGradGuard ng;
    Tensor probs = softmax(logits, 1);
    const std::vector<double>& pd = probs.data();
    const std::vector<double>& bd = outputs.boxes.data();
    CostMatrix cost = CostMatrix::zeros(n_gt, n_queries);
    for (std::size_t j = 0; j < n_gt; ++j) {
      const std::size_t cls = multiclass ? targets[j].class_id : 0;
      if (cls >= empty_class) {
        throw TensorError("hungarian_loss: target class " +
                          std::to_string(cls) + " out of range for " +
                          std::to_string(empty_class) + " real classes");
      }
      for (std::size_t i = 0; i < n_queries; ++i) {
        BoxC pred{bd[i * 4 + 0], bd[i * 4 + 1], bd[i * 4 + 2], bd[i * 4 + 3]};
        cost.at(j, i) = match_cost(pd[i * n_classes + cls], pred,
                                   targets[j].box, w.lambda_iou, w.lambda_l1);
      }
    }
    asn = hungarian(cost);
  }

  std::vector<std::size_t> target_class(n_queries, empty_class);
  std::vector<double> weight(n_queries, w.eos_weight);
  // (query, target) pairs sorted by query index: matched-term summation in
  // a fixed order keeps the total bit-identical under target reordering.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n_gt);
  for (std::size_t j = 0; j < n_gt; ++j) {
    const std::size_t q = asn.col_of_row[j];
    target_class[q] = multiclass ? targets[j].class_id : 0;
    weight[q] = 1.0;
    pairs.emplace_back(q, j);
  }
  std::sort(pairs.begin(), pairs.end());

  Tensor cls_loss = classification_loss(logits, target_class, weight);

  const bool use_masks = outputs.mask_logits.defined();
  std::size_t mask_h = 0, mask_w = 0;
  if (use_masks) {
    if (outputs.mask_logits.rank() != 3 ||
        outputs.mask_logits.shape()[0] != n_queries) {
      throw TensorError("hungarian_loss: mask_logits must be (N x H x W)");
    }
    mask_h = outputs.mask_logits.shape()[1];
    mask_w = outputs.mask_logits.shape()[2];
  }

  Tensor giou_part = Tensor::scalar(0.0);
  Tensor l1_part = Tensor::scalar(0.0);
  Tensor focal_part = Tensor::scalar(0.0);
  Tensor dice_part = Tensor::scalar(0.0);
  for (const auto& [q, j] : pairs) {
    Tensor pred_box = reshape(slice(outputs.boxes, 0, q, 1), {4});
    Tensor gt_t = box_tensor(targets[j].box);
    giou_part = giou_part + (-giou(pred_box, gt_t) + 1.0);
    l1_part = l1_part + l1_box(pred_box, gt_t);
    if (use_masks) {
      const Mask& gt_mask = targets[j].mask;
      if (gt_mask.height != mask_h || gt_mask.width != mask_w) {
        throw TensorError(
            "hungarian_loss: target mask " + std::to_string(gt_mask.height) +
            "x" + std::to_string(gt_mask.width) + " does not match mask "
            "logits " + std::to_string(mask_h) + "x" + std::to_string(mask_w));
      }
      Tensor pred_mask =
          reshape(slice(outputs.mask_logits, 0, q, 1), {mask_h, mask_w});
      focal_part =
          focal_part + focal_loss(pred_mask, gt_mask, w.focal_alpha,
                                  w.focal_gamma);
      dice_part = dice_part + dice_loss(pred_mask, gt_mask);
    }
  }
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, n_gt));
  giou_part = giou_part * norm;
  l1_part = l1_part * norm;
  focal_part = focal_part * norm;
  dice_part = dice_part * norm;

  LossBreakdown out;
  out.total = cls_loss + giou_part * w.lambda_iou + l1_part * w.lambda_l1 +
              focal_part * w.lambda_focal + dice_part * w.lambda_dice;
  out.classification = cls_loss.value();
  out.box_giou = giou_part.value();
  out.box_l1 = l1_part.value();
  out.mask_focal = focal_part.value();
  out.mask_dice = dice_part.value();
  return out;
}

}  // namespace sgol
