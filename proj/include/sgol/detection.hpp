#pragma once

#include <cstddef>
#include <vector>

#include "sgol/geometry.hpp"
#include "sgol/tensor.hpp"

namespace sgol {

/// One ground-truth instance as seen by the losses: a box, a class id in the
/// model's vocabulary, and (when instance masks are enabled) a binary mask at
/// the resolution the mask head predicts.
struct TargetInstance {
  BoxC box;
  std::size_t class_id = 0;
  Mask mask;  // empty (height == 0) when masks are not in play

  bool has_mask() const { return mask.height > 0; }
};

/// Raw per-query model outputs. Binary variants populate obj_logits (N×2,
/// {object, empty}); the multi-class variant populates class_logits
/// (N×(C+1)) with the empty class last. Exactly one of the two is defined.
struct DetectionOutput {
  Tensor boxes;         // (N×4) center-form, sigmoid range (0,1)
  Tensor obj_logits;    // (N×2) or undefined
  Tensor class_logits;  // (N×(C+1)) or undefined
  Tensor mask_logits;   // (N×Hm×Wm) or undefined

  bool is_multiclass() const { return class_logits.defined(); }
  const Tensor& logits() const {
    return is_multiclass() ? class_logits : obj_logits;
  }
  std::size_t num_queries() const { return boxes.shape()[0]; }
};

/// One post-processed detection.
struct Detection {
  BoxC box;
  double score = 0.0;
  std::size_t label = 0;
  Mask mask;  // empty when masks are not in play

  bool has_mask() const { return mask.height > 0; }
};

using DetectionSet = std::vector<Detection>;

}  // namespace sgol
