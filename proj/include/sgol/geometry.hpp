#pragma once

#include <cstdint>
#include <vector>

#include "sgol/tensor.hpp"

namespace sgol {

/// Box in normalized center form: center (cx, cy), extents (w, h).
struct BoxC {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

/// Box in corner form, x0 <= x1 and y0 <= y1.
struct BoxXYXY {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
};

/// Binary instance mask, row-major, one byte per pixel (0 or 1).
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(std::size_t y, std::size_t x) const {
    return data[y * width + x];
  }
  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
};

Mask make_mask(std::size_t height, std::size_t width);

BoxXYXY to_xyxy(const BoxC& b);
BoxC to_cxcywh(const BoxXYXY& b);

/// |A∩B| / |A∪B|; 0 when the union has zero area.
double iou(const BoxXYXY& a, const BoxXYXY& b);

/// IoU − (|C| − |A∪B|)/|C| with C the tightest enclosing box; 0 when the
/// union or the enclosing box has zero area.
double giou(const BoxXYXY& a, const BoxXYXY& b);

/// Sum of absolute coordinate differences in center form.
double l1_box(const BoxC& a, const BoxC& b);

/// |a∧b| / |a∨b| over pixels; 1 when both masks are empty.
/// Throws TensorError on shape mismatch.
double mask_iou(const Mask& a, const Mask& b);

// Differentiable counterparts on 4-element center-form tensors (cx,cy,w,h).
// Degenerate configurations (zero-area union or enclosing box) yield a
// constant 0 with zero gradient.
Tensor giou(const Tensor& a_cxcywh, const Tensor& b_cxcywh);
Tensor l1_box(const Tensor& a_cxcywh, const Tensor& b_cxcywh);

}  // namespace sgol
