#include "sgol/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace sgol {

namespace {

double box_area(const BoxXYXY& b) { return (b.x1 - b.x0) * (b.y1 - b.y0); }

struct Overlap {
  double inter;
  double uni;
  double enclosing;
};

Overlap overlap(const BoxXYXY& a, const BoxXYXY& b) {
  double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  double uni = box_area(a) + box_area(b) - inter;
  double cw = std::max(a.x1, b.x1) - std::min(a.x0, b.x0);
  double ch = std::max(a.y1, b.y1) - std::min(a.y0, b.y0);
  return {inter, uni, cw * ch};
}

}  // namespace

Mask make_mask(std::size_t height, std::size_t width) {
  Mask m;
  m.height = height;
  m.width = width;
  m.data.assign(height * width, 0);
  return m;
}

BoxXYXY to_xyxy(const BoxC& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0,
          b.cy + b.h / 2.0};
}

BoxC to_cxcywh(const BoxXYXY& b) {
  return {(b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0, b.x1 - b.x0, b.y1 - b.y0};
}

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  Overlap o = overlap(a, b);
  if (o.uni <= 0.0) return 0.0;
  return o.inter / o.uni;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
  Overlap o = overlap(a, b);
  if (o.uni <= 0.0 || o.enclosing <= 0.0) return 0.0;
  return o.inter / o.uni - (o.enclosing - o.uni) / o.enclosing;
}

double l1_box(const BoxC& a, const BoxC& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) +
         std::abs(a.w - b.w) + std::abs(a.h - b.h);
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw TensorError("mask_iou: shape mismatch");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    bool pa = a.data[i] != 0;
    bool pb = b.data[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

struct Corners {
  Tensor x0, y0, x1, y1;
};

Corners corners_of(const Tensor& c) {
  Tensor cx = slice(c, 0, 0, 1);
  Tensor cy = slice(c, 0, 1, 1);
  Tensor half_w = mul(slice(c, 0, 2, 1), Tensor::scalar(0.5));
  Tensor half_h = mul(slice(c, 0, 3, 1), Tensor::scalar(0.5));
  return {sub(cx, half_w), sub(cy, half_h), add(cx, half_w), add(cy, half_h)};
}

BoxXYXY as_xyxy(const Tensor& c) {
  const auto& d = c.data();
  return to_xyxy(BoxC{d[0], d[1], d[2], d[3]});
}

void check_box_tensor(const char* op, const Tensor& t) {
  if (t.rank() != 1 || t.size() != 4) {
    throw TensorError(std::string(op) + ": expects a 4-element box tensor, got " +
                      shape_str(t.shape()));
  }
}

}  // namespace

Tensor giou(const Tensor& a_cxcywh, const Tensor& b_cxcywh) {
  check_box_tensor("giou", a_cxcywh);
  check_box_tensor("giou", b_cxcywh);

  Overlap probe = overlap(as_xyxy(a_cxcywh), as_xyxy(b_cxcywh));
  if (probe.uni <= 0.0 || probe.enclosing <= 0.0) return Tensor::scalar(0.0);

  Corners a = corners_of(a_cxcywh);
  Corners b = corners_of(b_cxcywh);

  Tensor iw = relu(sub(minimum(a.x1, b.x1), maximum(a.x0, b.x0)));
  Tensor ih = relu(sub(minimum(a.y1, b.y1), maximum(a.y0, b.y0)));
  Tensor inter = mul(iw, ih);

  Tensor area_a = mul(sub(a.x1, a.x0), sub(a.y1, a.y0));
  Tensor area_b = mul(sub(b.x1, b.x0), sub(b.y1, b.y0));
  Tensor uni = sub(add(area_a, area_b), inter);

  Tensor cw = sub(maximum(a.x1, b.x1), minimum(a.x0, b.x0));
  Tensor ch = sub(maximum(a.y1, b.y1), minimum(a.y0, b.y0));
  Tensor enclosing = mul(cw, ch);

  Tensor result = sub(div(inter, uni), div(sub(enclosing, uni), enclosing));
  return reshape(result, {});
}

Tensor l1_box(const Tensor& a_cxcywh, const Tensor& b_cxcywh) {
  check_box_tensor("l1_box", a_cxcywh);
  check_box_tensor("l1_box", b_cxcywh);
  return sum(abs(sub(a_cxcywh, b_cxcywh)));
}

}  // namespace sgol
