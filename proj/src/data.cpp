#include "sgol/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

namespace sgol {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSquareHalfSide = 0.8;
constexpr double kStarInnerRadius = 0.4;
constexpr double kCrossArmHalfWidth = 0.35;
constexpr double kEllipseAspect = 0.6;
// Square-like shapes stay within +-15 degrees so a rotated square never
// reads as a diamond (and vice versa); all other classes rotate freely.
constexpr double kAxisAlignedMaxRot = 15.0 * kPi / 180.0;

using Pt = std::array<double, 2>;

std::vector<Pt> regular_vertices(std::size_t n, double start_angle,
                                 double radius) {
  std::vector<Pt> v(n);
  for (std::size_t k = 0; k < n; ++k) {
    double a = start_angle + 2.0 * kPi * static_cast<double>(k) /
                                 static_cast<double>(n);
    v[k] = {radius * std::cos(a), radius * std::sin(a)};
  }
  return v;
}

std::vector<Pt> star_vertices() {
  std::vector<Pt> v(10);
  for (std::size_t k = 0; k < 10; ++k) {
    double a = kPi / 2.0 + kPi * static_cast<double>(k) / 5.0;
    double r = (k % 2 == 0) ? 1.0 : kStarInnerRadius;
    v[k] = {r * std::cos(a), r * std::sin(a)};
  }
  return v;
}

std::vector<Pt> cross_vertices() {
  const double w = kCrossArmHalfWidth;
  return {{1, w},  {w, w},  {w, 1},  {-w, 1},  {-w, w},  {-1, w},
          {-1, -w}, {-w, -w}, {-w, -1}, {w, -1}, {w, -w}, {1, -w}};
}

const std::vector<Pt>* polygon_of(std::size_t class_id) {
  static const std::vector<Pt> square = {{-kSquareHalfSide, -kSquareHalfSide},
                                         {kSquareHalfSide, -kSquareHalfSide},
                                         {kSquareHalfSide, kSquareHalfSide},
                                         {-kSquareHalfSide, kSquareHalfSide}};
  static const std::vector<Pt> triangle = regular_vertices(3, kPi / 2.0, 1.0);
  static const std::vector<Pt> star = star_vertices();
  static const std::vector<Pt> cross = cross_vertices();
  static const std::vector<Pt> diamond = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  switch (static_cast<ShapeClass>(class_id)) {
    case ShapeClass::square: return &square;
    case ShapeClass::triangle: return &triangle;
    case ShapeClass::star5: return &star;
    case ShapeClass::cross: return &cross;
    case ShapeClass::diamond: return &diamond;
    default: return nullptr;
  }
}

bool point_in_polygon(const std::vector<Pt>& v, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i][1] > y) != (v[j][1] > y)) {
      double cross_x = (v[j][0] - v[i][0]) * (y - v[i][1]) /
                           (v[j][1] - v[i][1]) +
                       v[i][0];
      if (x < cross_x) inside = !inside;
    }
  }
  return inside;
}

Pt lemniscate_point(double t) {
  // Bernoulli lemniscate: (x^2+y^2)^2 = x^2-y^2 exactly on this curve.
  double st = std::sin(t), ct = std::cos(t);
  double d = 1.0 + st * st;
  return {ct / d, st * ct / d};
}

void check_class(std::size_t class_id) {
  if (class_id >= kNumShapeClasses) {
    throw DataError("unknown shape class " + std::to_string(class_id));
  }
}

bool axis_aligned_class(std::size_t class_id) {
  auto c = static_cast<ShapeClass>(class_id);
  return c == ShapeClass::square || c == ShapeClass::cross ||
         c == ShapeClass::diamond;
}

}  // namespace

const char* shape_name(std::size_t class_id) {
  check_class(class_id);
  static const char* names[] = {"circle", "square",    "triangle",
                                "lemniscate", "star5", "cross",
                                "ellipse",   "diamond"};
  return names[class_id];
}

double shape_circumradius(std::size_t class_id) {
  check_class(class_id);
  switch (static_cast<ShapeClass>(class_id)) {
    case ShapeClass::square: return kSquareHalfSide * std::sqrt(2.0);
    case ShapeClass::cross:
      return std::sqrt(1.0 + kCrossArmHalfWidth * kCrossArmHalfWidth);
    default: return 1.0;
  }
}

bool shape_contains(std::size_t class_id, double x, double y) {
  check_class(class_id);
  switch (static_cast<ShapeClass>(class_id)) {
    case ShapeClass::circle: return x * x + y * y <= 1.0;
    case ShapeClass::lemniscate: {
      double r2 = x * x + y * y;
      return r2 * r2 <= x * x - y * y;
    }
    case ShapeClass::ellipse: {
      double ny = y / kEllipseAspect;
      return x * x + ny * ny <= 1.0;
    }
    default: return point_in_polygon(*polygon_of(class_id), x, y);
  }
}

std::vector<Pt> shape_contour(std::size_t class_id, std::size_t n_points) {
  check_class(class_id);
  if (n_points < 3) throw DataError("contour needs at least 3 points");
  std::vector<Pt> out(n_points);
  const std::vector<Pt>* poly = polygon_of(class_id);
  if (poly == nullptr) {
    for (std::size_t i = 0; i < n_points; ++i) {
      double t = 2.0 * kPi * static_cast<double>(i) /
                 static_cast<double>(n_points);
      switch (static_cast<ShapeClass>(class_id)) {
        case ShapeClass::circle: out[i] = {std::cos(t), std::sin(t)}; break;
        case ShapeClass::ellipse:
          out[i] = {std::cos(t), kEllipseAspect * std::sin(t)};
          break;
        default: out[i] = lemniscate_point(t); break;
      }
    }
    return out;
  }
  // Arc-length-uniform walk of the polygon perimeter.
  const std::vector<Pt>& v = *poly;
  std::vector<double> cum(v.size() + 1, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Pt& a = v[i];
    const Pt& b = v[(i + 1) % v.size()];
    cum[i + 1] = cum[i] + std::hypot(b[0] - a[0], b[1] - a[1]);
  }
  const double total = cum.back();
  std::size_t edge = 0;
  for (std::size_t i = 0; i < n_points; ++i) {
    double s = total * static_cast<double>(i) / static_cast<double>(n_points);
    while (edge + 1 < v.size() && cum[edge + 1] <= s) ++edge;
    const Pt& a = v[edge];
    const Pt& b = v[(edge + 1) % v.size()];
    double seg = cum[edge + 1] - cum[edge];
    double u = seg > 0.0 ? (s - cum[edge]) / seg : 0.0;
    out[i] = {a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])};
  }
  return out;
}

Image make_image(std::size_t channels, std::size_t height, std::size_t width,
                 double fill) {
  Image img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.data.assign(channels * height * width, fill);
  return img;
}

Tensor to_tensor(const Image& img) {
  return Tensor::from_data({img.channels, img.height, img.width}, img.data);
}

BoxC proxy_box(const PlacedInstance& inst) {
  double r = shape_circumradius(inst.class_id) * inst.scale;
  return BoxC{inst.cx, inst.cy, 2.0 * r, 2.0 * r};
}

SceneSpec sample_scene(Rng& rng, const SceneGenConfig& cfg) {
  if (cfg.min_instances < 1 || cfg.max_instances < cfg.min_instances) {
    throw DataError("sample_scene: bad instance range");
  }
  if (cfg.classes.empty()) throw DataError("sample_scene: empty class list");
  SceneSpec spec;
  spec.image_size = cfg.image_size;
  for (double& c : spec.background) c = rng.uniform(0.05, 0.25);
  const std::size_t n_target =
      cfg.min_instances +
      rng.index(cfg.max_instances - cfg.min_instances + 1);
  for (std::size_t k = 0; k < n_target; ++k) {
    for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      PlacedInstance inst;
      inst.class_id = cfg.classes[rng.index(cfg.classes.size())];
      inst.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
      inst.rotation = axis_aligned_class(inst.class_id)
                          ? rng.uniform(-kAxisAlignedMaxRot, kAxisAlignedMaxRot)
                          : rng.uniform(0.0, 2.0 * kPi);
      double margin = shape_circumradius(inst.class_id) * inst.scale + 0.03;
      if (margin >= 0.5) continue;
      inst.cx = rng.uniform(margin, 1.0 - margin);
      inst.cy = rng.uniform(margin, 1.0 - margin);
      bool ok = true;
      for (const PlacedInstance& other : spec.instances) {
        if (iou(to_xyxy(proxy_box(inst)), to_xyxy(proxy_box(other))) >
            cfg.max_pairwise_iou) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      for (double& c : inst.color) c = rng.uniform(0.35, 0.95);
      spec.instances.push_back(inst);
      break;
    }
  }
  return spec;
}

RenderedScene render_scene(const SceneSpec& spec) {
  const std::size_t s = spec.image_size;
  if (s == 0) throw DataError("render_scene: zero image size");
  RenderedScene out;
  out.image = make_image(3, s, s);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < s * s; ++i) {
      out.image.data[c * s * s + i] = spec.background[c];
    }
  }
  std::vector<Mask> masks(spec.instances.size());
  for (Mask& m : masks) m = make_mask(s, s);
  for (std::size_t k = 0; k < spec.instances.size(); ++k) {
    const PlacedInstance& inst = spec.instances[k];
    const double cr = std::cos(inst.rotation);
    const double sr = std::sin(inst.rotation);
    // Only pixels inside the (padded) proxy box can be covered.
    BoxXYXY pb = to_xyxy(proxy_box(inst));
    const double sd = static_cast<double>(s);
    auto lo = [&](double v) {
      double f = std::floor(v * sd) - 1.0;
      return static_cast<std::size_t>(std::max(0.0, f));
    };
    auto hi = [&](double v) {
      double f = std::ceil(v * sd) + 1.0;
      return static_cast<std::size_t>(std::max(0.0, std::min(sd - 1.0, f)));
    };
    for (std::size_t iy = lo(pb.y0); iy <= hi(pb.y1); ++iy) {
      for (std::size_t ix = lo(pb.x0); ix <= hi(pb.x1); ++ix) {
        double dx = (static_cast<double>(ix) + 0.5) / sd - inst.cx;
        double dy = (static_cast<double>(iy) + 0.5) / sd - inst.cy;
        double lx = (cr * dx + sr * dy) / inst.scale;
        double ly = (-sr * dx + cr * dy) / inst.scale;
        if (!shape_contains(inst.class_id, lx, ly)) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          out.image.at(c, iy, ix) = inst.color[c];
        }
        masks[k].at(iy, ix) = 1;
        for (std::size_t j = 0; j < k; ++j) masks[j].at(iy, ix) = 0;
      }
    }
  }
  for (std::size_t k = 0; k < masks.size(); ++k) {
    std::size_t min_x = s, min_y = s, max_x = 0, max_y = 0, count = 0;
    for (std::size_t iy = 0; iy < s; ++iy) {
      for (std::size_t ix = 0; ix < s; ++ix) {
        if (!masks[k].at(iy, ix)) continue;
        ++count;
        min_x = std::min(min_x, ix);
        min_y = std::min(min_y, iy);
        max_x = std::max(max_x, ix);
        max_y = std::max(max_y, iy);
      }
    }
    if (count == 0) {
      std::cerr << "render_scene: dropping fully occluded "
                << shape_name(spec.instances[k].class_id) << " instance\n";
      continue;
    }
    const double sd = static_cast<double>(s);
    BoxXYXY tight{static_cast<double>(min_x) / sd,
                  static_cast<double>(min_y) / sd,
                  static_cast<double>(max_x + 1) / sd,
                  static_cast<double>(max_y + 1) / sd};
    Annotation ann;
    ann.box = to_cxcywh(tight);
    ann.class_id = spec.instances[k].class_id;
    ann.mask = std::move(masks[k]);
    out.annotations.push_back(std::move(ann));
  }
  return out;
}

SketchStyleConfig style_config(char style) {
  if (style == 'A') return SketchStyleConfig{0.012, 0.0, 220, 1.0};
  if (style == 'B') return SketchStyleConfig{0.045, 0.30, 12, 2.2};
  throw DataError(std::string("unknown sketch style '") + style + "'");
}

const std::vector<std::size_t>& default_vocabulary(char style) {
  static const std::vector<std::size_t> a = {0, 1, 2, 3, 4, 5};
  static const std::vector<std::size_t> b = {2, 3, 4, 5, 6, 7};
  if (style == 'A') return a;
  if (style == 'B') return b;
  throw DataError(std::string("unknown sketch style '") + style + "'");
}

namespace {

void stamp_disk(Image& img, double px, double py, double radius) {
  const double sd = static_cast<double>(img.width);
  const long lo_x = std::lround(std::floor(px - radius - 1.0));
  const long hi_x = std::lround(std::ceil(px + radius + 1.0));
  const long lo_y = std::lround(std::floor(py - radius - 1.0));
  const long hi_y = std::lround(std::ceil(py + radius + 1.0));
  for (long iy = std::max(0L, lo_y); iy <= hi_y; ++iy) {
    if (iy >= static_cast<long>(img.height)) break;
    for (long ix = std::max(0L, lo_x); ix <= hi_x; ++ix) {
      if (ix >= static_cast<long>(sd)) break;
      double dx = static_cast<double>(ix) + 0.5 - px;
      double dy = static_cast<double>(iy) + 0.5 - py;
      if (dx * dx + dy * dy <= radius * radius) {
        img.at(0, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) =
            1.0;
      }
    }
  }
}

void draw_segment(Image& img, Pt a, Pt b, double thickness_px) {
  const double r = thickness_px / 2.0;
  const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
  const auto steps = static_cast<std::size_t>(std::ceil(len / 0.35)) + 1;
  for (std::size_t i = 0; i <= steps; ++i) {
    double u = static_cast<double>(i) / static_cast<double>(steps);
    stamp_disk(img, a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), r);
  }
}

}  // namespace

SketchSample render_sketch_seeded(std::size_t class_id, char style,
                                  std::uint64_t seed, std::size_t size,
                                  const SketchStyleConfig& cfg,
                                  const std::vector<std::size_t>& vocabulary) {
  check_class(class_id);
  if (style != 'A' && style != 'B') {
    throw DataError(std::string("unknown sketch style '") + style + "'");
  }
  if (std::find(vocabulary.begin(), vocabulary.end(), class_id) ==
      vocabulary.end()) {
    throw DataError(std::string("class ") + shape_name(class_id) +
                    " is not in style " + style + "'s vocabulary");
  }
  if (size < 8) throw DataError("sketch canvas too small");
  Rng rng(seed);
  // Placement: normalize apparent size across classes via the circumradius,
  // keep near-canonical orientation (humans draw shapes mostly upright).
  const double extent = rng.uniform(0.30, 0.38);
  const double scale = extent / shape_circumradius(class_id);
  const double rot = rng.uniform(-10.0 * kPi / 180.0, 10.0 * kPi / 180.0);
  const double cr = std::cos(rot), sr = std::sin(rot);

  const std::size_t n = cfg.num_points;
  std::vector<Pt> base = shape_contour(class_id, n);
  for (Pt& p : base) {
    double x = (cr * p[0] - sr * p[1]) * scale + 0.5;
    double y = (sr * p[0] + cr * p[1]) * scale + 0.5;
    p = {x, y};
  }
  // Smooth contour-periodic jitter along the local normal.
  double amp[3], phase[3];
  for (int h = 0; h < 3; ++h) {
    amp[h] = rng.normal(0.0, cfg.jitter_amp);
    phase[h] = rng.uniform(0.0, 2.0 * kPi);
  }
  std::vector<Pt> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& prev = base[(i + n - 1) % n];
    const Pt& next = base[(i + 1) % n];
    double tx = next[0] - prev[0], ty = next[1] - prev[1];
    double tl = std::hypot(tx, ty);
    double nx = 0.0, ny = 0.0;
    if (tl > 0.0) {
      nx = -ty / tl;
      ny = tx / tl;
    }
    double t = static_cast<double>(i) / static_cast<double>(n);
    double off = 0.0;
    for (int h = 0; h < 3; ++h) {
      off += amp[h] * std::sin(2.0 * kPi * (h + 1) * t + phase[h]);
    }
    pts[i] = {base[i][0] + nx * off, base[i][1] + ny * off};
  }
  // Segment dropout: remove a random fraction (at most dropout_max) of the
  // closed polyline's segments.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  double frac = rng.uniform(0.0, cfg.dropout_max);
  const auto n_drop =
      static_cast<std::size_t>(frac * static_cast<double>(n));
  std::vector<bool> dropped(n, false);
  for (std::size_t i = 0; i < n_drop; ++i) dropped[order[i]] = true;

  SketchSample sample;
  sample.class_id = class_id;
  sample.style = style;
  sample.seed = seed;
  sample.raster = make_image(1, size, size);
  const double sd = static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    if (dropped[i]) continue;
    const Pt& a = pts[i];
    const Pt& b = pts[(i + 1) % n];
    draw_segment(sample.raster, {a[0] * sd, a[1] * sd}, {b[0] * sd, b[1] * sd},
                 cfg.thickness_px);
  }
  return sample;
}

SketchSample render_sketch(std::size_t class_id, char style, Rng& rng,
                           std::size_t size) {
  std::uint64_t seed = rng.next_u64();
  return render_sketch_seeded(class_id, style, seed, size, style_config(style),
                              default_vocabulary(style));
}

}  // namespace sgol
