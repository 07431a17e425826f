#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgol/geometry.hpp"
#include "sgol/rng.hpp"
#include "sgol/tensor.hpp"

namespace sgol {

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Shape vocabulary
// ---------------------------------------------------------------------------

/// The eight shape classes, with stable integer ids 0-7.
enum class ShapeClass : int {
  circle = 0,
  square = 1,
  triangle = 2,
  lemniscate = 3,
  star5 = 4,
  cross = 5,
  ellipse = 6,
  diamond = 7,
};

inline constexpr std::size_t kNumShapeClasses = 8;

const char* shape_name(std::size_t class_id);

/// Radius of the smallest origin-centered circle containing the canonical
/// (unit-scale, unrotated) shape. Used for placement margins and proxy boxes.
double shape_circumradius(std::size_t class_id);

/// Point-in-shape test in canonical local coordinates (origin-centered,
/// unit scale, unrotated).
bool shape_contains(std::size_t class_id, double x, double y);

/// Closed boundary polyline of the canonical shape, sampled at `n_points`
/// roughly arc-length-uniform points (analytic curves use uniform parameter).
std::vector<std::array<double, 2>> shape_contour(std::size_t class_id,
                                                 std::size_t n_points);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// Channel-major raster with values in [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
};

Image make_image(std::size_t channels, std::size_t height, std::size_t width,
                 double fill = 0.0);

/// (C x H x W) tensor copy of the image; does not require gradients.
Tensor to_tensor(const Image& img);

// Binary 8-bit image IO. Color images are PPM (P6); single-channel images
// and masks are PGM (P5). Values quantize as round(v * 255).
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);
void write_mask_pgm(const std::string& path, const Mask& mask);
Mask read_mask_pgm(const std::string& path);

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

struct PlacedInstance {
  std::size_t class_id = 0;
  double cx = 0.5, cy = 0.5;  // center in [0,1] image coordinates
  double scale = 0.15;        // canonical-unit multiplier in [0,1] units
  double rotation = 0.0;      // radians
  std::array<double, 3> color{1.0, 1.0, 1.0};
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t image_size = 48;
  std::array<double, 3> background{0.1, 0.1, 0.1};
  std::vector<PlacedInstance> instances;
};

struct SceneGenConfig {
  std::size_t image_size = 48;
  std::size_t min_instances = 1;
  std::size_t max_instances = 5;
  double max_pairwise_iou = 0.3;
  std::size_t max_attempts = 100;
  double min_scale = 0.12;
  double max_scale = 0.22;
  std::vector<std::size_t> classes = {0, 1, 2, 3, 4, 5, 6, 7};
};

/// Conservative axis-aligned bound used for placement rejection: the square
/// of half-extent circumradius * scale around the instance center.
BoxC proxy_box(const PlacedInstance& inst);

/// Rejection-samples 1-5 instances whose proxy boxes pairwise overlap at
/// IoU <= max_pairwise_iou; after max_attempts failures an instance is
/// skipped, so crowded draws degrade to fewer instances (never below 1).
SceneSpec sample_scene(Rng& rng, const SceneGenConfig& cfg);

struct Annotation {
  BoxC box;  // tight bound of the mask, in [0,1] coordinates
  std::size_t class_id = 0;
  Mask mask;  // image-resolution binary mask
};

struct RenderedScene {
  Image image;  // (3 x S x S)
  std::vector<Annotation> annotations;
};

/// Paints instances in order with per-pixel-center inside tests; later
/// instances overwrite earlier pixels and remove them from earlier masks,
/// so masks are pairwise disjoint. Instances whose mask ends up empty are
/// dropped with a warning on stderr. Boxes are exact tight mask bounds.
RenderedScene render_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Sketches
// ---------------------------------------------------------------------------

/// Stroke synthesis knobs. Style A approximates careful drawings: full
/// contour, small smooth jitter, thin strokes. Style B approximates loose
/// drawings: few polygonal segments, strong jitter, up to 30% of the
/// contour dropped, thick strokes.
struct SketchStyleConfig {
  double jitter_amp = 0.0;      // normal-direction displacement amplitude
  double dropout_max = 0.0;     // max fraction of contour segments dropped
  std::size_t num_points = 220; // contour samples (small = polygonal look)
  double thickness_px = 1.0;    // stroke thickness in pixels
};

SketchStyleConfig style_config(char style);
const std::vector<std::size_t>& default_vocabulary(char style);

struct SketchSample {
  Image raster;  // (1 x S' x S'), strokes ~1 on background 0
  std::size_t class_id = 0;
  char style = 'A';
  std::uint64_t seed = 0;
};

/// Deterministic render from an explicit seed.
SketchSample render_sketch_seeded(std::size_t class_id, char style,
                                  std::uint64_t seed, std::size_t size,
                                  const SketchStyleConfig& cfg,
                                  const std::vector<std::size_t>& vocabulary);

/// Draws a fresh seed from `rng` and renders with the style's default
/// configuration and vocabulary.
SketchSample render_sketch(std::size_t class_id, char style, Rng& rng,
                           std::size_t size);

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

/// Vocabulary overlap between the evaluation-side sketch set Q (style B)
/// and the training-side sketch set S (style A).
struct ClassSplit {
  std::vector<std::size_t> query_vocab;   // Q
  std::vector<std::size_t> sketch_vocab;  // S
  std::vector<std::size_t> shared;        // Q intersect S
  std::vector<std::size_t> query_only;    // Q minus S
  std::vector<std::size_t> sketch_only;   // S minus Q
};

ClassSplit make_class_split(const std::vector<std::size_t>& query_vocab,
                            const std::vector<std::size_t>& sketch_vocab);

struct AnnotationRecord {
  std::size_t class_id = 0;
  BoxC box;
  std::string mask_path;  // relative to the dataset root
};

struct SceneRecord {
  std::string image_path;  // relative to the dataset root
  std::vector<AnnotationRecord> annotations;
};

struct SketchRecord {
  char style = 'A';
  std::size_t class_id = 0;
  std::uint64_t seed = 0;
  std::string path;  // relative to the dataset root
};

struct DatasetManifest {
  std::size_t version = 1;
  std::size_t image_size = 48;
  std::size_t sketch_size = 32;
  std::vector<std::size_t> style_a_vocab;
  std::vector<std::size_t> style_b_vocab;
  std::vector<SceneRecord> scenes;
  std::vector<SketchRecord> sketches;
  // Index sets into `sketches`, disjoint within each style.
  std::vector<std::size_t> train_split_a, test_split_a;
  std::vector<std::size_t> train_split_b, test_split_b;
  std::string root;  // absolute location; set on build/load, not serialized

  ClassSplit split() const {
    return make_class_split(style_b_vocab, style_a_vocab);
  }
  const std::vector<std::size_t>& train_split(char style) const {
    return style == 'A' ? train_split_a : train_split_b;
  }
  const std::vector<std::size_t>& test_split(char style) const {
    return style == 'A' ? test_split_a : test_split_b;
  }
};

struct DatasetConfig {
  std::size_t num_scenes = 100;
  std::size_t image_size = 48;
  std::size_t sketch_size = 32;
  std::size_t train_sketches_per_class = 40;
  std::size_t test_sketches_per_class = 20;
  std::vector<std::size_t> style_a_vocab = {0, 1, 2, 3, 4, 5};
  std::vector<std::size_t> style_b_vocab = {2, 3, 4, 5, 6, 7};
  SceneGenConfig scene;
};

/// Generates scenes, masks, and sketches under `root`
/// (root/{manifest, images/, masks/, sketches/A/, sketches/B/}), writing the
/// manifest last. Every item derives its own generator from (seed, item id),
/// so output bytes depend only on (config, seed).
DatasetManifest build_dataset(const std::string& root,
                              const DatasetConfig& cfg, std::uint64_t seed);

/// Parses root/manifest and validates that every referenced file exists and
/// the train/test splits are disjoint and well-formed before returning.
DatasetManifest load_dataset(const std::string& root);

Image load_scene_image(const DatasetManifest& m, std::size_t scene_idx);
Mask load_annotation_mask(const DatasetManifest& m, std::size_t scene_idx,
                          std::size_t ann_idx);
Image load_sketch_raster(const DatasetManifest& m, std::size_t sketch_idx);

}  // namespace sgol
