#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sgol/detection.hpp"
#include "sgol/model.hpp"

namespace sgol {

/// Detections rank by descending score, ties keeping insertion order.
/// The single supported rule, named so configs can state it.
enum class ScoreOrder { score_desc_stable };

struct EvalConfig {
  /// Matching thresholds; strictly increasing, in (0,1], and containing
  /// 0.50 (the headline AP@50 threshold).
  std::vector<double> iou_thresholds;  // empty selects the default ladder
  std::size_t recall_points = 101;
  ScoreOrder order = ScoreOrder::score_desc_stable;
  bool mask_mode = false;      // match by mask overlap instead of boxes
  bool per_sketch_ap = false;  // mean of per-sketch APs instead of pooling
  std::uint64_t negative_seed = 20230613;  // negative-image sampling streams

  void validate() const;
  std::vector<double> thresholds() const;  // resolved ladder
  std::size_t threshold50(const std::vector<double>& ts) const;
};

/// 0.50, 0.55, ..., 0.95.
std::vector<double> default_iou_thresholds();

/// Ranked precision/recall trace plus the interpolated envelope sampled at
/// the configured recall points.
struct PRCurve {
  std::vector<double> score;        // per rank
  std::vector<std::uint8_t> tp;     // per rank
  std::vector<double> precision;    // per rank
  std::vector<double> recall;       // per rank
  std::vector<double> envelope;     // per recall sample, non-increasing
};

struct ClassAP {
  std::size_t class_id = 0;
  std::size_t n_gt = 0;                 // summed over every (sketch, image) run
  std::vector<double> ap;               // aligned with the threshold ladder
  std::vector<std::size_t> tp_count;    // pooled, aligned with thresholds
  std::vector<std::size_t> fp_count;
  PRCurve pr50;                         // pooled curve at the 0.50 threshold
};

struct APResult {
  std::vector<ClassAP> per_class;  // classes with no runs and no dets are skipped
  double ap50 = 0;                 // mean per-class AP at threshold 0.50
  double map = 0;                  // mean over classes and thresholds
  std::size_t total_gt = 0;
  std::size_t total_tp50 = 0;
  std::size_t total_fp50 = 0;
};

/// Greedy matcher: walking the ranked detections, each one claims the
/// unconsumed ground truth with the highest overlap at or above `iou_t`
/// (ties to the lowest index); the rest are false positives. Overlap is
/// box IoU, or mask IoU in mask mode (every instance then needs a mask of
/// matching resolution). Throws if `dets` is not sorted by descending
/// score.
std::vector<std::uint8_t> match_dets(const DetectionSet& dets,
                                     const std::vector<TargetInstance>& gts,
                                     double iou_t, bool mask_mode);

/// 101-point interpolated average precision: the mean over evenly spaced
/// recall samples of the highest precision achieved at that recall or
/// beyond. Zero when n_gt is 0.
double average_precision(const std::vector<std::uint8_t>& flags,
                         std::size_t n_gt, std::size_t recall_points = 101);

PRCurve pr_curve(const std::vector<std::uint8_t>& flags,
                 const std::vector<double>& scores, std::size_t n_gt,
                 std::size_t recall_points = 101);

/// CSV dump: "rank,score,tp,precision,recall" with one row per ranked
/// detection.
std::string pr_curve_csv(const PRCurve& curve);

/// Oracle for tiny instances (<= 10 detections, <= 5 ground truths): ranks
/// with its own stable sort, re-runs a self-contained greedy match on every
/// ranked prefix, and integrates the precision envelope directly. Agrees
/// exactly with average_precision over match_dets.
double brute_force_ap(const DetectionSet& dets,
                      const std::vector<TargetInstance>& gts, double iou_t,
                      bool mask_mode = false, std::size_t recall_points = 101);

/// A detector under evaluation: maps (scene, sketch raster, query class) to
/// scored detections. Adapters below wrap the real models; tests plug in
/// oracles.
using Pipeline = std::function<DetectionSet(
    const TrainScene& scene, const Tensor& sketch, std::size_t query_class)>;

/// Wraps a conditioned detector: forward with the sketch, postprocess at
/// the threshold, stamp the query class on the survivors. The model must
/// outlive the pipeline.
Pipeline make_conditioned_pipeline(const SketchDETR& model,
                                   double score_threshold,
                                   std::size_t mask_output_size = 0);

/// Wraps the filtering baseline (optionally in upper-bound mode, which
/// substitutes the query class for the classifier prediction). The
/// networks must outlive the pipeline.
Pipeline make_t2b_pipeline(PretrainedPair pair, double score_threshold,
                           bool upper_bound, std::size_t mask_output_size = 0);

/// Query-conditioned evaluation: for each class in the pool and each of its
/// sketches, the pipeline runs on every scene containing the class plus an
/// equal-sized seeded sample of scenes without it. Matching happens per
/// run; detections pool per class into one ranking (or per sketch, with the
/// per-class score the mean over sketches, when configured). Classes with
/// no positive scenes are skipped.
APResult sgol_evaluate(const Pipeline& pipeline,
                       const std::vector<TrainScene>& scenes,
                       const SketchPool& pool, const EvalConfig& config);

/// The pool restricted to the given classes.
SketchPool filter_pool(const SketchPool& pool,
                       const std::vector<std::size_t>& classes);

struct CrossDatasetResult {
  bool has_shared = false;
  bool has_query_only = false;
  bool has_sketch_only = false;
  APResult shared;       // query classes also in the sketch-training vocabulary
  APResult query_only;   // query classes never sketched in training
  APResult sketch_only;  // only on request; needs sketches of those classes
};

/// Splits the evaluation by the class-vocabulary overlap: shared classes
/// and query-only classes report separately (each skipped when its set is
/// empty; both empty throws). Sketch-only classes are excluded unless
/// requested, since the query pool usually cannot sketch them.
CrossDatasetResult cross_dataset_evaluate(const Pipeline& pipeline,
                                          const std::vector<TrainScene>& scenes,
                                          const SketchPool& pool,
                                          const ClassSplit& split,
                                          const EvalConfig& config,
                                          bool include_sketch_only = false);

}  // namespace sgol
