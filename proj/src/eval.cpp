#include "sgol/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sgol/rng.hpp"

namespace sgol {

namespace {

double pair_overlap(const Detection& det, const TargetInstance& gt,
                    bool mask_mode) {
  if (!mask_mode) return iou(to_xyxy(det.box), to_xyxy(gt.box));
  if (!det.has_mask() || !gt.has_mask()) {
    throw TensorError(
        "match_dets: mask mode needs a mask on every detection and every "
        "ground truth");
  }
  return mask_iou(det.mask, gt.mask);
}

void require_ranked(const DetectionSet& dets) {
  for (std::size_t i = 1; i < dets.size(); ++i) {
    if (dets[i].score > dets[i - 1].score) {
      throw TensorError("match_dets: detections must be sorted by descending score");
    }
  }
}

void sort_by_score(DetectionSet& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
}

/// Highest precision at each recall sample or beyond; zeros when nothing
/// reaches the sample.
std::vector<double> precision_envelope(const std::vector<double>& precision,
                                       const std::vector<double>& recall,
                                       std::size_t recall_points) {
  std::vector<double> env(recall_points, 0.0);
  for (std::size_t j = 0; j < recall_points; ++j) {
    double r = static_cast<double>(j) / static_cast<double>(recall_points - 1);
    double best = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
      if (recall[k] >= r) best = std::max(best, precision[k]);
    }
    env[j] = best;
  }
  return env;
}

void check_recall_points(std::size_t recall_points) {
  if (recall_points < 2) {
    throw TensorError("average_precision: needs at least two recall points");
  }
}

}  // namespace

std::vector<double> default_iou_thresholds() {
  std::vector<double> ts;
  for (int k = 0; k < 10; ++k) ts.push_back((50 + 5 * k) / 100.0);
  return ts;
}

void EvalConfig::validate() const {
  std::vector<double> ts = thresholds();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!(ts[i] > 0.0) || ts[i] > 1.0) {
      throw TensorError("EvalConfig: thresholds must lie in (0, 1]");
    }
    if (i > 0 && ts[i] <= ts[i - 1]) {
      throw TensorError("EvalConfig: thresholds must be strictly increasing");
    }
  }
  check_recall_points(recall_points);
  threshold50(ts);
}

std::vector<double> EvalConfig::thresholds() const {
  return iou_thresholds.empty() ? default_iou_thresholds() : iou_thresholds;
}

std::size_t EvalConfig::threshold50(const std::vector<double>& ts) const {
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] == 0.50) return i;
  }
  throw TensorError("EvalConfig: the 0.50 threshold is required");
}

std::vector<std::uint8_t> match_dets(const DetectionSet& dets,
                                     const std::vector<TargetInstance>& gts,
                                     double iou_t, bool mask_mode) {
  require_ranked(dets);
  std::vector<std::uint8_t> flags(dets.size(), 0);
  std::vector<bool> consumed(gts.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::size_t best = gts.size();
    double best_overlap = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (consumed[g]) continue;
      double ov = pair_overlap(dets[i], gts[g], mask_mode);
      if (ov >= iou_t && (best == gts.size() || ov > best_overlap)) {
        best = g;
        best_overlap = ov;
      }
    }
    if (best != gts.size()) {
      consumed[best] = true;
      flags[i] = 1;
    }
  }
  return flags;
}

double average_precision(const std::vector<std::uint8_t>& flags,
                         std::size_t n_gt, std::size_t recall_points) {
  check_recall_points(recall_points);
  if (n_gt == 0 || flags.empty()) return 0.0;
  std::vector<double> precision(flags.size()), recall(flags.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    tp += flags[k];
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  std::vector<double> env = precision_envelope(precision, recall, recall_points);
  double sum = 0.0;
  for (double e : env) sum += e;
  return sum / static_cast<double>(recall_points);
}

PRCurve pr_curve(const std::vector<std::uint8_t>& flags,
                 const std::vector<double>& scores, std::size_t n_gt,
                 std::size_t recall_points) {
  check_recall_points(recall_points);
  if (flags.size() != scores.size()) {
    throw TensorError("pr_curve: one score per flag required");
  }
  PRCurve curve;
  curve.score = scores;
  curve.tp = flags;
  curve.precision.resize(flags.size());
  curve.recall.resize(flags.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    tp += flags[k];
    curve.precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    curve.recall[k] =
        n_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  curve.envelope =
      precision_envelope(curve.precision, curve.recall, recall_points);
  return curve;
}

std::string pr_curve_csv(const PRCurve& curve) {
  std::string out = "rank,score,tp,precision,recall\n";
  char buf[128];
  for (std::size_t k = 0; k < curve.tp.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10g,%d,%.10g,%.10g\n", k + 1,
                  curve.score[k], curve.tp[k] ? 1 : 0, curve.precision[k],
                  curve.recall[k]);
    out += buf;
  }
  return out;
}

double brute_force_ap(const DetectionSet& dets,
                      const std::vector<TargetInstance>& gts, double iou_t,
                      bool mask_mode, std::size_t recall_points) {
  if (dets.size() > 10 || gts.size() > 5) {
    throw TensorError("brute_force_ap: instance too large (<= 10 detections, <= 5 ground truths)");
  }
  check_recall_points(recall_points);
  if (dets.empty() || gts.empty()) return 0.0;
  DetectionSet ranked = dets;
  sort_by_score(ranked);
  // Each ranked prefix gets its own greedy match from scratch.
  std::size_t prefixes = ranked.size();
  std::vector<double> prefix_precision(prefixes), prefix_recall(prefixes);
  for (std::size_t k = 1; k <= prefixes; ++k) {
    std::vector<bool> used(gts.size(), false);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t best = gts.size();
      double best_overlap = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        double ov = pair_overlap(ranked[i], gts[g], mask_mode);
        if (ov >= iou_t && (best == gts.size() || ov > best_overlap)) {
          best = g;
          best_overlap = ov;
        }
      }
      if (best != gts.size()) {
        used[best] = true;
        ++tp;
      }
    }
    prefix_precision[k - 1] = static_cast<double>(tp) / static_cast<double>(k);
    prefix_recall[k - 1] =
        static_cast<double>(tp) / static_cast<double>(gts.size());
  }
  // Direct envelope integration over the recall samples.
  double sum = 0.0;
  for (std::size_t j = 0; j < recall_points; ++j) {
    double r = static_cast<double>(j) / static_cast<double>(recall_points - 1);
    double best = 0.0;
    for (std::size_t k = 0; k < prefixes; ++k) {
      if (prefix_recall[k] >= r && prefix_precision[k] > best) {
        best = prefix_precision[k];
      }
    }
    sum += best;
  }
  return sum / static_cast<double>(recall_points);
}

Pipeline make_conditioned_pipeline(const SketchDETR& model,
                                   double score_threshold,
                                   std::size_t mask_output_size) {
  const SketchDETR* m = &model;
  return [m, score_threshold, mask_output_size](
             const TrainScene& scene, const Tensor& sketch,
             std::size_t query_class) {
    NoGradGuard guard;
    DetectionOutput out = m->forward(scene.image, &sketch);
    return postprocess(out, score_threshold, query_class, mask_output_size);
  };
}

Pipeline make_t2b_pipeline(PretrainedPair pair, double score_threshold,
                           bool upper_bound, std::size_t mask_output_size) {
  return [pair, score_threshold, upper_bound, mask_output_size](
             const TrainScene& scene, const Tensor& sketch,
             std::size_t query_class) {
    T2BOptions options;
    options.score_threshold = score_threshold;
    options.upper_bound = upper_bound;
    options.true_class = query_class;
    options.mask_output_size = mask_output_size;
    return t2b_inference(pair, scene.image, sketch, options);
  };
}

namespace {

/// Scores and per-threshold flags of one (sketch, image) run, kept in
/// generation order.
struct RunRecord {
  std::size_t sketch_index = 0;
  std::vector<double> scores;
  std::vector<std::vector<std::uint8_t>> flags;  // per threshold
  std::size_t n_gt = 0;
};

struct PooledClass {
  std::vector<double> scores;                    // ranked
  std::vector<std::vector<std::uint8_t>> flags;  // per threshold, ranked
  std::size_t n_gt = 0;
};

/// Merges runs into one ranking: stable sort by score keeps generation
/// order on ties, and every threshold shares the ranking.
PooledClass pool_runs(const std::vector<const RunRecord*>& runs,
                      std::size_t num_thresholds) {
  PooledClass pooled;
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (run, det)
  for (std::size_t r = 0; r < runs.size(); ++r) {
    pooled.n_gt += runs[r]->n_gt;
    for (std::size_t i = 0; i < runs[r]->scores.size(); ++i) {
      order.emplace_back(r, i);
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](const auto& a, const auto& b) {
                     return runs[a.first]->scores[a.second] >
                            runs[b.first]->scores[b.second];
                   });
  pooled.scores.reserve(order.size());
  pooled.flags.assign(num_thresholds, {});
  for (const auto& [r, i] : order) {
    pooled.scores.push_back(runs[r]->scores[i]);
    for (std::size_t t = 0; t < num_thresholds; ++t) {
      pooled.flags[t].push_back(runs[r]->flags[t][i]);
    }
  }
  return pooled;
}

}  // namespace

APResult sgol_evaluate(const Pipeline& pipeline,
                       const std::vector<TrainScene>& scenes,
                       const SketchPool& pool, const EvalConfig& config) {
  config.validate();
  if (pool.per_class.empty()) {
    throw TensorError("sgol_evaluate: empty class pool");
  }
  std::vector<double> thresholds = config.thresholds();
  std::size_t idx50 = config.threshold50(thresholds);
  Rng negative_base(config.negative_seed);

  APResult result;
  double ap_sum_over_classes_and_thresholds = 0.0;
  for (const auto& [class_id, rasters] : pool.per_class) {
    if (rasters.empty()) {
      throw TensorError("sgol_evaluate: class " + std::to_string(class_id) +
                        " has no sketches in the pool");
    }
    std::vector<std::size_t> positives, negatives;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      bool present =
          std::binary_search(scenes[s].classes_present.begin(),
                             scenes[s].classes_present.end(), class_id);
      (present ? positives : negatives).push_back(s);
    }
    if (positives.empty()) continue;  // no runs, no detections: skipped

    std::vector<RunRecord> runs;
    for (std::size_t k = 0; k < rasters.size(); ++k) {
      // Fresh seeded stream per (class, sketch) so the sample is stable
      // under reordering of the surrounding loops.
      Rng rng = negative_base.derive((static_cast<std::uint64_t>(class_id) << 20) ^ k);
      std::vector<std::size_t> sampled = negatives;
      rng.shuffle(sampled);
      sampled.resize(std::min(positives.size(), sampled.size()));

      std::vector<std::size_t> images = positives;
      images.insert(images.end(), sampled.begin(), sampled.end());
      for (std::size_t image : images) {
        const TrainScene& scene = scenes[image];
        DetectionSet dets = pipeline(scene, rasters[k], class_id);
        sort_by_score(dets);
        std::vector<TargetInstance> gts;
        for (const TargetInstance& inst : scene.instances) {
          if (inst.class_id == class_id) gts.push_back(inst);
        }
        RunRecord run;
        run.sketch_index = k;
        run.n_gt = gts.size();
        for (const Detection& det : dets) run.scores.push_back(det.score);
        for (double t : thresholds) {
          run.flags.push_back(match_dets(dets, gts, t, config.mask_mode));
        }
        runs.push_back(std::move(run));
      }
    }

    ClassAP entry;
    entry.class_id = class_id;
    entry.ap.assign(thresholds.size(), 0.0);
    entry.tp_count.assign(thresholds.size(), 0);
    entry.fp_count.assign(thresholds.size(), 0);

    std::vector<const RunRecord*> all_runs;
    for (const RunRecord& run : runs) all_runs.push_back(&run);
    PooledClass pooled = pool_runs(all_runs, thresholds.size());
    entry.n_gt = pooled.n_gt;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      for (std::uint8_t f : pooled.flags[t]) {
        ++(f ? entry.tp_count[t] : entry.fp_count[t]);
      }
    }
    entry.pr50 = pr_curve(pooled.flags[idx50], pooled.scores, pooled.n_gt,
                          config.recall_points);

    if (config.per_sketch_ap) {
      // Mean of per-sketch APs; pooled counts and the pooled curve above
      // stay as reported diagnostics.
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        double sum = 0.0;
        std::size_t sketches = rasters.size();
        for (std::size_t k = 0; k < sketches; ++k) {
          std::vector<const RunRecord*> mine;
          for (const RunRecord& run : runs) {
            if (run.sketch_index == k) mine.push_back(&run);
          }
          PooledClass per_sketch = pool_runs(mine, thresholds.size());
          sum += average_precision(per_sketch.flags[t], per_sketch.n_gt,
                                   config.recall_points);
        }
        entry.ap[t] = sum / static_cast<double>(sketches);
      }
    } else {
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        entry.ap[t] = average_precision(pooled.flags[t], pooled.n_gt,
                                        config.recall_points);
      }
    }

    result.total_gt += entry.n_gt;
    result.total_tp50 += entry.tp_count[idx50];
    result.total_fp50 += entry.fp_count[idx50];
    result.ap50 += entry.ap[idx50];
    for (double ap : entry.ap) ap_sum_over_classes_and_thresholds += ap;
    result.per_class.push_back(std::move(entry));
  }

  if (!result.per_class.empty()) {
    result.ap50 /= static_cast<double>(result.per_class.size());
    result.map = ap_sum_over_classes_and_thresholds /
                 static_cast<double>(result.per_class.size() * thresholds.size());
  }
  return result;
}

SketchPool filter_pool(const SketchPool& pool,
                       const std::vector<std::size_t>& classes) {
  SketchPool out;
  out.style = pool.style;
  out.sketch_size = pool.sketch_size;
  for (std::size_t c : classes) {
    auto it = pool.per_class.find(c);
    if (it != pool.per_class.end()) out.per_class[c] = it->second;
  }
  return out;
}

CrossDatasetResult cross_dataset_evaluate(const Pipeline& pipeline,
                                          const std::vector<TrainScene>& scenes,
                                          const SketchPool& pool,
                                          const ClassSplit& split,
                                          const EvalConfig& config,
                                          bool include_sketch_only) {
  CrossDatasetResult result;
  auto evaluate_subset = [&](const std::vector<std::size_t>& classes,
                             const char* name, APResult& slot, bool& flag) {
    if (classes.empty()) return;
    SketchPool subset = filter_pool(pool, classes);
    if (subset.per_class.empty()) {
      throw TensorError(std::string("cross_dataset_evaluate: the sketch pool has no classes of the ") +
                        name + " split");
    }
    slot = sgol_evaluate(pipeline, scenes, subset, config);
    flag = true;
  };
  evaluate_subset(split.shared, "shared", result.shared, result.has_shared);
  evaluate_subset(split.query_only, "query-only", result.query_only,
                  result.has_query_only);
  if (!result.has_shared && !result.has_query_only) {
    throw TensorError("cross_dataset_evaluate: empty split (no shared and no query-only classes)");
  }
  if (include_sketch_only) {
    if (split.sketch_only.empty()) {
      throw TensorError("cross_dataset_evaluate: sketch-only split requested but empty");
    }
    evaluate_subset(split.sketch_only, "sketch-only", result.sketch_only,
                    result.has_sketch_only);
  }
  return result;
}

}  // namespace sgol
