#include "doctest.h"
#include "sgol/eval.hpp"
#include "sgol/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

using namespace sgol;

namespace {

Detection det(double cx, double cy, double w, double h, double score,
              std::size_t label = 0) {
  Detection d;
  d.box = {cx, cy, w, h};
  d.score = score;
  d.label = label;
  return d;
}

TargetInstance gt(double cx, double cy, double w, double h,
                  std::size_t class_id = 0) {
  TargetInstance t;
  t.box = {cx, cy, w, h};
  t.class_id = class_id;
  return t;
}

Mask rect_mask(std::size_t size, std::size_t y0, std::size_t x0,
               std::size_t y1, std::size_t x1) {
  Mask m = make_mask(size, size);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

double main_path_ap(DetectionSet dets, const std::vector<TargetInstance>& gts,
                    double iou_t, bool mask_mode = false) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  return average_precision(match_dets(dets, gts, iou_t, mask_mode),
                           gts.size());
}

struct TinyInstance {
  DetectionSet dets;
  std::vector<TargetInstance> gts;
};

// Quantized coordinates and scores make exact score ties and exact overlap
// ties common, so the tie rules get exercised.
TinyInstance random_instance(Rng& rng, std::size_t max_dets = 10,
                             std::size_t max_gts = 5) {
  TinyInstance inst;
  auto qbox = [&]() {
    BoxC b;
    b.cx = static_cast<double>(rng.index(8) + 1) / 10.0;
    b.cy = static_cast<double>(rng.index(8) + 1) / 10.0;
    b.w = static_cast<double>(rng.index(4) + 1) / 10.0;
    b.h = static_cast<double>(rng.index(4) + 1) / 10.0;
    return b;
  };
  std::size_t n_dets = rng.index(max_dets + 1);
  std::size_t n_gts = rng.index(max_gts + 1);
  for (std::size_t i = 0; i < n_dets; ++i) {
    Detection d;
    d.box = qbox();
    d.score = static_cast<double>(rng.index(5)) / 4.0;
    inst.dets.push_back(d);
  }
  for (std::size_t g = 0; g < n_gts; ++g) {
    TargetInstance t;
    t.box = qbox();
    inst.gts.push_back(t);
  }
  return inst;
}

Mask random_rect_mask(Rng& rng, std::size_t size) {
  std::size_t y0 = rng.index(size - 1);
  std::size_t x0 = rng.index(size - 1);
  std::size_t y1 = y0 + 1 + rng.index(size - y0 - 1 + 1);
  std::size_t x1 = x0 + 1 + rng.index(size - x0 - 1 + 1);
  return rect_mask(size, y0, x0, std::min(y1, size), std::min(x1, size));
}

TrainScene scene_with(std::vector<TargetInstance> instances,
                      std::size_t image_size = 8) {
  TrainScene s;
  s.image = Tensor::zeros({3, image_size, image_size});
  s.instances = std::move(instances);
  for (const TargetInstance& inst : s.instances)
    s.classes_present.push_back(inst.class_id);
  std::sort(s.classes_present.begin(), s.classes_present.end());
  s.classes_present.erase(
      std::unique(s.classes_present.begin(), s.classes_present.end()),
      s.classes_present.end());
  return s;
}

// Classes 0 and 1 spread over six scenes, one of them empty; every class
// has both positive and negative scenes to draw from.
std::vector<TrainScene> toy_eval_scenes() {
  std::vector<TrainScene> scenes;
  scenes.push_back(scene_with({gt(0.3, 0.3, 0.2, 0.2, 0)}));
  scenes.push_back(
      scene_with({gt(0.6, 0.6, 0.2, 0.3, 0), gt(0.25, 0.7, 0.3, 0.2, 1)}));
  scenes.push_back(scene_with({gt(0.5, 0.4, 0.2, 0.2, 1)}));
  scenes.push_back(
      scene_with({gt(0.2, 0.2, 0.2, 0.2, 0), gt(0.7, 0.3, 0.2, 0.2, 0)}));
  scenes.push_back(scene_with({}));
  scenes.push_back(scene_with({gt(0.4, 0.8, 0.2, 0.2, 1)}));
  return scenes;
}

// Sketch k of every class is a raster filled with the value k, so test
// pipelines can react to which sketch they were handed.
SketchPool dummy_pool(const std::vector<std::size_t>& classes,
                      std::size_t per_class = 2) {
  SketchPool pool;
  pool.style = 'A';
  pool.sketch_size = 4;
  for (std::size_t c : classes)
    for (std::size_t k = 0; k < per_class; ++k)
      pool.per_class[c].push_back(
          Tensor::full({1, 4, 4}, static_cast<double>(k)));
  return pool;
}

// Emits the ground truth of the query class at score 1.
Pipeline gt_oracle() {
  return [](const TrainScene& scene, const Tensor&, std::size_t z) {
    DetectionSet out;
    for (const TargetInstance& inst : scene.instances) {
      if (inst.class_id != z) continue;
      Detection d;
      d.box = inst.box;
      d.score = 1.0;
      d.label = z;
      out.push_back(d);
    }
    return out;
  };
}

// Ground truth with masks attached (either the true mask or a full frame).
Pipeline mask_oracle(bool full_frame) {
  return [full_frame](const TrainScene& scene, const Tensor&, std::size_t z) {
    DetectionSet out;
    for (const TargetInstance& inst : scene.instances) {
      if (inst.class_id != z) continue;
      Detection d;
      d.box = inst.box;
      d.score = 1.0;
      d.label = z;
      d.mask = full_frame ? rect_mask(inst.mask.height, 0, 0, inst.mask.height,
                                      inst.mask.width)
                          : inst.mask;
      out.push_back(d);
    }
    return out;
  };
}

// Shifts every second instance of a scene off its box and plants a
// mid-score stray detection on scenes without the class, so average
// precision degrades with the threshold and false positives appear.
Pipeline jitter_oracle() {
  return [](const TrainScene& scene, const Tensor&, std::size_t z) {
    DetectionSet out;
    std::size_t i = 0;
    for (const TargetInstance& inst : scene.instances) {
      if (inst.class_id != z) continue;
      Detection d;
      d.box = inst.box;
      d.box.cx += 0.02 * static_cast<double>(i % 2);
      d.score = 0.9 - 0.1 * static_cast<double>(i % 3);
      d.label = z;
      out.push_back(d);
      ++i;
    }
    if (out.empty()) out.push_back(det(0.05, 0.05, 0.1, 0.1, 0.75, z));
    return out;
  };
}

}  // namespace

TEST_CASE("eval: threshold ladder and config validation") {
  std::vector<double> ladder = default_iou_thresholds();
  REQUIRE(ladder.size() == 10);
  for (int k = 0; k < 10; ++k) CHECK(ladder[k] == (50 + 5 * k) / 100.0);

  EvalConfig config;
  CHECK_NOTHROW(config.validate());
  CHECK(config.thresholds() == ladder);
  CHECK(config.threshold50(ladder) == 0);

  EvalConfig bad = config;
  bad.iou_thresholds = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad.iou_thresholds = {0.5, 0.4};
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad.iou_thresholds = {0.0, 0.5};
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad.iou_thresholds = {0.5, 1.5};
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad.iou_thresholds = {0.55, 0.75};  // no 0.50
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad = config;
  bad.recall_points = 1;
  CHECK_THROWS_AS(bad.validate(), TensorError);
}

TEST_CASE("eval: greedy matching hand cases") {
  std::vector<TargetInstance> one = {gt(0.5, 0.5, 0.4, 0.4)};

  // Exact hit at any threshold up to 1 (boundary inclusive).
  DetectionSet hit = {det(0.5, 0.5, 0.4, 0.4, 0.9)};
  CHECK(match_dets(hit, one, 0.5, false) == std::vector<std::uint8_t>{1});
  CHECK(match_dets(hit, one, 1.0, false) == std::vector<std::uint8_t>{1});

  // Contained box with overlap 0.4: hit at 0.35, miss at 0.5.
  DetectionSet contained = {det(0.5, 0.5, 0.4, 0.16, 0.9)};
  CHECK(match_dets(contained, one, 0.35, false) ==
        std::vector<std::uint8_t>{1});
  CHECK(match_dets(contained, one, 0.5, false) ==
        std::vector<std::uint8_t>{0});

  // Two detections on one ground truth: the second finds it consumed.
  DetectionSet pair = {det(0.5, 0.5, 0.4, 0.4, 0.9),
                       det(0.5, 0.5, 0.4, 0.4, 0.8)};
  std::vector<std::uint8_t> tp_fp = {1, 0};
  CHECK(match_dets(pair, one, 0.5, false) == tp_fp);

  // The first detection overlaps both ground truths and must claim the
  // higher-overlap one (index 1), leaving index 0 unmatched for a
  // detection that overlaps nothing else.
  std::vector<TargetInstance> two = {gt(0.2, 0.5, 0.2, 0.2),
                                     gt(0.8, 0.5, 0.2, 0.2)};
  DetectionSet spanning = {det(0.55, 0.5, 0.7, 0.2, 0.9),
                           det(0.8, 0.5, 0.2, 0.2, 0.8)};
  CHECK(match_dets(spanning, two, 0.1, false) == tp_fp);

  // An exact overlap tie resolves to the lower index: the follow-up
  // detection sits on that very box and must find it consumed. Dyadic
  // coordinates (sixteenths) keep the two overlaps bit-identical.
  std::vector<TargetInstance> mirrored = {gt(0.5625, 0.5, 0.25, 0.25),
                                          gt(0.4375, 0.5, 0.25, 0.25)};
  DetectionSet tied = {det(0.5, 0.5, 0.25, 0.25, 0.9),
                       det(0.5625, 0.5, 0.25, 0.25, 0.8)};
  CHECK(match_dets(tied, mirrored, 0.5, false) == tp_fp);

  // Ranking is a precondition.
  DetectionSet unsorted = {det(0.5, 0.5, 0.4, 0.4, 0.5),
                           det(0.5, 0.5, 0.4, 0.4, 0.9)};
  CHECK_THROWS_AS(match_dets(unsorted, one, 0.5, false), TensorError);
}

TEST_CASE("eval: mask-mode matching") {
  TargetInstance inst = gt(0.5, 0.25, 1.0, 0.5);
  inst.mask = rect_mask(6, 0, 0, 3, 6);  // top half

  Detection exact = det(0.5, 0.25, 1.0, 0.5, 0.9);
  exact.mask = rect_mask(6, 0, 0, 3, 6);
  Detection frame = det(0.5, 0.25, 1.0, 0.5, 0.9);
  frame.mask = rect_mask(6, 0, 0, 6, 6);  // overlap exactly 0.5

  CHECK(match_dets({exact}, {inst}, 0.95, true) ==
        std::vector<std::uint8_t>{1});
  CHECK(match_dets({frame}, {inst}, 0.5, true) ==
        std::vector<std::uint8_t>{1});
  CHECK(match_dets({frame}, {inst}, 0.55, true) ==
        std::vector<std::uint8_t>{0});

  // Boxes are ignored in mask mode, so a missing mask is an error even if
  // the boxes align.
  Detection boxes_only = det(0.5, 0.25, 1.0, 0.5, 0.9);
  CHECK_THROWS_AS(match_dets({boxes_only}, {inst}, 0.5, true), TensorError);
}

TEST_CASE("eval: interpolated average precision hand values") {
  CHECK(average_precision({1}, 1) == 1.0);
  CHECK(average_precision({0}, 1) == 0.0);
  CHECK(average_precision({}, 3) == 0.0);
  CHECK(average_precision({1, 1}, 0) == 0.0);  // detections but nothing to hit

  // Late hit: precision tops out at 0.5 from rank 2 onward.
  CHECK(average_precision({0, 1}, 1) == 0.5);

  // [hit, miss, hit] over two ground truths: 51 recall samples see
  // precision 1, the remaining 50 see 2/3.
  double expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  double ap = average_precision({1, 0, 1}, 2);
  CHECK(ap == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(ap - 0.834983) < 1e-6);

  // Two recall samples: only 0 and 1 are probed.
  CHECK(average_precision({1}, 2, 2) == 0.5);
}

TEST_CASE("eval: precision-recall curve and csv dump") {
  PRCurve curve = pr_curve({1, 0, 1}, {0.9, 0.8, 0.7}, 2);
  REQUIRE(curve.precision.size() == 3);
  CHECK(curve.precision[0] == 1.0);
  CHECK(curve.precision[1] == 0.5);
  CHECK(curve.precision[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(curve.recall[0] == 0.5);
  CHECK(curve.recall[1] == 0.5);
  CHECK(curve.recall[2] == 1.0);

  REQUIRE(curve.envelope.size() == 101);
  CHECK(curve.envelope[0] == 1.0);
  CHECK(curve.envelope[100] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  for (std::size_t j = 1; j < curve.envelope.size(); ++j) {
    CHECK(curve.envelope[j] <= curve.envelope[j - 1]);
    CHECK(curve.envelope[j] >= 0.0);
    CHECK(curve.envelope[j] <= 1.0);
  }
  double mean = 0.0;
  for (double e : curve.envelope) mean += e;
  mean /= 101.0;
  CHECK(mean == average_precision({1, 0, 1}, 2));

  std::string csv = pr_curve_csv(curve);
  CHECK(csv ==
        "rank,score,tp,precision,recall\n"
        "1,0.9,1,1,0.5\n"
        "2,0.8,0,0.5,0.5\n"
        "3,0.7,1,0.6666666667,1\n");
  CHECK(pr_curve_csv(pr_curve({}, {}, 0)) == "rank,score,tp,precision,recall\n");
  CHECK_THROWS_AS(pr_curve({1}, {0.9, 0.8}, 1), TensorError);
}

TEST_CASE("eval: flag-space invariants") {
  Rng rng(2024);
  for (int iter = 0; iter < 200; ++iter) {
    std::size_t len = rng.index(12);
    std::vector<std::uint8_t> flags(len);
    std::size_t tp = 0;
    for (auto& f : flags) {
      f = static_cast<std::uint8_t>(rng.index(2));
      tp += f;
    }
    std::size_t n_gt = tp + 1 + rng.index(3);
    double base = average_precision(flags, n_gt);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);

    // A false positive below every other score never helps.
    std::vector<std::uint8_t> tail = flags;
    tail.push_back(0);
    CHECK(average_precision(tail, n_gt) <= base + 1e-12);

    // A true positive at the top rank never hurts.
    std::vector<std::uint8_t> head = flags;
    head.insert(head.begin(), 1);
    CHECK(average_precision(head, n_gt) >= base - 1e-12);
  }
}

TEST_CASE("eval: score rescaling leaves ap unchanged") {
  Rng rng(7);
  for (int iter = 0; iter < 20; ++iter) {
    TinyInstance inst = random_instance(rng);
    double base = main_path_ap(inst.dets, inst.gts, 0.5);
    DetectionSet rescaled = inst.dets;
    for (Detection& d : rescaled) d.score = 0.25 * d.score + 0.1;
    CHECK(main_path_ap(rescaled, inst.gts, 0.5) == base);
  }
}

TEST_CASE("eval: stricter thresholds never raise ap") {
  Rng rng(8);
  std::vector<double> ladder = default_iou_thresholds();
  for (int iter = 0; iter < 50; ++iter) {
    TinyInstance inst = random_instance(rng);
    double previous = 2.0;
    for (double t : ladder) {
      double ap = main_path_ap(inst.dets, inst.gts, t);
      CHECK(ap <= previous + 1e-12);
      previous = ap;
    }
  }
}

TEST_CASE("eval: brute force oracle agrees exactly") {
  // Hand case: hit, miss, hit over two ground truths.
  std::vector<TargetInstance> gts = {gt(0.2, 0.2, 0.1, 0.1),
                                     gt(0.7, 0.7, 0.1, 0.1)};
  DetectionSet dets = {det(0.2, 0.2, 0.1, 0.1, 0.9),
                       det(0.45, 0.45, 0.1, 0.1, 0.8),
                       det(0.7, 0.7, 0.1, 0.1, 0.7)};
  CHECK(match_dets(dets, gts, 0.5, false) ==
        std::vector<std::uint8_t>{1, 0, 1});
  double main = main_path_ap(dets, gts, 0.5);
  CHECK(brute_force_ap(dets, gts, 0.5) == main);
  CHECK(std::abs(main - 0.834983) < 1e-6);

  // Random tiny instances, box mode.
  Rng rng(9);
  for (int iter = 0; iter < 100; ++iter) {
    TinyInstance inst = random_instance(rng);
    for (double t : {0.3, 0.5, 0.75}) {
      CHECK(brute_force_ap(inst.dets, inst.gts, t) ==
            main_path_ap(inst.dets, inst.gts, t));
    }
  }

  // Random tiny instances, mask mode.
  Rng mask_rng(10);
  for (int iter = 0; iter < 40; ++iter) {
    TinyInstance inst = random_instance(mask_rng, 6, 4);
    for (Detection& d : inst.dets) d.mask = random_rect_mask(mask_rng, 6);
    for (TargetInstance& t : inst.gts) t.mask = random_rect_mask(mask_rng, 6);
    for (double t : {0.25, 0.5}) {
      CHECK(brute_force_ap(inst.dets, inst.gts, t, true) ==
            main_path_ap(inst.dets, inst.gts, t, true));
    }
  }

  // Edges and the size guard.
  CHECK(brute_force_ap({}, gts, 0.5) == 0.0);
  CHECK(brute_force_ap(dets, {}, 0.5) == 0.0);
  DetectionSet eleven(11, det(0.5, 0.5, 0.1, 0.1, 0.5));
  CHECK_THROWS_AS(brute_force_ap(eleven, gts, 0.5), TensorError);
  std::vector<TargetInstance> six(6, gt(0.5, 0.5, 0.1, 0.1));
  CHECK_THROWS_AS(brute_force_ap(dets, six, 0.5), TensorError);
}

TEST_CASE("eval: oracle pipeline scores a perfect map") {
  std::vector<TrainScene> scenes = toy_eval_scenes();
  SketchPool pool = dummy_pool({0, 1});
  EvalConfig config;

  APResult result = sgol_evaluate(gt_oracle(), scenes, pool, config);
  REQUIRE(result.per_class.size() == 2);
  CHECK(result.per_class[0].class_id == 0);
  CHECK(result.per_class[1].class_id == 1);
  for (const ClassAP& entry : result.per_class)
    for (double ap : entry.ap) CHECK(ap == 1.0);
  CHECK(result.ap50 == 1.0);
  CHECK(result.map == 1.0);

  // Two sketches per class; class 0 has four instances over its positive
  // scenes, class 1 has three.
  CHECK(result.per_class[0].n_gt == 8);
  CHECK(result.per_class[1].n_gt == 6);
  CHECK(result.total_gt == 14);
  CHECK(result.total_tp50 == 14);
  CHECK(result.total_fp50 == 0);

  // A silent pipeline scores zero but the classes still report.
  Pipeline silent = [](const TrainScene&, const Tensor&, std::size_t) {
    return DetectionSet{};
  };
  APResult nothing = sgol_evaluate(silent, scenes, pool, config);
  REQUIRE(nothing.per_class.size() == 2);
  CHECK(nothing.ap50 == 0.0);
  CHECK(nothing.map == 0.0);
  CHECK(nothing.total_gt == 14);
  CHECK(nothing.total_tp50 == 0);

  // Classes with no positive scene are skipped; an empty pool is an error.
  APResult skipped =
      sgol_evaluate(gt_oracle(), scenes, dummy_pool({0, 1, 7}), config);
  CHECK(skipped.per_class.size() == 2);
  CHECK_THROWS_AS(sgol_evaluate(gt_oracle(), scenes, SketchPool{}, config),
                  TensorError);
  SketchPool no_rasters;
  no_rasters.per_class[0] = {};
  CHECK_THROWS_AS(sgol_evaluate(gt_oracle(), scenes, no_rasters, config),
                  TensorError);
}

TEST_CASE("eval: each sketch runs positives plus matched negatives") {
  std::vector<TrainScene> scenes = toy_eval_scenes();
  std::size_t calls = 0;
  Pipeline counter = [&calls](const TrainScene&, const Tensor&, std::size_t) {
    ++calls;
    return DetectionSet{};
  };
  EvalConfig config;
  config.iou_thresholds = {0.5};

  // Both classes have three positive and three negative scenes: each of
  // the two sketches visits six images.
  sgol_evaluate(counter, scenes, dummy_pool({0, 1}), config);
  CHECK(calls == 24);

  // With fewer negatives than positives the sample is every negative.
  std::vector<TrainScene> lopsided;
  lopsided.push_back(scene_with({gt(0.3, 0.3, 0.2, 0.2, 0)}));
  lopsided.push_back(scene_with({gt(0.5, 0.5, 0.2, 0.2, 0)}));
  lopsided.push_back(scene_with({gt(0.7, 0.7, 0.2, 0.2, 0)}));
  lopsided.push_back(scene_with({}));
  calls = 0;
  sgol_evaluate(counter, lopsided, dummy_pool({0}, 1), config);
  CHECK(calls == 4);
}

TEST_CASE("eval: imperfect pipeline keeps map at or under ap50") {
  std::vector<TrainScene> scenes = toy_eval_scenes();
  SketchPool pool = dummy_pool({0, 1});
  EvalConfig config;

  APResult result = sgol_evaluate(jitter_oracle(), scenes, pool, config);
  CHECK(result.map <= result.ap50 + 1e-12);
  CHECK(result.map < 1.0);
  CHECK(result.ap50 > 0.0);
  CHECK(result.total_fp50 > 0);
  double ap50_mean = 0.0;
  for (const ClassAP& entry : result.per_class) {
    for (double ap : entry.ap) {
      CHECK(ap >= 0.0);
      CHECK(ap <= 1.0);
    }
    ap50_mean += entry.ap[0];  // 0.50 is the first ladder entry
  }
  ap50_mean /= static_cast<double>(result.per_class.size());
  CHECK(result.ap50 == ap50_mean);

  // Determinism: the negative sample and every metric reproduce exactly.
  APResult again = sgol_evaluate(jitter_oracle(), scenes, pool, config);
  CHECK(again.ap50 == result.ap50);
  CHECK(again.map == result.map);
  REQUIRE(again.per_class.size() == result.per_class.size());
  for (std::size_t c = 0; c < result.per_class.size(); ++c) {
    CHECK(again.per_class[c].ap == result.per_class[c].ap);
    CHECK(again.per_class[c].tp_count == result.per_class[c].tp_count);
    CHECK(again.per_class[c].fp_count == result.per_class[c].fp_count);
  }
}

TEST_CASE("eval: pooled ranking versus per-sketch averaging") {
  std::vector<TrainScene> scenes = toy_eval_scenes();
  SketchPool pool = dummy_pool({0, 1});  // sketch 0 all zeros, sketch 1 all ones
  // Perfect on sketch 0, silent on sketch 1.
  Pipeline half = [](const TrainScene& scene, const Tensor& sketch,
                     std::size_t z) {
    DetectionSet out;
    if (sketch.data()[0] != 0.0) return out;
    for (const TargetInstance& inst : scene.instances) {
      if (inst.class_id != z) continue;
      Detection d;
      d.box = inst.box;
      d.score = 1.0;
      d.label = z;
      out.push_back(d);
    }
    return out;
  };
  EvalConfig config;
  config.iou_thresholds = {0.5};

  // Pooled: all hits rank together but recall stops at one half, so the
  // envelope is 1 on the first 51 samples and 0 after.
  APResult pooled = sgol_evaluate(half, scenes, pool, config);
  CHECK(pooled.ap50 == 51.0 / 101.0);

  // Per sketch: one perfect and one empty ranking per class.
  config.per_sketch_ap = true;
  APResult split = sgol_evaluate(half, scenes, pool, config);
  CHECK(split.ap50 == 0.5);
  CHECK(split.map == 0.5);
}

TEST_CASE("eval: mask mode scores masks not boxes") {
  // Two instances whose masks tile the frame; boxes match the masks.
  TargetInstance top_left = gt(0.25, 0.25, 0.5, 0.5, 0);
  top_left.mask = rect_mask(8, 0, 0, 4, 4);
  TargetInstance bottom_right = gt(0.75, 0.75, 0.5, 0.5, 0);
  bottom_right.mask = rect_mask(8, 4, 4, 8, 8);
  std::vector<TrainScene> scenes;
  scenes.push_back(scene_with({top_left}));
  scenes.push_back(scene_with({bottom_right}));
  scenes.push_back(scene_with({}));
  SketchPool pool = dummy_pool({0});
  EvalConfig config;
  config.mask_mode = true;

  APResult exact = sgol_evaluate(mask_oracle(false), scenes, pool, config);
  CHECK(exact.map == 1.0);

  // Full-frame masks overlap each quarter-frame target by 0.25: every
  // detection misses at every ladder threshold even though the boxes are
  // perfect, so the mask score sits below the box score.
  APResult sloppy = sgol_evaluate(mask_oracle(true), scenes, pool, config);
  CHECK(sloppy.map == 0.0);
  EvalConfig box_config;
  APResult boxes = sgol_evaluate(mask_oracle(true), scenes, pool, box_config);
  CHECK(boxes.map == 1.0);
  CHECK(sloppy.map <= boxes.map);

  // Mask mode insists on masks.
  CHECK_THROWS_AS(sgol_evaluate(gt_oracle(), scenes, pool, config),
                  TensorError);
}

TEST_CASE("eval: cross-dataset splits") {
  std::vector<TrainScene> scenes;
  scenes.push_back(scene_with({gt(0.3, 0.3, 0.2, 0.2, 2)}));
  scenes.push_back(scene_with({gt(0.6, 0.6, 0.2, 0.2, 3)}));
  scenes.push_back(scene_with({gt(0.4, 0.5, 0.2, 0.2, 6)}));
  scenes.push_back(scene_with({gt(0.7, 0.4, 0.2, 0.2, 7)}));
  scenes.push_back(
      scene_with({gt(0.25, 0.7, 0.2, 0.2, 2), gt(0.75, 0.25, 0.2, 0.2, 6)}));
  scenes.push_back(scene_with({}));
  SketchPool pool = dummy_pool({2, 3, 6, 7});
  ClassSplit split = make_class_split({2, 3, 6, 7}, {0, 1, 2, 3});
  EvalConfig config;
  config.iou_thresholds = {0.5};

  CrossDatasetResult cross =
      cross_dataset_evaluate(gt_oracle(), scenes, pool, split, config);
  REQUIRE(cross.has_shared);
  REQUIRE(cross.has_query_only);
  CHECK_FALSE(cross.has_sketch_only);
  REQUIRE(cross.shared.per_class.size() == 2);
  CHECK(cross.shared.per_class[0].class_id == 2);
  CHECK(cross.shared.per_class[1].class_id == 3);
  CHECK(cross.shared.map == 1.0);
  REQUIRE(cross.query_only.per_class.size() == 2);
  CHECK(cross.query_only.per_class[0].class_id == 6);
  CHECK(cross.query_only.per_class[1].class_id == 7);
  CHECK(cross.query_only.map == 1.0);

  // The sketch-only side needs sketches of those classes.
  CHECK_THROWS_AS(cross_dataset_evaluate(gt_oracle(), scenes, pool, split,
                                         config, true),
                  TensorError);
  std::vector<TrainScene> wider = scenes;
  wider.push_back(scene_with({gt(0.5, 0.5, 0.2, 0.2, 0)}));
  wider.push_back(scene_with({gt(0.3, 0.6, 0.2, 0.2, 1)}));
  CrossDatasetResult with_extra = cross_dataset_evaluate(
      gt_oracle(), wider, dummy_pool({0, 1, 2, 3, 6, 7}), split, config, true);
  REQUIRE(with_extra.has_sketch_only);
  CHECK(with_extra.sketch_only.map == 1.0);
  CHECK(with_extra.sketch_only.per_class.size() == 2);

  // Same vocabulary on both sides degenerates to the plain evaluation.
  ClassSplit same = make_class_split({2, 3, 6, 7}, {2, 3, 6, 7});
  CrossDatasetResult degenerate =
      cross_dataset_evaluate(gt_oracle(), scenes, pool, same, config);
  CHECK(degenerate.has_shared);
  CHECK_FALSE(degenerate.has_query_only);
  APResult plain = sgol_evaluate(gt_oracle(), scenes, pool, config);
  CHECK(degenerate.shared.ap50 == plain.ap50);
  CHECK(degenerate.shared.map == plain.map);
  REQUIRE(degenerate.shared.per_class.size() == plain.per_class.size());
  for (std::size_t c = 0; c < plain.per_class.size(); ++c)
    CHECK(degenerate.shared.per_class[c].ap == plain.per_class[c].ap);

  // Nothing to evaluate or nothing to sketch with is an error.
  ClassSplit empty;
  empty.sketch_only = {0};
  CHECK_THROWS_AS(
      cross_dataset_evaluate(gt_oracle(), scenes, pool, empty, config),
      TensorError);
  ClassSplit missing;
  missing.shared = {4};
  CHECK_THROWS_AS(
      cross_dataset_evaluate(gt_oracle(), scenes, pool, missing, config),
      TensorError);
  ClassSplit no_sketch_only = make_class_split({2, 3}, {2, 3});
  CHECK_THROWS_AS(cross_dataset_evaluate(gt_oracle(), scenes, pool,
                                         no_sketch_only, config, true),
                  TensorError);
}

TEST_CASE("eval: pipeline adapters wrap the networks") {
  SketchDETRConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.num_queries = 3;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.dim_ff = 16;
  cfg.conditioning = ConditioningMode::object_query;
  cfg.image_size = 12;
  cfg.sketch_size = 12;
  cfg.backbone_channels = {4, 6, 8};
  cfg.sketch_channels = {4, 6, 8};
  SketchDETR model(cfg, 11);

  Rng rng(15);
  std::vector<double> image_data(3 * 12 * 12), sketch_data(12 * 12);
  for (double& v : image_data) v = rng.uniform(0.0, 1.0);
  for (double& v : sketch_data) v = rng.uniform(0.0, 1.0);
  TrainScene scene;
  scene.image = Tensor::from_data({3, 12, 12}, image_data);
  Tensor sketch = Tensor::from_data({1, 12, 12}, sketch_data);

  Pipeline conditioned = make_conditioned_pipeline(model, 0.0);
  DetectionSet via_pipeline = conditioned(scene, sketch, 5);
  DetectionSet direct = postprocess(model.forward(scene.image, &sketch), 0.0, 5);
  REQUIRE(via_pipeline.size() == 3);
  REQUIRE(via_pipeline.size() == direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(via_pipeline[i].label == 5);
    CHECK(via_pipeline[i].score == direct[i].score);
    CHECK(via_pipeline[i].box.cx == direct[i].box.cx);
    CHECK(via_pipeline[i].box.cy == direct[i].box.cy);
    CHECK(via_pipeline[i].box.w == direct[i].box.w);
    CHECK(via_pipeline[i].box.h == direct[i].box.h);
  }

  SketchDETRConfig plain_cfg = cfg;
  plain_cfg.conditioning = ConditioningMode::none;
  plain_cfg.num_classes = 8;
  SketchDETR plain(plain_cfg, 12);
  SketchClassifier classifier(8, 8, 12, {4, 6, 8}, 13);
  PretrainedPair pair{&plain, &classifier};

  Pipeline filtered = make_t2b_pipeline(pair, 0.0, false);
  T2BOptions options;
  options.score_threshold = 0.0;
  options.true_class = 4;
  DetectionSet t2b_direct = t2b_inference(pair, scene.image, sketch, options);
  DetectionSet t2b_via = filtered(scene, sketch, 4);
  REQUIRE(t2b_via.size() == t2b_direct.size());
  for (std::size_t i = 0; i < t2b_via.size(); ++i) {
    CHECK(t2b_via[i].label == t2b_direct[i].label);
    CHECK(t2b_via[i].score == t2b_direct[i].score);
  }

  Pipeline upper = make_t2b_pipeline(pair, 0.0, true);
  for (const Detection& d : upper(scene, sketch, 4)) CHECK(d.label == 4);

  SketchDETRConfig mask_cfg = cfg;
  mask_cfg.mask_head = true;
  SketchDETR masked(mask_cfg, 14);
  Pipeline mask_pipeline = make_conditioned_pipeline(masked, 0.0, 16);
  DetectionSet mask_dets = mask_pipeline(scene, sketch, 2);
  REQUIRE(mask_dets.size() == 3);
  for (const Detection& d : mask_dets) {
    REQUIRE(d.has_mask());
    CHECK(d.mask.height == 16);
    CHECK(d.mask.width == 16);
  }
}
