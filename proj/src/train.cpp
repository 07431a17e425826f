#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "sgol/model.hpp"

namespace sgol {

Mask downsample_mask(const Mask& mask, std::size_t factor) {
  if (factor == 0 || mask.height == 0 || mask.height % factor != 0 ||
      mask.width % factor != 0)
    throw TensorError("downsample_mask: dimensions must be positive multiples "
                      "of the factor");
  Mask out = make_mask(mask.height / factor, mask.width / factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      std::size_t covered = 0;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx)
          covered += mask.at(y * factor + dy, x * factor + dx) ? 1 : 0;
      out.at(y, x) = 2 * covered >= factor * factor ? 1 : 0;
    }
  return out;
}

std::vector<TrainScene> prepare_scenes(
    const DatasetManifest& m, const std::vector<std::size_t>& scene_indices,
    std::size_t mask_size) {
  std::vector<TrainScene> out;
  out.reserve(scene_indices.size());
  for (std::size_t idx : scene_indices) {
    if (idx >= m.scenes.size())
      throw DataError("prepare_scenes: scene index out of range");
    TrainScene scene;
    scene.image = to_tensor(load_scene_image(m, idx));
    const std::vector<AnnotationRecord>& anns = m.scenes[idx].annotations;
    for (std::size_t a = 0; a < anns.size(); ++a) {
      TargetInstance inst;
      inst.box = anns[a].box;
      inst.class_id = anns[a].class_id;
      if (mask_size != 0) {
        Mask full = load_annotation_mask(m, idx, a);
        if (mask_size > full.height || full.height % mask_size != 0)
          throw DataError("prepare_scenes: mask size must divide the stored "
                          "mask resolution");
        inst.mask = downsample_mask(full, full.height / mask_size);
      }
      scene.classes_present.push_back(inst.class_id);
      scene.instances.push_back(std::move(inst));
    }
    std::sort(scene.classes_present.begin(), scene.classes_present.end());
    scene.classes_present.erase(
        std::unique(scene.classes_present.begin(), scene.classes_present.end()),
        scene.classes_present.end());
    out.push_back(std::move(scene));
  }
  return out;
}

std::vector<TrainScene> prepare_scenes(const DatasetManifest& m,
                                       std::size_t mask_size) {
  std::vector<std::size_t> all(m.scenes.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return prepare_scenes(m, all, mask_size);
}

const std::vector<Tensor>& SketchPool::of(std::size_t c) const {
  auto it = per_class.find(c);
  if (it == per_class.end())
    throw TensorError("sketch pool has no class " + std::to_string(c));
  return it->second;
}

std::vector<std::size_t> SketchPool::classes() const {
  std::vector<std::size_t> keys;
  keys.reserve(per_class.size());
  for (const auto& [c, v] : per_class) keys.push_back(c);
  return keys;
}

SketchPool prepare_sketch_pool(const DatasetManifest& m, char style,
                               bool test_split) {
  if (style != 'A' && style != 'B')
    throw DataError("prepare_sketch_pool: unknown style");
  SketchPool pool;
  pool.style = style;
  pool.sketch_size = m.sketch_size;
  const std::vector<std::size_t>& indices =
      test_split ? m.test_split(style) : m.train_split(style);
  for (std::size_t i : indices) {
    if (i >= m.sketches.size())
      throw DataError("prepare_sketch_pool: sketch index out of range");
    pool.per_class[m.sketches[i].class_id].push_back(
        to_tensor(load_sketch_raster(m, i)));
  }
  return pool;
}

EpochMetrics train_epoch(SketchDETR& model,
                         const std::vector<TrainScene>& scenes,
                         const SketchPool* sketches, AdamW& opt, Rng& rng,
                         const LossWeights& weights) {
  const bool multiclass = model.config().num_classes > 0;
  if (multiclass && sketches != nullptr)
    throw TensorError("train_epoch: multi-class training takes no sketch pool");
  if (!multiclass && sketches == nullptr)
    throw TensorError("train_epoch: conditioned training needs a sketch pool");

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  EpochMetrics metrics;
  auto step = [&](const Tensor& image, const Tensor* sketch,
                  const std::vector<TargetInstance>& targets,
                  std::size_t scene_idx) {
    try {
      opt.zero_grad();
      LossBreakdown br = hungarian_loss(model.forward(image, sketch), targets,
                                        weights);
      const double total = br.total.value();
      if (!std::isfinite(total))
        throw TensorError("loss is not finite");
      br.total.backward();
      opt.step();
      metrics.steps += 1;
      metrics.mean_loss += total;
      metrics.mean_classification += br.classification;
      metrics.mean_box_giou += br.box_giou;
      metrics.mean_box_l1 += br.box_l1;
      metrics.mean_mask_focal += br.mask_focal;
      metrics.mean_mask_dice += br.mask_dice;
    } catch (const TensorError& e) {
      throw TensorError("train_epoch: scene " + std::to_string(scene_idx) +
                        ": " + e.what());
    }
  };

  for (std::size_t si : order) {
    const TrainScene& scene = scenes[si];
    if (multiclass) {
      if (scene.instances.empty()) continue;
      step(scene.image, nullptr, scene.instances, si);
    } else {
      for (std::size_t c : scene.classes_present) {
        if (!sketches->has_class(c)) continue;
        const std::vector<Tensor>& pool = sketches->of(c);
        const Tensor& sketch = pool[rng.index(pool.size())];
        std::vector<TargetInstance> targets;
        for (const TargetInstance& inst : scene.instances)
          if (inst.class_id == c) {
            TargetInstance t = inst;
            t.class_id = 0;
            targets.push_back(std::move(t));
          }
        step(scene.image, &sketch, targets, si);
      }
    }
  }
  if (metrics.steps == 0)
    throw TensorError("train_epoch: no training pairs produced");
  const double n = static_cast<double>(metrics.steps);
  metrics.mean_loss /= n;
  metrics.mean_classification /= n;
  metrics.mean_box_giou /= n;
  metrics.mean_box_l1 /= n;
  metrics.mean_mask_focal /= n;
  metrics.mean_mask_dice /= n;
  return metrics;
}

ClassifierEpochMetrics train_classifier_epoch(SketchClassifier& classifier,
                                              const SketchPool& pool,
                                              AdamW& opt, Rng& rng) {
  std::vector<std::pair<std::size_t, const Tensor*>> items;
  for (const auto& [c, rasters] : pool.per_class) {
    if (c >= classifier.num_classes())
      throw TensorError("train_classifier_epoch: class id " +
                        std::to_string(c) + " outside the head range");
    for (const Tensor& t : rasters) items.emplace_back(c, &t);
  }
  if (items.empty())
    throw TensorError("train_classifier_epoch: empty sketch pool");
  rng.shuffle(items);

  ClassifierEpochMetrics metrics;
  std::size_t correct = 0;
  for (const auto& [c, sketch] : items) {
    opt.zero_grad();
    Tensor logits = classifier.logits(*sketch);
    const std::vector<double>& l = logits.data();
    std::size_t best = 0;
    for (std::size_t k = 1; k < l.size(); ++k)
      if (l[k] > l[best]) best = k;
    correct += best == c ? 1 : 0;
    Tensor loss = classification_loss(
        reshape(logits, {1, classifier.num_classes()}), {c}, {1.0});
    loss.backward();
    opt.step();
    metrics.steps += 1;
    metrics.mean_loss += loss.value();
  }
  metrics.mean_loss /= static_cast<double>(metrics.steps);
  metrics.accuracy =
      static_cast<double>(correct) / static_cast<double>(metrics.steps);
  return metrics;
}

}  // namespace sgol
