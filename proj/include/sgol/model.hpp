#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgol/data.hpp"
#include "sgol/detection.hpp"
#include "sgol/losses.hpp"
#include "sgol/nn.hpp"
#include "sgol/rng.hpp"
#include "sgol/tensor.hpp"

namespace sgol {

/// How the sketch embedding enters the detector.
///  - object_query: each learned query is concatenated with the sketch
///    embedding and projected back to width d before the decoder.
///  - encoder_concat: the sketch embedding is broadcast over the feature
///    grid, channel-concatenated, and fused by a 1x1 conv before the
///    encoder.
///  - none: no sketch input; the detector predicts a label per query from
///    a multi-class head instead.
enum class ConditioningMode { object_query, encoder_concat, none };

const char* conditioning_name(ConditioningMode mode);
ConditioningMode conditioning_from_name(const std::string& name);

struct SketchDETRConfig {
  std::size_t d = 32;            // model width; divisible by 4 and by heads
  std::size_t heads = 4;
  std::size_t num_queries = 8;   // must cover the max instances per scene
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t dim_ff = 64;
  ConditioningMode conditioning = ConditioningMode::object_query;
  /// 0 selects the binary object/no-object head used by conditioned
  /// variants. A positive count selects a (num_classes+1)-way head with a
  /// trailing no-object class and requires conditioning == none.
  std::size_t num_classes = 0;
  bool mask_head = false;
  std::size_t image_size = 48;
  std::size_t sketch_size = 32;
  /// Channels of the three stride-2 convs; a 1x1 conv then maps to d.
  std::vector<std::size_t> backbone_channels = {16, 24, 32};
  std::vector<std::size_t> sketch_channels = {8, 16, 32};

  void validate() const;  // throws TensorError on inconsistent settings
  std::size_t feature_size() const;     // image_size through three stride-2 convs
  std::size_t mask_size() const;        // feature_size * 4
  std::size_t num_logit_classes() const {
    return num_classes == 0 ? 2 : num_classes + 1;
  }
};

/// Three 3x3 stride-2 convs with relu, then a 1x1 projection to `out`
/// channels. Maps (in x S x S) to (out x ceil(S/8) x ceil(S/8)).
struct ConvStack {
  Conv2d c1, c2, c3, proj;

  ConvStack() = default;
  ConvStack(ParamRegistry& reg, const std::string& prefix, Rng& rng,
            std::size_t in, const std::vector<std::size_t>& channels,
            std::size_t out);
  Tensor forward(const Tensor& x) const;
};

/// (d x H x W) grid to (H*W x d) token rows, y-major.
Tensor grid_to_tokens(const Tensor& grid);

/// Nearest-neighbour 2x upsample of a (C x H x W) tensor.
Tensor upsample2x(const Tensor& x);

/// Concatenates the sketch embedding (d) to every query row (N x d) and
/// projects back to d through `proj` (2d -> d).
Tensor condition_object_queries(const Tensor& queries, const Tensor& sketch_emb,
                                const Linear& proj);

/// Broadcasts the sketch embedding (d) over the (d x H x W) feature grid,
/// channel-concatenates to 2d, and fuses with the 1x1 conv `fuse` (2d -> d).
Tensor condition_encoder(const Tensor& features, const Tensor& sketch_emb,
                         const Conv2d& fuse);

/// Set-prediction detector: conv backbone to stride 8, transformer
/// encoder/decoder over the flattened grid with sinusoidal positions, a
/// 3-layer sigmoid box head and a linear logits head, plus an optional
/// attention-map mask head. Conditioned variants additionally embed a
/// sketch raster with a mirrored conv stack and global average pooling.
class SketchDETR {
 public:
  SketchDETR(const SketchDETRConfig& config, std::uint64_t seed);

  const SketchDETRConfig& config() const { return config_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  /// (3 x S x S) image to (d x H x W) feature grid.
  Tensor backbone_forward(const Tensor& image) const;

  /// (1 x s x s) sketch raster to a (d) embedding via global average pool.
  Tensor sketch_encode(const Tensor& sketch) const;

  /// Full pass. `sketch` is required exactly when conditioning != none.
  DetectionOutput forward(const Tensor& image, const Tensor* sketch) const;

  /// Per-query mask logits (N x 4H x 4W) from decoder outputs (N x d) and
  /// encoder memory (H*W x d). Requires the mask head to be enabled.
  Tensor mask_head_forward(const Tensor& decoder_out, const Tensor& memory,
                           const Tensor& memory_pos) const;

  // Components are public so tests and tools can pin weights directly.
  ConvStack backbone;
  ConvStack sketch_encoder;   // conditioned variants only
  Tensor queries;             // (N x d)
  Linear query_fuse;          // object_query conditioning: (2d -> d)
  Conv2d encoder_fuse;        // encoder_concat conditioning: 1x1 (2d -> d)
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  Linear box_mlp1, box_mlp2, box_mlp3;  // d -> d -> d -> 4, sigmoid output
  Linear logits_head;                   // d -> 2 or d -> num_classes+1
  MultiHeadAttention mask_attn;         // mask head only
  Conv2d mask_c1, mask_c2, mask_c3;     // heads -> heads -> heads -> 1

 private:
  SketchDETRConfig config_;
  ParamRegistry params_;
  Tensor pos_grid_;  // constant (d x H x W) sinusoidal encoding
};

/// Turns raw network outputs into thresholded detections. Binary-head
/// outputs score each query by the object softmax probability and stamp
/// `label_for_binary` on the survivors; multi-class outputs take the
/// highest non-empty softmax probability as score and label (ties to the
/// lowest class id). Masks are binarized at probability 0.5 and, when
/// `mask_output_size` is nonzero, nearest-upscaled to that square size.
/// Boxes are clamped to [0,1]. A zero threshold keeps every query.
DetectionSet postprocess(const DetectionOutput& out, double score_threshold,
                         std::size_t label_for_binary = 0,
                         std::size_t mask_output_size = 0);

/// Sketch-to-class network: the sketch conv trunk plus a linear head over
/// global class ids.
class SketchClassifier {
 public:
  SketchClassifier(std::size_t d, std::size_t num_classes,
                   std::size_t sketch_size,
                   const std::vector<std::size_t>& channels,
                   std::uint64_t seed);

  Tensor logits(const Tensor& sketch) const;  // (num_classes)
  std::size_t num_classes() const { return num_classes_; }
  std::size_t sketch_size() const { return sketch_size_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  ConvStack trunk;
  Linear head;

 private:
  std::size_t num_classes_ = 0;
  std::size_t sketch_size_ = 0;
  ParamRegistry params_;
};

/// Argmax class for a sketch raster; ties resolve to the lowest id.
std::size_t sketch_classify(const SketchClassifier& classifier,
                            const Tensor& sketch);

/// Frozen multi-class detector plus sketch classifier used by the
/// filtering baseline.
struct PretrainedPair {
  const SketchDETR* detector = nullptr;      // num_classes > 0, unconditioned
  const SketchClassifier* classifier = nullptr;
};

struct T2BOptions {
  double score_threshold = 0.5;
  /// Substitutes `true_class` for the classifier prediction, bounding the
  /// baseline from above.
  bool upper_bound = false;
  std::size_t true_class = 0;
  std::size_t mask_output_size = 0;
};

/// Runs the detector on the image, classifies the sketch, and keeps
/// exactly the detections whose label equals the predicted class.
DetectionSet t2b_inference(const PretrainedPair& pair, const Tensor& image,
                           const Tensor& sketch, const T2BOptions& options);

/// Average-pools factor x factor blocks and keeps cells covered >= 0.5.
/// Mask dimensions must be divisible by `factor`.
Mask downsample_mask(const Mask& mask, std::size_t factor);

/// A scene ready for training: image tensor, instances with global class
/// ids (masks already at mask-head resolution when requested), and the
/// sorted unique class ids present.
struct TrainScene {
  Tensor image;
  std::vector<TargetInstance> instances;
  std::vector<std::size_t> classes_present;
};

/// Loads scenes from disk. `mask_size` nonzero also loads instance masks
/// downsampled to that square size (image_size must be a multiple of it).
std::vector<TrainScene> prepare_scenes(const DatasetManifest& m,
                                       const std::vector<std::size_t>& scene_indices,
                                       std::size_t mask_size = 0);
std::vector<TrainScene> prepare_scenes(const DatasetManifest& m,
                                       std::size_t mask_size = 0);

/// Sketch rasters of one style grouped by global class id.
struct SketchPool {
  char style = 'A';
  std::size_t sketch_size = 32;
  std::map<std::size_t, std::vector<Tensor>> per_class;

  bool has_class(std::size_t c) const { return per_class.count(c) != 0; }
  const std::vector<Tensor>& of(std::size_t c) const;
  std::vector<std::size_t> classes() const;
};

SketchPool prepare_sketch_pool(const DatasetManifest& m, char style,
                               bool test_split);

struct EpochMetrics {
  std::size_t steps = 0;
  double mean_loss = 0;
  double mean_classification = 0;
  double mean_box_giou = 0;
  double mean_box_l1 = 0;
  double mean_mask_focal = 0;
  double mean_mask_dice = 0;
};

/// One pass over the scenes in a seeded random order. Conditioned models
/// draw, for every class present in a scene, one training sketch of that
/// class and regress just that class's instances against a binary head.
/// Unconditioned multi-class models (`sketches` must then be null) take
/// one step per scene over all instances with their real labels. Every
/// step is forward, set-matched loss, backward, optimizer update; a
/// non-finite loss aborts with a diagnostic.
EpochMetrics train_epoch(SketchDETR& model,
                         const std::vector<TrainScene>& scenes,
                         const SketchPool* sketches, AdamW& opt, Rng& rng,
                         const LossWeights& weights = {});

struct ClassifierEpochMetrics {
  std::size_t steps = 0;
  double mean_loss = 0;
  double accuracy = 0;
};

/// One cross-entropy pass over every sketch in the pool, seeded order.
/// Accuracy is measured on the pre-update logits of each step.
ClassifierEpochMetrics train_classifier_epoch(SketchClassifier& classifier,
                                              const SketchPool& pool,
                                              AdamW& opt, Rng& rng);

}  // namespace sgol
