#include "sgol/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace sgol {

namespace {

// Output side of a 3x3 stride-2 pad-1 conv.
std::size_t halve(std::size_t s) { return (s + 1) / 2; }

void require(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

}  // namespace

const char* conditioning_name(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::object_query: return "object_query";
    case ConditioningMode::encoder_concat: return "encoder_concat";
    case ConditioningMode::none: return "none";
  }
  throw TensorError("conditioning_name: bad mode");
}

ConditioningMode conditioning_from_name(const std::string& name) {
  if (name == "object_query") return ConditioningMode::object_query;
  if (name == "encoder_concat") return ConditioningMode::encoder_concat;
  if (name == "none") return ConditioningMode::none;
  throw TensorError("unknown conditioning mode: " + name);
}

void SketchDETRConfig::validate() const {
  require(d > 0 && d % 4 == 0, "config: d must be a positive multiple of 4");
  require(heads > 0 && d % heads == 0, "config: heads must divide d");
  require(num_queries > 0, "config: num_queries must be positive");
  require(enc_layers > 0 && dec_layers > 0,
          "config: encoder and decoder need at least one layer each");
  require(dim_ff > 0, "config: dim_ff must be positive");
  require(backbone_channels.size() == 3 && sketch_channels.size() == 3,
          "config: channel schedules must list exactly three stages");
  require(image_size >= 8 && sketch_size >= 8,
          "config: image and sketch sizes must be at least 8");
  require((conditioning == ConditioningMode::none) == (num_classes > 0),
          "config: the class head goes with conditioning none, the binary "
          "head with a conditioned variant");
}

std::size_t SketchDETRConfig::feature_size() const {
  return halve(halve(halve(image_size)));
}

std::size_t SketchDETRConfig::mask_size() const { return feature_size() * 4; }

ConvStack::ConvStack(ParamRegistry& reg, const std::string& prefix, Rng& rng,
                     std::size_t in, const std::vector<std::size_t>& channels,
                     std::size_t out) {
  require(channels.size() == 3, "ConvStack: need exactly three channel counts");
  c1 = Conv2d(reg, prefix + ".c1", rng, in, channels[0], 3, 2, 1);
  c2 = Conv2d(reg, prefix + ".c2", rng, channels[0], channels[1], 3, 2, 1);
  c3 = Conv2d(reg, prefix + ".c3", rng, channels[1], channels[2], 3, 2, 1);
  proj = Conv2d(reg, prefix + ".proj", rng, channels[2], out, 1, 1, 0);
}

Tensor ConvStack::forward(const Tensor& x) const {
  return proj.forward(relu(c3.forward(relu(c2.forward(relu(c1.forward(x)))))));
}

Tensor grid_to_tokens(const Tensor& grid) {
  require(grid.rank() == 3, "grid_to_tokens: expected a (C,H,W) tensor");
  const Shape& s = grid.shape();
  return transpose2d(reshape(grid, {s[0], s[1] * s[2]}));
}

Tensor upsample2x(const Tensor& x) {
  require(x.rank() == 3, "upsample2x: expected a (C,H,W) tensor");
  const Shape& s = x.shape();
  Tensor r = reshape(x, {s[0], s[1], 1, s[2], 1});
  r = broadcast_to(r, {s[0], s[1], 2, s[2], 2});
  return reshape(r, {s[0], s[1] * 2, s[2] * 2});
}

Tensor condition_object_queries(const Tensor& queries, const Tensor& sketch_emb,
                                const Linear& proj) {
  require(queries.rank() == 2, "condition_object_queries: queries must be (N,d)");
  const std::size_t n = queries.shape()[0], d = queries.shape()[1];
  require(sketch_emb.shape() == Shape{d},
          "condition_object_queries: embedding width mismatch");
  Tensor rows = broadcast_to(reshape(sketch_emb, {1, d}), {n, d});
  return proj.forward(concat({queries, rows}, 1));
}

Tensor condition_encoder(const Tensor& features, const Tensor& sketch_emb,
                         const Conv2d& fuse) {
  require(features.rank() == 3, "condition_encoder: features must be (d,H,W)");
  const Shape& s = features.shape();
  require(sketch_emb.shape() == Shape{s[0]},
          "condition_encoder: embedding width mismatch");
  Tensor grid = broadcast_to(reshape(sketch_emb, {s[0], 1, 1}), s);
  return fuse.forward(concat({features, grid}, 0));
}

SketchDETR::SketchDETR(const SketchDETRConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  backbone = ConvStack(params_, "backbone", rng, 3, config_.backbone_channels,
                       config_.d);
  if (config_.conditioning != ConditioningMode::none)
    sketch_encoder = ConvStack(params_, "sketch", rng, 1,
                               config_.sketch_channels, config_.d);
  if (config_.conditioning == ConditioningMode::object_query)
    query_fuse = Linear(params_, "cond.proj", rng, 2 * config_.d, config_.d);
  if (config_.conditioning == ConditioningMode::encoder_concat)
    encoder_fuse = Conv2d(params_, "cond.fuse", rng, 2 * config_.d, config_.d,
                          1, 1, 0);
  {
    std::vector<double> q(config_.num_queries * config_.d);
    for (double& v : q) v = rng.normal(0.0, 0.02);
    queries = params_.add(
        "queries", Tensor::from_data({config_.num_queries, config_.d},
                                     std::move(q), true));
  }
  for (std::size_t i = 0; i < config_.enc_layers; ++i)
    encoder.emplace_back(params_, "enc" + std::to_string(i), rng, config_.d,
                         config_.heads, config_.dim_ff);
  for (std::size_t i = 0; i < config_.dec_layers; ++i)
    decoder.emplace_back(params_, "dec" + std::to_string(i), rng, config_.d,
                         config_.heads, config_.dim_ff);
  box_mlp1 = Linear(params_, "head.box1", rng, config_.d, config_.d);
  box_mlp2 = Linear(params_, "head.box2", rng, config_.d, config_.d);
  box_mlp3 = Linear(params_, "head.box3", rng, config_.d, 4);
  logits_head = Linear(params_, "head.cls", rng, config_.d,
                       config_.num_logit_classes());
  if (config_.mask_head) {
    mask_attn = MultiHeadAttention(params_, "mask.attn", rng, config_.d,
                                   config_.heads);
    mask_c1 = Conv2d(params_, "mask.c1", rng, config_.heads, config_.heads, 3,
                     1, 1);
    mask_c2 = Conv2d(params_, "mask.c2", rng, config_.heads, config_.heads, 3,
                     1, 1);
    mask_c3 = Conv2d(params_, "mask.c3", rng, config_.heads, 1, 3, 1, 1);
  }
  const std::size_t h = config_.feature_size();
  pos_grid_ = positional_encoding_2d(h, h, config_.d);
}

Tensor SketchDETR::backbone_forward(const Tensor& image) const {
  const std::size_t s = config_.image_size;
  require(image.shape() == Shape{3, s, s},
          "backbone: image must be (3," + std::to_string(s) + "," +
              std::to_string(s) + "), got " + shape_str(image.shape()));
  return backbone.forward(image);
}

Tensor SketchDETR::sketch_encode(const Tensor& sketch) const {
  require(config_.conditioning != ConditioningMode::none,
          "sketch_encode: model is unconditioned");
  const std::size_t s = config_.sketch_size;
  require(sketch.shape() == Shape{1, s, s},
          "sketch_encode: raster must be (1," + std::to_string(s) + "," +
              std::to_string(s) + "), got " + shape_str(sketch.shape()));
  Tensor grid = sketch_encoder.forward(sketch);
  return mean(grid, {1, 2}, /*keepdims=*/false);
}

DetectionOutput SketchDETR::forward(const Tensor& image,
                                    const Tensor* sketch) const {
  const bool conditioned = config_.conditioning != ConditioningMode::none;
  require(!conditioned || sketch != nullptr,
          "forward: this conditioning mode requires a sketch");
  require(conditioned || sketch == nullptr,
          "forward: unconditioned model takes no sketch");

  Tensor features = backbone_forward(image);
  Tensor sketch_emb;
  if (conditioned) sketch_emb = sketch_encode(*sketch);
  if (config_.conditioning == ConditioningMode::encoder_concat)
    features = condition_encoder(features, sketch_emb, encoder_fuse);

  Tensor memory = grid_to_tokens(features);
  Tensor pos = grid_to_tokens(pos_grid_);
  for (const EncoderLayer& layer : encoder) memory = layer.forward(memory, &pos);

  Tensor q = queries;
  if (config_.conditioning == ConditioningMode::object_query)
    q = condition_object_queries(queries, sketch_emb, query_fuse);

  // The queries are both the decoder input and its query-positional stream;
  // the first layer norm rescales their small init to unit scale, so slots
  // diverge from step one instead of waiting on the loss to break symmetry.
  Tensor x = q;
  for (const DecoderLayer& layer : decoder) x = layer.forward(x, memory, &q, &pos);

  Tensor h1 = relu(box_mlp1.forward(x));
  Tensor h2 = relu(box_mlp2.forward(h1));
  DetectionOutput out;
  out.boxes = sigmoid(box_mlp3.forward(h2));
  Tensor logits = logits_head.forward(x);
  if (config_.num_classes == 0)
    out.obj_logits = logits;
  else
    out.class_logits = logits;
  if (config_.mask_head) out.mask_logits = mask_head_forward(x, memory, pos);
  return out;
}

Tensor SketchDETR::mask_head_forward(const Tensor& decoder_out,
                                     const Tensor& memory,
                                     const Tensor& memory_pos) const {
  require(config_.mask_head, "mask_head_forward: mask head is disabled");
  const std::size_t h = config_.feature_size();
  require(decoder_out.rank() == 2 && decoder_out.shape()[1] == config_.d,
          "mask_head_forward: decoder outputs must be (N,d)");
  require(memory.shape() == Shape{h * h, config_.d},
          "mask_head_forward: memory must be (H*W,d)");
  std::vector<Tensor> attn;
  mask_attn.forward(decoder_out, memory, nullptr, &memory_pos, &attn);
  const std::size_t n = decoder_out.shape()[0];
  std::vector<Tensor> per_query;
  per_query.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Tensor> head_maps;
    head_maps.reserve(attn.size());
    for (const Tensor& a : attn)
      head_maps.push_back(reshape(slice(a, 0, i, 1), {1, h, h}));
    Tensor m = concat(head_maps, 0);
    m = upsample2x(relu(mask_c1.forward(m)));
    m = upsample2x(relu(mask_c2.forward(m)));
    per_query.push_back(mask_c3.forward(m));
  }
  return concat(per_query, 0);
}

DetectionSet postprocess(const DetectionOutput& out, double score_threshold,
                         std::size_t label_for_binary,
                         std::size_t mask_output_size) {
  NoGradGuard ng;
  const Tensor& logits = out.logits();
  require(out.boxes.rank() == 2 && out.boxes.shape()[1] == 4,
          "postprocess: boxes must be (N,4)");
  const std::size_t n = out.boxes.shape()[0];
  require(logits.rank() == 2 && logits.shape()[0] == n,
          "postprocess: logits row count mismatch");
  const std::size_t k = logits.shape()[1];

  std::size_t mask_h = 0, factor = 1;
  if (out.mask_logits.defined()) {
    require(out.mask_logits.rank() == 3 && out.mask_logits.shape()[0] == n,
            "postprocess: mask logits must be (N,Hm,Wm)");
    mask_h = out.mask_logits.shape()[1];
    require(out.mask_logits.shape()[2] == mask_h,
            "postprocess: mask logits must be square");
    if (mask_output_size != 0) {
      require(mask_output_size % mask_h == 0,
              "postprocess: mask output size must be a multiple of the head "
              "resolution");
      factor = mask_output_size / mask_h;
    }
  }

  Tensor probs = softmax(logits, 1);
  const std::vector<double>& prob = probs.data();
  const std::vector<double>& box = out.boxes.data();
  DetectionSet dets;
  for (std::size_t i = 0; i < n; ++i) {
    double score;
    std::size_t label;
    if (out.is_multiclass()) {
      std::size_t best = 0;
      for (std::size_t c = 1; c + 1 < k; ++c)
        if (prob[i * k + c] > prob[i * k + best]) best = c;
      score = prob[i * k + best];
      label = best;
    } else {
      score = prob[i * k];
      label = label_for_binary;
    }
    if (score < score_threshold) continue;
    Detection det;
    det.score = score;
    det.label = label;
    det.box = {std::clamp(box[i * 4 + 0], 0.0, 1.0),
               std::clamp(box[i * 4 + 1], 0.0, 1.0),
               std::clamp(box[i * 4 + 2], 0.0, 1.0),
               std::clamp(box[i * 4 + 3], 0.0, 1.0)};
    if (out.mask_logits.defined()) {
      const std::vector<double>& ml = out.mask_logits.data();
      const std::size_t out_h = mask_h * factor;
      det.mask = make_mask(out_h, out_h);
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_h; ++x)
          det.mask.at(y, x) =
              ml[(i * mask_h + y / factor) * mask_h + x / factor] >= 0.0 ? 1
                                                                         : 0;
    }
    dets.push_back(std::move(det));
  }
  return dets;
}

SketchClassifier::SketchClassifier(std::size_t d, std::size_t num_classes,
                                   std::size_t sketch_size,
                                   const std::vector<std::size_t>& channels,
                                   std::uint64_t seed)
    : num_classes_(num_classes), sketch_size_(sketch_size) {
  require(d > 0 && num_classes > 0 && sketch_size >= 8,
          "classifier: bad dimensions");
  Rng rng(seed);
  trunk = ConvStack(params_, "trunk", rng, 1, channels, d);
  head = Linear(params_, "head", rng, d, num_classes);
}

Tensor SketchClassifier::logits(const Tensor& sketch) const {
  require(sketch.shape() == Shape{1, sketch_size_, sketch_size_},
          "classifier: raster must be (1," + std::to_string(sketch_size_) +
              "," + std::to_string(sketch_size_) + "), got " +
              shape_str(sketch.shape()));
  Tensor emb = mean(trunk.forward(sketch), {1, 2}, /*keepdims=*/false);
  return head.forward(emb);
}

std::size_t sketch_classify(const SketchClassifier& classifier,
                            const Tensor& sketch) {
  NoGradGuard ng;
  Tensor logits = classifier.logits(sketch);
  const std::vector<double>& l = logits.data();
  std::size_t best = 0;
  for (std::size_t c = 1; c < l.size(); ++c)
    if (l[c] > l[best]) best = c;
  return best;
}

DetectionSet t2b_inference(const PretrainedPair& pair, const Tensor& image,
                           const Tensor& sketch, const T2BOptions& options) {
  require(pair.detector != nullptr, "t2b: missing detector");
  const SketchDETRConfig& cfg = pair.detector->config();
  require(cfg.num_classes > 0 && cfg.conditioning == ConditioningMode::none,
          "t2b: detector must be an unconditioned multi-class model");
  std::size_t predicted;
  if (options.upper_bound) {
    require(options.true_class < cfg.num_classes,
            "t2b: true class outside the detector vocabulary");
    predicted = options.true_class;
  } else {
    require(pair.classifier != nullptr, "t2b: missing classifier");
    require(pair.classifier->num_classes() == cfg.num_classes,
            "t2b: detector and classifier vocabulary sizes differ");
    predicted = sketch_classify(*pair.classifier, sketch);
  }
  NoGradGuard ng;
  DetectionSet all =
      postprocess(pair.detector->forward(image, nullptr),
                  options.score_threshold, 0, options.mask_output_size);
  DetectionSet kept;
  for (Detection& det : all)
    if (det.label == predicted) kept.push_back(std::move(det));
  return kept;
}

}  // namespace sgol
