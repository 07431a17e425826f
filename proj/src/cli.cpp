#include "sgol/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sgol/checkpoint.hpp"
#include "sgol/data.hpp"
#include "sgol/eval.hpp"
#include "sgol/losses.hpp"
#include "sgol/matching.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace sgol {

namespace {

// ---------------------------------------------------------------------------
// Errors carrying their exit code
// ---------------------------------------------------------------------------

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptySplitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small file and text helpers
// ---------------------------------------------------------------------------

std::string read_text_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(what + " not readable: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw DataError("write failed: " + path);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const std::string& path, const std::string& what) {
  return hex64(fnv1a64(read_text_file(path, what)));
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

char parse_style(const std::string& s, const std::string& flag) {
  if (s == "A" || s == "B") return s[0];
  throw UsageError(flag + " must be A or B, got '" + s + "'");
}

ordered_json parse_json_text(const std::string& text, const std::string& what) {
  ordered_json j = ordered_json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw UsageError(what + ": not valid structured text");
  return j;
}

// ---------------------------------------------------------------------------
// Config files: same dialect as the dataset manifest; command-line flags win
// over file values, and unknown keys are rejected.
// ---------------------------------------------------------------------------

class ConfigFile {
 public:
  explicit ConfigFile(const std::string& path) {
    if (path.empty()) return;
    j_ = parse_json_text(read_text_file(path, "config file"),
                         "config file " + path);
    if (!j_.is_object())
      throw UsageError("config file " + path + " must hold one object");
  }

  /// Applies the file value for `key` to `dst` unless the corresponding
  /// command-line option (null for config-only keys) was given.
  template <typename T>
  void take(const char* key, const CLI::Option* opt, T& dst) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    if (opt != nullptr && opt->count() > 0) return;
    try {
      dst = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw UsageError(std::string("config key '") + key +
                       "' has the wrong type");
    }
  }

  void take_style(const char* key, const CLI::Option* opt, char& dst) {
    std::string s(1, dst);
    take(key, opt, s);
    dst = parse_style(s, std::string("config key '") + key + "'");
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (used_.count(k) == 0)
        throw UsageError("unknown config key '" + k + "'");
  }

 private:
  ordered_json j_ = ordered_json::object();
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ordered_json environment_json() {
  ordered_json e;
#if defined(__clang__)
  e["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  e["compiler"] = std::string("gcc ") + __VERSION__;
#else
  e["compiler"] = "unknown";
#endif
  e["standard"] = static_cast<long long>(__cplusplus);
#if defined(__linux__)
  e["platform"] = "linux";
#elif defined(__APPLE__)
  e["platform"] = "darwin";
#else
  e["platform"] = "other";
#endif
  e["pointer_bytes"] = sizeof(void*);
  return e;
}

/// Writes the resolved run configuration and returns its digest, which every
/// metrics file carries so a report can be traced back to exact settings.
std::string write_config(const std::string& out_dir, const ordered_json& cfg) {
  const std::string text = cfg.dump(2) + "\n";
  write_text_file(join(out_dir, "config.json"), text);
  return hex64(fnv1a64(text));
}

void write_metrics(const std::string& out_dir, const ordered_json& metrics) {
  write_text_file(join(out_dir, "metrics.json"), metrics.dump(2) + "\n");
}

ordered_json model_config_json(const SketchDETRConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["heads"] = c.heads;
  j["num_queries"] = c.num_queries;
  j["enc_layers"] = c.enc_layers;
  j["dec_layers"] = c.dec_layers;
  j["dim_ff"] = c.dim_ff;
  j["conditioning"] = conditioning_name(c.conditioning);
  j["num_classes"] = c.num_classes;
  j["mask_head"] = c.mask_head;
  j["image_size"] = c.image_size;
  j["sketch_size"] = c.sketch_size;
  j["backbone_channels"] = c.backbone_channels;
  j["sketch_channels"] = c.sketch_channels;
  return j;
}

ordered_json ap_json(const APResult& r, const EvalConfig& ec) {
  const std::vector<double> ladder = ec.thresholds();
  const std::size_t i50 = ec.threshold50(ladder);
  ordered_json per = ordered_json::array();
  for (const ClassAP& c : r.per_class) {
    double mean = 0.0;
    for (double a : c.ap) mean += a;
    mean /= static_cast<double>(c.ap.size());
    ordered_json e;
    e["class_id"] = c.class_id;
    e["name"] = c.class_id < kNumShapeClasses ? shape_name(c.class_id)
                                              : "unknown";
    e["n_gt"] = c.n_gt;
    e["ap50"] = c.ap[i50];
    e["ap_mean"] = mean;
    e["ap_by_threshold"] = c.ap;
    e["tp_by_threshold"] = c.tp_count;
    e["fp_by_threshold"] = c.fp_count;
    per.push_back(std::move(e));
  }
  ordered_json j;
  j["map"] = r.map;
  j["ap50"] = r.ap50;
  j["total_gt"] = r.total_gt;
  j["total_tp50"] = r.total_tp50;
  j["total_fp50"] = r.total_fp50;
  j["iou_thresholds"] = ladder;
  j["per_class"] = per;
  return j;
}

void print_ap(const std::string& tag, const APResult& r, const EvalConfig& ec) {
  const std::vector<double> ladder = ec.thresholds();
  const std::size_t i50 = ec.threshold50(ladder);
  for (const ClassAP& c : r.per_class) {
    double mean = 0.0;
    for (double a : c.ap) mean += a;
    mean /= static_cast<double>(c.ap.size());
    std::printf("  class %zu %-11s n_gt %4zu  AP@50 %.4f  AP %.4f\n",
                c.class_id,
                c.class_id < kNumShapeClasses ? shape_name(c.class_id)
                                              : "unknown",
                c.n_gt, c.ap[i50], mean);
  }
  std::printf("%s: mAP %.4f  AP@50 %.4f  (gt %zu, tp@50 %zu, fp@50 %zu)\n",
              tag.c_str(), r.map, r.ap50, r.total_gt, r.total_tp50,
              r.total_fp50);
}

void write_pr_csvs(const std::string& out_dir, const std::string& stem,
                   const APResult& r) {
  for (const ClassAP& c : r.per_class)
    write_text_file(
        join(out_dir, stem + "_class" + std::to_string(c.class_id) + ".csv"),
        pr_curve_csv(c.pr50));
}

// ---------------------------------------------------------------------------
// Model directories: model.ckpt holds the weights, model.json everything
// needed to rebuild the network around them.
// ---------------------------------------------------------------------------

void write_detector_dir(const std::string& dir, const SketchDETR& model,
                        const std::string& variant, char style_train,
                        std::uint64_t seed) {
  save_checkpoint(join(dir, "model.ckpt"), model.params());
  ordered_json j;
  j["schema_version"] = 1;
  j["kind"] = "detector";
  j["variant"] = variant;
  j["style_train"] = std::string(1, style_train);
  j["seed"] = seed;
  j["config"] = model_config_json(model.config());
  write_text_file(join(dir, "model.json"), j.dump(2) + "\n");
}

void write_classifier_dir(const std::string& dir,
                          const SketchClassifier& model, std::size_t d,
                          const std::vector<std::size_t>& channels,
                          char style_train, std::uint64_t seed) {
  save_checkpoint(join(dir, "model.ckpt"), model.params());
  ordered_json j;
  j["schema_version"] = 1;
  j["kind"] = "classifier";
  j["style_train"] = std::string(1, style_train);
  j["seed"] = seed;
  ordered_json c;
  c["d"] = d;
  c["num_classes"] = model.num_classes();
  c["sketch_size"] = model.sketch_size();
  c["channels"] = channels;
  j["config"] = c;
  write_text_file(join(dir, "model.json"), j.dump(2) + "\n");
}

ordered_json read_model_manifest(const std::string& dir,
                                 const std::string& expected_kind) {
  const std::string path = join(dir, "model.json");
  std::ifstream probe(path);
  if (!probe) throw DataError("model manifest not readable: " + path);
  probe.close();
  ordered_json j = ordered_json::parse(read_text_file(path, "model manifest"),
                                       nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw DataError("malformed model manifest: " + path);
  const std::string kind = j.value("kind", "");
  if (kind != expected_kind)
    throw DataError(path + " holds a " + (kind.empty() ? "unknown" : kind) +
                    " model, not a " + expected_kind);
  return j;
}

}  // namespace

LoadedDetector load_detector(const std::string& dir) {
  ordered_json j = read_model_manifest(dir, "detector");
  LoadedDetector out;
  try {
    out.variant = j.at("variant").get<std::string>();
    const std::string style = j.at("style_train").get<std::string>();
    if (style != "A" && style != "B")
      throw DataError("bad style_train in " + join(dir, "model.json"));
    out.style_train = style[0];
    out.seed = j.at("seed").get<std::uint64_t>();
    const ordered_json& c = j.at("config");
    out.config.d = c.at("d").get<std::size_t>();
    out.config.heads = c.at("heads").get<std::size_t>();
    out.config.num_queries = c.at("num_queries").get<std::size_t>();
    out.config.enc_layers = c.at("enc_layers").get<std::size_t>();
    out.config.dec_layers = c.at("dec_layers").get<std::size_t>();
    out.config.dim_ff = c.at("dim_ff").get<std::size_t>();
    out.config.conditioning =
        conditioning_from_name(c.at("conditioning").get<std::string>());
    out.config.num_classes = c.at("num_classes").get<std::size_t>();
    out.config.mask_head = c.at("mask_head").get<bool>();
    out.config.image_size = c.at("image_size").get<std::size_t>();
    out.config.sketch_size = c.at("sketch_size").get<std::size_t>();
    out.config.backbone_channels =
        c.at("backbone_channels").get<std::vector<std::size_t>>();
    out.config.sketch_channels =
        c.at("sketch_channels").get<std::vector<std::size_t>>();
    out.config.validate();
  } catch (const nlohmann::json::exception&) {
    throw DataError("malformed model manifest: " + join(dir, "model.json"));
  } catch (const TensorError& e) {
    throw DataError("inconsistent model manifest " + join(dir, "model.json") +
                    ": " + e.what());
  }
  out.model = std::make_unique<SketchDETR>(out.config, out.seed);
  const std::string ckpt = join(dir, "model.ckpt");
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt);
  try {
    load_checkpoint(ckpt, out.model->params());
  } catch (const TensorError& e) {
    throw DataError("cannot restore " + ckpt + ": " + e.what());
  }
  return out;
}

LoadedClassifier load_classifier(const std::string& dir) {
  ordered_json j = read_model_manifest(dir, "classifier");
  LoadedClassifier out;
  try {
    const std::string style = j.at("style_train").get<std::string>();
    if (style != "A" && style != "B")
      throw DataError("bad style_train in " + join(dir, "model.json"));
    out.style_train = style[0];
    out.seed = j.at("seed").get<std::uint64_t>();
    const ordered_json& c = j.at("config");
    out.d = c.at("d").get<std::size_t>();
    out.num_classes = c.at("num_classes").get<std::size_t>();
    out.sketch_size = c.at("sketch_size").get<std::size_t>();
    out.channels = c.at("channels").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("malformed model manifest: " + join(dir, "model.json"));
  }
  try {
    out.model = std::make_unique<SketchClassifier>(
        out.d, out.num_classes, out.sketch_size, out.channels, out.seed);
  } catch (const TensorError& e) {
    throw DataError("inconsistent model manifest " + join(dir, "model.json") +
                    ": " + e.what());
  }
  const std::string ckpt = join(dir, "model.ckpt");
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt);
  try {
    load_checkpoint(ckpt, out.model->params());
  } catch (const TensorError& e) {
    throw DataError("cannot restore " + ckpt + ": " + e.what());
  }
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenOpts {
  std::string config_path, out;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  DatasetConfig ds;
};

std::string vocab_str(const std::vector<std::size_t>& v) {
  std::string s = "{";
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + std::to_string(v[i]);
  return s + "}";
}

int cmd_gen(const GenOpts& o) {
  const auto t0 = Clock::now();
  fs::create_directories(o.out);

  ordered_json cfg;
  cfg["schema_version"] = 1;
  cfg["command"] = "gen";
  cfg["seed"] = o.seed;
  ordered_json d;
  d["num_scenes"] = o.ds.num_scenes;
  d["image_size"] = o.ds.image_size;
  d["sketch_size"] = o.ds.sketch_size;
  d["train_sketches_per_class"] = o.ds.train_sketches_per_class;
  d["test_sketches_per_class"] = o.ds.test_sketches_per_class;
  d["style_a_vocab"] = o.ds.style_a_vocab;
  d["style_b_vocab"] = o.ds.style_b_vocab;
  ordered_json s;
  s["classes"] = o.ds.scene.classes;
  s["min_instances"] = o.ds.scene.min_instances;
  s["max_instances"] = o.ds.scene.max_instances;
  s["max_pairwise_iou"] = o.ds.scene.max_pairwise_iou;
  s["max_attempts"] = o.ds.scene.max_attempts;
  s["min_scale"] = o.ds.scene.min_scale;
  s["max_scale"] = o.ds.scene.max_scale;
  d["scene"] = s;
  cfg["dataset"] = d;
  const std::string digest = write_config(o.out, cfg);

  DatasetManifest m = build_dataset(o.out, o.ds, o.seed);
  const ClassSplit split = m.split();

  std::set<std::size_t> all(m.style_a_vocab.begin(), m.style_a_vocab.end());
  all.insert(m.style_b_vocab.begin(), m.style_b_vocab.end());
  std::printf("dataset: %s\n", o.out.c_str());
  std::printf("scenes: %zu (image %zux%zu)\n", m.scenes.size(), m.image_size,
              m.image_size);
  std::printf("sketches: style A %zu train + %zu test, style B %zu train + "
              "%zu test (size %zu)\n",
              m.train_split_a.size(), m.test_split_a.size(),
              m.train_split_b.size(), m.test_split_b.size(), m.sketch_size);
  std::printf("classes: %zu total\n", all.size());
  std::printf("split: shared %s  query-only %s  sketch-only %s\n",
              vocab_str(split.shared).c_str(),
              vocab_str(split.query_only).c_str(),
              vocab_str(split.sketch_only).c_str());
  std::printf("config digest: %s\n", digest.c_str());
  std::printf("wall time: %.2fs\n", seconds_since(t0));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

// Detection runs twice as many epochs as the mask fine-tune by default,
// keeping the conventional 2:1 detection:segmentation schedule at toy scale.
constexpr std::size_t kDefaultEpochs = 20;
constexpr std::size_t kDefaultMaskEpochs = 10;

struct TrainOpts {
  std::string config_path, dataset, out, variant;
  std::string init_checkpoint;  // model dir seeding the weights
  std::string init_classifier;  // classifier dir seeding the sketch trunk
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  char style_train = 'A';
  bool mask = false;
  bool pretrain_first = false;
  std::size_t epochs = 0;           // 0 = default for the mode
  std::size_t pretrain_epochs = 0;  // 0 = same as epochs
  AdamWConfig optimizer;
  LossWeights weights;
  SketchDETRConfig model;  // image/sketch size come from the manifest
  std::size_t classifier_d = 32;
  std::vector<std::size_t> classifier_channels = {8, 16, 32};
};

ordered_json optimizer_json(const AdamWConfig& a) {
  ordered_json j;
  j["lr"] = a.lr;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["eps"] = a.eps;
  j["weight_decay"] = a.weight_decay;
  return j;
}

ordered_json weights_json(const LossWeights& w) {
  ordered_json j;
  j["lambda_iou"] = w.lambda_iou;
  j["lambda_l1"] = w.lambda_l1;
  j["eos_weight"] = w.eos_weight;
  j["focal_alpha"] = w.focal_alpha;
  j["focal_gamma"] = w.focal_gamma;
  j["lambda_focal"] = w.lambda_focal;
  j["lambda_dice"] = w.lambda_dice;
  return j;
}

/// Copies the classifier's sketch trunk into the detector's sketch encoder
/// (the two stacks share their architecture when the widths line up).
std::size_t transfer_sketch_trunk(const SketchClassifier& cls,
                                  SketchDETR& det) {
  std::size_t copied = 0;
  for (const Param& p : cls.params().params()) {
    if (p.name.rfind("trunk.", 0) != 0) continue;
    Tensor* dst = det.params().find("sketch." + p.name.substr(6));
    if (dst == nullptr || dst->shape() != p.tensor.shape()) continue;
    dst->data() = p.tensor.data();
    ++copied;
  }
  return copied;
}

int cmd_train(const TrainOpts& opts, std::size_t depth = 0);

int train_classifier(const TrainOpts& o, const DatasetManifest& manifest) {
  const auto t0 = Clock::now();
  const std::size_t epochs = o.epochs ? o.epochs : kDefaultEpochs;

  ordered_json cfg;
  cfg["schema_version"] = 1;
  cfg["command"] = "train";
  cfg["variant"] = o.variant;
  cfg["seed"] = o.seed;
  cfg["style_train"] = std::string(1, o.style_train);
  cfg["epochs"] = epochs;
  cfg["dataset_digest"] =
      file_digest(join(o.dataset, "manifest"), "dataset manifest");
  cfg["optimizer"] = optimizer_json(o.optimizer);
  ordered_json mc;
  mc["d"] = o.classifier_d;
  mc["num_classes"] = kNumShapeClasses;
  mc["sketch_size"] = manifest.sketch_size;
  mc["channels"] = o.classifier_channels;
  cfg["classifier_model"] = mc;
  const std::string digest = write_config(o.out, cfg);

  SketchClassifier model(o.classifier_d, kNumShapeClasses,
                         manifest.sketch_size, o.classifier_channels, o.seed);
  SketchPool pool = prepare_sketch_pool(manifest, o.style_train, false);
  AdamW opt(model.params(), o.optimizer);
  Rng rng = Rng(o.seed).derive(1);

  std::printf("train: variant %s, %zu epochs, style %c, %zu classes in pool\n",
              o.variant.c_str(), epochs, o.style_train,
              pool.per_class.size());
  ordered_json rows = ordered_json::array();
  double final_loss = 0.0, final_acc = 0.0;
  for (std::size_t e = 1; e <= epochs; ++e) {
    ClassifierEpochMetrics m = train_classifier_epoch(model, pool, opt, rng);
    if (!std::isfinite(m.mean_loss))
      throw TensorError("training diverged: non-finite loss");
    ordered_json row;
    row["epoch"] = e;
    row["steps"] = m.steps;
    row["mean_loss"] = m.mean_loss;
    row["accuracy"] = m.accuracy;
    rows.push_back(std::move(row));
    final_loss = m.mean_loss;
    final_acc = m.accuracy;
    std::printf("epoch %3zu/%zu  loss %.4f  acc %.3f\n", e, epochs,
                m.mean_loss, m.accuracy);
  }

  write_classifier_dir(o.out, model, o.classifier_d, o.classifier_channels,
                       o.style_train, o.seed);
  ordered_json metrics;
  metrics["schema_version"] = 1;
  metrics["command"] = "train";
  metrics["config_digest"] = digest;
  metrics["environment"] = environment_json();
  metrics["variant"] = o.variant;
  metrics["style_train"] = std::string(1, o.style_train);
  metrics["epochs"] = rows;
  metrics["initial_loss"] = rows.front()["mean_loss"];
  metrics["final_loss"] = final_loss;
  metrics["final_accuracy"] = final_acc;
  write_metrics(o.out, metrics);

  std::printf("checkpoint: %s (%zu values)\n",
              join(o.out, "model.ckpt").c_str(),
              model.params().total_values());
  std::printf("config digest: %s\n", digest.c_str());
  std::printf("wall time: %.2fs\n", seconds_since(t0));
  return kExitOk;
}

int train_detector(const TrainOpts& opts, const DatasetManifest& manifest,
                   std::size_t depth) {
  const auto t0 = Clock::now();
  TrainOpts o = opts;

  ConditioningMode mode;
  if (o.variant == "multiclass") {
    mode = ConditioningMode::none;
  } else if (o.variant == "sketch_detr_query") {
    mode = ConditioningMode::object_query;
  } else {
    mode = ConditioningMode::encoder_concat;
  }
  const bool conditioned = mode != ConditioningMode::none;

  if (o.mask && o.pretrain_first)
    throw UsageError("--mask fine-tunes an existing detector; combine it "
                     "with --checkpoint, not --pretrain-first");
  if (o.mask && o.init_checkpoint.empty())
    throw MissingInputError("mask training needs a detection checkpoint "
                            "(--checkpoint)");
  if (conditioned && o.init_checkpoint.empty() && !o.pretrain_first)
    throw MissingInputError(
        "conditioned training starts from detection weights: pass "
        "--checkpoint or --pretrain-first");
  if (!conditioned && !o.init_classifier.empty())
    throw UsageError("--classifier seeds the sketch encoder and only applies "
                     "to conditioned variants");

  const std::size_t epochs =
      o.epochs ? o.epochs : (o.mask ? kDefaultMaskEpochs : kDefaultEpochs);

  // An internal detection pretrain stands in for an explicit checkpoint.
  if (conditioned && o.pretrain_first) {
    TrainOpts pre = o;
    pre.variant = "multiclass";
    pre.out = join(o.out, "pretrain");
    pre.mask = false;
    pre.pretrain_first = false;
    pre.init_checkpoint.clear();
    pre.init_classifier.clear();
    pre.epochs = o.pretrain_epochs ? o.pretrain_epochs : epochs;
    std::printf("pretrain: detection weights for %s\n", o.variant.c_str());
    cmd_train(pre, depth + 1);
    o.init_checkpoint = pre.out;
  }

  SketchDETRConfig cfg = o.model;
  cfg.conditioning = mode;
  cfg.num_classes = conditioned ? 0 : kNumShapeClasses;
  cfg.mask_head = o.mask;
  cfg.image_size = manifest.image_size;
  cfg.sketch_size = manifest.sketch_size;
  try {
    cfg.validate();
  } catch (const TensorError& e) {
    throw UsageError(std::string("invalid model configuration: ") + e.what());
  }

  ordered_json run_cfg;
  run_cfg["schema_version"] = 1;
  run_cfg["command"] = "train";
  run_cfg["variant"] = o.variant;
  run_cfg["seed"] = o.seed;
  run_cfg["style_train"] = std::string(1, o.style_train);
  run_cfg["mask"] = o.mask;
  run_cfg["pretrain_first"] = o.pretrain_first;
  run_cfg["epochs"] = epochs;
  if (o.pretrain_first)
    run_cfg["pretrain_epochs"] = o.pretrain_epochs ? o.pretrain_epochs : epochs;
  run_cfg["dataset_digest"] =
      file_digest(join(o.dataset, "manifest"), "dataset manifest");
  // Pretrain output is fully determined by this config, so only an external
  // checkpoint contributes its content to the digest.
  if (!opts.init_checkpoint.empty())
    run_cfg["init_checkpoint_digest"] =
        file_digest(join(opts.init_checkpoint, "model.ckpt"),
                    "initial checkpoint");
  if (!o.init_classifier.empty())
    run_cfg["init_classifier_digest"] = file_digest(
        join(o.init_classifier, "model.ckpt"), "initial classifier");
  run_cfg["optimizer"] = optimizer_json(o.optimizer);
  run_cfg["loss_weights"] = weights_json(o.weights);
  run_cfg["model"] = model_config_json(cfg);
  const std::string digest = write_config(o.out, run_cfg);

  SketchDETR model(cfg, o.seed);
  std::size_t init_copied = 0, trunk_copied = 0;
  if (!o.init_checkpoint.empty()) {
    const std::string ckpt = join(o.init_checkpoint, "model.ckpt");
    if (!fs::exists(ckpt))
      throw MissingInputError("checkpoint not found: " + ckpt);
    init_copied = load_checkpoint_overlap(ckpt, model.params());
    if (init_copied == 0)
      throw MissingInputError("checkpoint " + ckpt +
                              " shares no parameters with this model");
    std::printf("init: %zu of %zu parameter tensors from %s\n", init_copied,
                model.params().params().size(), ckpt.c_str());
  }
  if (!o.init_classifier.empty()) {
    LoadedClassifier cls = load_classifier(o.init_classifier);
    trunk_copied = transfer_sketch_trunk(*cls.model, model);
    if (trunk_copied == 0)
      throw MissingInputError("classifier " + o.init_classifier +
                              " shares no sketch-trunk parameters with this "
                              "model");
    std::printf("init: %zu sketch-trunk tensors from %s\n", trunk_copied,
                o.init_classifier.c_str());
  }

  std::vector<TrainScene> scenes =
      prepare_scenes(manifest, o.mask ? cfg.mask_size() : 0);
  SketchPool pool;
  if (conditioned) pool = prepare_sketch_pool(manifest, o.style_train, false);

  AdamW opt(model.params(), o.optimizer);
  if (o.mask) {
    // Fine-tune the mask head on frozen detection weights.
    for (const char* p : {"backbone.", "sketch.", "cond.", "queries", "enc",
                          "dec", "head."})
      opt.freeze_prefix(p);
  }

  Rng rng = Rng(o.seed).derive(1);
  std::printf("train: variant %s, %zu epochs, %zu scenes%s%s\n",
              o.variant.c_str(), epochs, scenes.size(),
              conditioned ? ", style " : "",
              conditioned ? std::string(1, o.style_train).c_str() : "");
  ordered_json rows = ordered_json::array();
  double final_loss = 0.0;
  for (std::size_t e = 1; e <= epochs; ++e) {
    EpochMetrics m = train_epoch(model, scenes, conditioned ? &pool : nullptr,
                                 opt, rng, o.weights);
    if (!std::isfinite(m.mean_loss))
      throw TensorError("training diverged: non-finite loss");
    ordered_json row;
    row["epoch"] = e;
    row["steps"] = m.steps;
    row["mean_loss"] = m.mean_loss;
    row["classification"] = m.mean_classification;
    row["box_giou"] = m.mean_box_giou;
    row["box_l1"] = m.mean_box_l1;
    row["mask_focal"] = m.mean_mask_focal;
    row["mask_dice"] = m.mean_mask_dice;
    rows.push_back(std::move(row));
    final_loss = m.mean_loss;
    std::printf("epoch %3zu/%zu  loss %.4f  (cls %.4f giou %.4f l1 %.4f "
                "focal %.4f dice %.4f)\n",
                e, epochs, m.mean_loss, m.mean_classification, m.mean_box_giou,
                m.mean_box_l1, m.mean_mask_focal, m.mean_mask_dice);
  }

  write_detector_dir(o.out, model, o.variant, o.style_train, o.seed);
  ordered_json metrics;
  metrics["schema_version"] = 1;
  metrics["command"] = "train";
  metrics["config_digest"] = digest;
  metrics["environment"] = environment_json();
  metrics["variant"] = o.variant;
  metrics["style_train"] = std::string(1, o.style_train);
  metrics["init_params_copied"] = init_copied;
  metrics["sketch_trunk_params_copied"] = trunk_copied;
  metrics["epochs"] = rows;
  metrics["initial_loss"] = rows.front()["mean_loss"];
  metrics["final_loss"] = final_loss;
  write_metrics(o.out, metrics);

  std::printf("checkpoint: %s (%zu values)\n",
              join(o.out, "model.ckpt").c_str(),
              model.params().total_values());
  std::printf("config digest: %s\n", digest.c_str());
  std::printf("wall time: %.2fs\n", seconds_since(t0));
  return kExitOk;
}

int cmd_train(const TrainOpts& o, std::size_t depth) {
  if (depth > 1) throw UsageError("nested pretraining");
  static const std::set<std::string> kVariants = {
      "multiclass", "sketch_detr_query", "sketch_detr_concat",
      "sketch_classifier"};
  if (kVariants.count(o.variant) == 0)
    throw UsageError("--variant must be multiclass, sketch_detr_query, "
                     "sketch_detr_concat, or sketch_classifier");
  DatasetManifest manifest = load_dataset(o.dataset);
  fs::create_directories(o.out);
  if (o.variant == "sketch_classifier") {
    if (o.mask || o.pretrain_first || !o.init_checkpoint.empty() ||
        !o.init_classifier.empty())
      throw UsageError("sketch_classifier training takes no --mask, "
                       "--checkpoint, --classifier, or --pretrain-first");
    return train_classifier(o, manifest);
  }
  return train_detector(o, manifest, depth);
}

// ---------------------------------------------------------------------------
// eval family
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string config_path, dataset, checkpoint, classifier, out;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  char style_eval = 0;   // 0 = default from the model
  char style_train = 0;  // cross only
  bool upper_bound = false;
  double score_threshold = 0.0;
};

/// The models behind a Pipeline, kept alive alongside it.
struct BuiltPipeline {
  LoadedDetector det;
  LoadedClassifier cls;  // t2b only
  Pipeline pipeline;
  bool t2b = false;
  bool has_mask = false;
  char default_style = 'A';
};

enum class PipeKind { conditioned, t2b, either };

BuiltPipeline build_pipeline(PipeKind kind, const EvalOpts& o,
                             const DatasetManifest& manifest) {
  BuiltPipeline bp;
  bp.det = load_detector(o.checkpoint);
  const bool conditioned =
      bp.det.config.conditioning != ConditioningMode::none;
  if (kind == PipeKind::conditioned && !conditioned)
    throw MissingInputError("this command needs a sketch-conditioned "
                            "detector; " + o.checkpoint + " holds variant " +
                            bp.det.variant);
  if (kind == PipeKind::t2b && conditioned)
    throw MissingInputError("the filtering baseline needs an unconditioned "
                            "multi-class detector; " + o.checkpoint +
                            " holds variant " + bp.det.variant);
  if (conditioned && !o.classifier.empty())
    throw UsageError("--classifier only applies to the filtering baseline");
  if (conditioned && o.upper_bound)
    throw UsageError("--upper-bound only applies to the filtering baseline");
  if (bp.det.config.image_size != manifest.image_size)
    throw MissingInputError("checkpoint expects images of size " +
                            std::to_string(bp.det.config.image_size) +
                            ", dataset holds " +
                            std::to_string(manifest.image_size));
  bp.has_mask = bp.det.config.mask_head;
  const std::size_t mask_out = bp.has_mask ? manifest.image_size : 0;

  if (conditioned) {
    if (bp.det.config.sketch_size != manifest.sketch_size)
      throw MissingInputError("checkpoint expects sketches of size " +
                              std::to_string(bp.det.config.sketch_size) +
                              ", dataset holds " +
                              std::to_string(manifest.sketch_size));
    bp.pipeline = make_conditioned_pipeline(*bp.det.model, o.score_threshold,
                                            mask_out);
    bp.default_style = bp.det.style_train;
    return bp;
  }

  if (o.classifier.empty())
    throw MissingInputError("the filtering baseline needs --classifier");
  bp.cls = load_classifier(o.classifier);
  if (bp.cls.sketch_size != manifest.sketch_size)
    throw MissingInputError("classifier expects sketches of size " +
                            std::to_string(bp.cls.sketch_size) +
                            ", dataset holds " +
                            std::to_string(manifest.sketch_size));
  bp.t2b = true;
  bp.pipeline = make_t2b_pipeline({bp.det.model.get(), bp.cls.model.get()},
                                  o.score_threshold, o.upper_bound, mask_out);
  bp.default_style = bp.cls.style_train;
  return bp;
}

void ensure_evaluable(const std::vector<TrainScene>& scenes,
                      const SketchPool& pool, const std::string& what) {
  if (pool.per_class.empty())
    throw EmptySplitError(what + ": the sketch pool is empty");
  for (const auto& [c, rasters] : pool.per_class) {
    if (rasters.empty()) continue;
    for (const TrainScene& s : scenes)
      if (std::binary_search(s.classes_present.begin(),
                             s.classes_present.end(), c))
        return;
  }
  throw EmptySplitError(what + ": no scene contains any class of the sketch "
                        "pool");
}

struct EvalArtifacts {
  APResult box;
  APResult mask;
  bool has_mask = false;
};

EvalArtifacts evaluate_pipeline(const Pipeline& pipeline,
                                const std::vector<TrainScene>& scenes,
                                const SketchPool& pool, const EvalConfig& ec,
                                bool masks) {
  EvalArtifacts a;
  a.has_mask = masks;
  a.box = sgol_evaluate(pipeline, scenes, pool, ec);
  if (masks) {
    EvalConfig em = ec;
    em.mask_mode = true;
    a.mask = sgol_evaluate(pipeline, scenes, pool, em);
  }
  return a;
}

ordered_json eval_settings_json(const EvalConfig& ec) {
  ordered_json j;
  j["iou_thresholds"] = ec.thresholds();
  j["recall_points"] = ec.recall_points;
  j["order"] = "score_desc_stable";
  j["negative_seed"] = ec.negative_seed;
  return j;
}

double classifier_accuracy(const SketchClassifier& cls,
                           const SketchPool& pool) {
  std::size_t total = 0, correct = 0;
  for (const auto& [c, rasters] : pool.per_class)
    for (const Tensor& t : rasters) {
      ++total;
      correct += sketch_classify(cls, t) == c ? 1 : 0;
    }
  return total ? static_cast<double>(correct) / static_cast<double>(total)
               : 0.0;
}

int cmd_eval(const EvalOpts& o) {
  const auto t0 = Clock::now();
  DatasetManifest manifest = load_dataset(o.dataset);
  BuiltPipeline bp = build_pipeline(PipeKind::conditioned, o, manifest);
  const char style = o.style_eval ? o.style_eval : bp.default_style;

  fs::create_directories(o.out);
  EvalConfig ec;
  ec.negative_seed = o.seed;
  ordered_json cfg;
  cfg["schema_version"] = 1;
  cfg["command"] = "eval";
  cfg["seed"] = o.seed;
  cfg["style_eval"] = std::string(1, style);
  cfg["score_threshold"] = o.score_threshold;
  cfg["mask_metrics"] = bp.has_mask;
  cfg["dataset_digest"] =
      file_digest(join(o.dataset, "manifest"), "dataset manifest");
  cfg["checkpoint_digest"] =
      file_digest(join(o.checkpoint, "model.ckpt"), "checkpoint");
  cfg["eval"] = eval_settings_json(ec);
  const std::string digest = write_config(o.out, cfg);

  SketchPool pool = prepare_sketch_pool(manifest, style, true);
  std::vector<TrainScene> scenes =
      prepare_scenes(manifest, bp.has_mask ? manifest.image_size : 0);
  ensure_evaluable(scenes, pool, "eval");

  EvalArtifacts a = evaluate_pipeline(bp.pipeline, scenes, pool, ec,
                                      bp.has_mask);
  ordered_json metrics;
  metrics["schema_version"] = 1;
  metrics["command"] = "eval";
  metrics["config_digest"] = digest;
  metrics["environment"] = environment_json();
  metrics["style_eval"] = std::string(1, style);
  metrics["box"] = ap_json(a.box, ec);
  if (a.has_mask) metrics["mask"] = ap_json(a.mask, ec);
  write_metrics(o.out, metrics);
  write_pr_csvs(o.out, "pr_box", a.box);
  if (a.has_mask) write_pr_csvs(o.out, "pr_mask", a.mask);

  std::printf("eval: %zu scenes, style %c test pool\n", scenes.size(), style);
  print_ap("box", a.box, ec);
  if (a.has_mask) print_ap("mask", a.mask, ec);
  std::printf("report: %s\n", join(o.out, "metrics.json").c_str());
  std::printf("config digest: %s\n", digest.c_str());
  std::printf("wall time: %.2fs\n", seconds_since(t0));
  return kExitOk;
}

int cmd_t2b(const EvalOpts& o) {
  const auto t0 = Clock::now();
  DatasetManifest manifest = load_dataset(o.dataset);
  BuiltPipeline bp = build_pipeline(PipeKind::t2b, o, manifest);
  const char style = o.style_eval ? o.style_eval : bp.default_style;

  fs::create_directories(o.out);
  EvalConfig ec;
  ec.negative_seed = o.seed;
  ordered_json cfg;
  cfg["schema_version"] = 1;
  cfg["command"] = "t2b";
  cfg["seed"] = o.seed;
  cfg["style_eval"] = std::string(1, style);
  cfg["upper_bound"] = o.upper_bound;
  cfg["score_threshold"] = o.score_threshold;
  cfg["mask_metrics"] = bp.has_mask;
  cfg["dataset_digest"] =
      file_digest(join(o.dataset, "manifest"), "dataset manifest");
  cfg["checkpoint_digest"] =
      file_digest(join(o.checkpoint, "model.ckpt"), "checkpoint");
  cfg["classifier_digest"] =
      file_digest(join(o.classifier, "model.ckpt"), "classifier checkpoint");
  cfg["eval"] = eval_settings_json(ec);
  const std::string digest = write_config(o.out, cfg);

  SketchPool pool = prepare_sketch_pool(manifest, style, true);
  std::vector<TrainScene> scenes =
      prepare_scenes(manifest, bp.has_mask ? manifest.image_size : 0);
  ensure_evaluable(scenes, pool, "t2b");

  EvalArtifacts a = evaluate_pipeline(bp.pipeline, scenes, pool, ec,
                                      bp.has_mask);
  const double acc = classifier_accuracy(*bp.cls.model, pool);
  ordered_json metrics;
  metrics["schema_version"] = 1;
  metrics["command"] = "t2b";
  metrics["config_digest"] = digest;
  metrics["environment"] = environment_json();
  metrics["style_eval"] = std::string(1, style);
  metrics["upper_bound"] = o.upper_bound;
  metrics["classifier_accuracy"] = acc;
  metrics["box"] = ap_json(a.box, ec);
  if (a.has_mask) metrics["mask"] = ap_json(a.mask, ec);
  write_metrics(o.out, metrics);
  write_pr_csvs(o.out, "pr_box", a.box);
  if (a.has_mask) write_pr_csvs(o.out, "pr_mask", a.mask);

  std::printf("t2b%s: %zu scenes, style %c test pool, classifier accuracy "
              "%.3f\n",
              o.upper_bound ? " (upper bound)" : "", scenes.size(), style,
              acc);
  print_ap("box", a.box, ec);
  if (a.has_mask) print_ap("mask", a.mask, ec);
  std::printf("report: %s\n", join(o.out, "metrics.json").c_str());
  std::printf("config digest: %s\n", digest.c_str());
  std::printf("wall time: %.2fs\n", seconds_since(t0));
  return kExitOk;
}

int cmd_cross(const EvalOpts& o) {
  const auto t0 = Clock::now();
  DatasetManifest manifest = load_dataset(o.dataset);
  BuiltPipeline bp = build_pipeline(PipeKind::either, o, manifest);
  if (o.style_eval == 0) throw UsageError("--style-eval is required");
  const char style_eval = o.style_eval;
  const char style_train = o.style_train ? o.style_train : bp.default_style;
  const auto vocab = [&](char s) -> const std::vector<std::size_t>& {
    return s == 'A' ? manifest.style_a_vocab : manifest.style_b_vocab;
  };
  const ClassSplit split =
      make_class_split(vocab(style_eval), vocab(style_train));

  fs::create_directories(o.out);
  EvalConfig ec;
  ec.negative_seed = o.seed;
  ordered_json cfg;
  cfg["schema_version"] = 1;
  cfg["command"] = "cross";
  cfg["seed"] = o.seed;
  cfg["style_train"] = std::string(1, style_train);
  cfg["style_eval"] = std::string(1, style_eval);
  cfg["baseline"] = bp.t2b ? "t2b" : "sketch_detr";
  if (bp.t2b) cfg["upper_bound"] = o.upper_bound;
  cfg["score_threshold"] = o.score_threshold;
  cfg["mask_metrics"] = bp.has_mask;
  cfg["dataset_digest"] =
      file_digest(join(o.dataset, "manifest"), "dataset manifest");
  cfg["checkpoint_digest"] =
      file_digest(join(o.checkpoint, "model.ckpt"), "checkpoint");
  if (bp.t2b)
    cfg["classifier_digest"] = file_digest(join(o.classifier, "model.ckpt"),
                                           "classifier checkpoint");
  cfg["eval"] = eval_settings_json(ec);
  const std::string digest = write_config(o.out, cfg);

  SketchPool pool = prepare_sketch_pool(manifest, style_eval, true);
  std::vector<TrainScene> scenes =
      prepare_scenes(manifest, bp.has_mask ? manifest.image_size : 0);

  if (split.shared.empty() && split.query_only.empty())
    throw EmptySplitError("cross: the class split has no shared and no "
                          "query-only classes");
  const auto check_section = [&](const std::vector<std::size_t>& classes,
                                 const std::string& name) {
    if (classes.empty()) return;
    SketchPool sub = filter_pool(pool, classes);
    if (sub.per_class.empty())
      throw EmptySplitError("cross: the eval pool has no sketches of the " +
                            name + " classes");
    ensure_evaluable(scenes, sub, "cross (" + name + ")");
  };
  check_section(split.shared, "shared");
  check_section(split.query_only, "query-only");

  const CrossDatasetResult box_r =
      cross_dataset_evaluate(bp.pipeline, scenes, pool, split, ec, false);
  CrossDatasetResult mask_r;
  if (bp.has_mask) {
    EvalConfig em = ec;
    em.mask_mode = true;
    mask_r = cross_dataset_evaluate(bp.pipeline, scenes, pool, split, em,
                                    false);
  }

  ordered_json metrics;
  metrics["schema_version"] = 1;
  metrics["command"] = "cross";
  metrics["config_digest"] = digest;
  metrics["environment"] = environment_json();
  metrics["style_train"] = std::string(1, style_train);
  metrics["style_eval"] = std::string(1, style_eval);
  metrics["baseline"] = bp.t2b ? "t2b" : "sketch_detr";
  ordered_json js;
  js["shared"] = split.shared;
  js["query_only"] = split.query_only;
  js["sketch_only"] = split.sketch_only;
  metrics["split"] = js;
  if (bp.t2b) metrics["classifier_accuracy"] = classifier_accuracy(
      *bp.cls.model, pool);
  if (box_r.has_shared) {
    ordered_json sec;
    sec["box"] = ap_json(box_r.shared, ec);
    if (bp.has_mask) sec["mask"] = ap_json(mask_r.shared, ec);
    metrics["shared"] = sec;
  }
  if (box_r.has_query_only) {
    ordered_json sec;
    sec["box"] = ap_json(box_r.query_only, ec);
    if (bp.has_mask) sec["mask"] = ap_json(mask_r.query_only, ec);
    metrics["query_only"] = sec;
  }
  write_metrics(o.out, metrics);
  if (box_r.has_shared) {
    write_pr_csvs(o.out, "pr_box_shared", box_r.shared);
    if (bp.has_mask) write_pr_csvs(o.out, "pr_mask_shared", mask_r.shared);
  }
  if (box_r.has_query_only) {
    write_pr_csvs(o.out, "pr_box_query_only", box_r.query_only);
    if (bp.has_mask)
      write_pr_csvs(o.out, "pr_mask_query_only", mask_r.query_only);
  }

  std::printf("cross: %s, train style %c -> eval style %c, %zu scenes\n",
              bp.t2b ? "filtering baseline" : "conditioned detector",
              style_train, style_eval, scenes.size());
  std::printf("split: shared %s  query-only %s  sketch-only %s\n",
              vocab_str(split.shared).c_str(),
              vocab_str(split.query_only).c_str(),
              vocab_str(split.sketch_only).c_str());
  if (box_r.has_shared) {
    std::printf("shared classes:\n");
    print_ap("shared box", box_r.shared, ec);
    if (bp.has_mask) print_ap("shared mask", mask_r.shared, ec);
  }
  if (box_r.has_query_only) {
    std::printf("query-only classes:\n");
    print_ap("query-only box", box_r.query_only, ec);
    if (bp.has_mask) print_ap("query-only mask", mask_r.query_only, ec);
  }
  std::printf("report: %s\n", join(o.out, "metrics.json").c_str());
  std::printf("config digest: %s\n", digest.c_str());
  std::printf("wall time: %.2fs\n", seconds_since(t0));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

/// Collects checks for one suite, remembering the first failure.
struct SuiteRun {
  SuiteResult r;
  std::size_t checks = 0;

  explicit SuiteRun(std::string name) {
    r.name = std::move(name);
    r.passed = true;
  }
  void expect(bool ok, const std::string& failing_case) {
    ++checks;
    if (ok || !r.passed) return;
    r.passed = false;
    r.detail = failing_case;
  }
  SuiteResult finish(const std::string& pass_summary) {
    if (r.passed) r.detail = pass_summary;
    return r;
  }
};

template <typename Body>
SuiteResult guarded_suite(const char* name, Body body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return SuiteResult{name, false, std::string("exception: ") + e.what()};
  }
}

SuiteResult suite_assignment(const VerifyHooks& hooks) {
  SuiteRun s("assignment_vs_exhaustive");
  Rng rng(20240401);
  for (std::size_t it = 0; it < 220 && s.r.passed; ++it) {
    const std::size_t rows = 1 + rng.index(6);
    const std::size_t cols = rows + rng.index(8 - rows + 1);
    CostMatrix m = CostMatrix::zeros(rows, cols);
    for (double& v : m.values) v = rng.uniform(-4.0, 4.0);
    // Every third instance is quantized so exact cost ties appear.
    if (it % 3 == 0)
      for (double& v : m.values) v = std::round(v * 2.0) / 2.0;
    Assignment fast = hooks.assignment_fn(m);
    Assignment slow = brute_force_assignment(m);
    s.expect(fast.col_of_row == slow.col_of_row && fast.cost == slow.cost,
             "matrix #" + std::to_string(it) + " (" + std::to_string(rows) +
                 "x" + std::to_string(cols) + "): cost " +
                 std::to_string(fast.cost) + " vs exhaustive " +
                 std::to_string(slow.cost));
  }
  return s.finish("220 matrices, exact agreement");
}

SuiteResult suite_gradcheck_losses() {
  SuiteRun s("gradcheck_losses");

  Tensor pred = Tensor::from_data({4}, {0.40, 0.44, 0.30, 0.26},
                                  /*requires_grad=*/true);
  LossWeights w;
  const double box_err = finite_difference_check(
      [&] { return box_loss(pred, BoxC{0.56, 0.52, 0.22, 0.34}, w); }, {pred});
  s.expect(box_err <= 1e-6,
           "box loss: max relative error " + std::to_string(box_err));

  Rng rng(403);
  std::vector<double> vals(12);
  for (double& v : vals) v = rng.uniform(-2.0, 2.0);
  Tensor logits = Tensor::from_data({3, 4}, vals, /*requires_grad=*/true);
  Mask target = make_mask(3, 4);
  for (std::size_t i = 0; i < 12; ++i) target.data[i] = (i * 5 + 2) % 3 == 0;
  const double focal_err = finite_difference_check(
      [&] { return focal_loss(logits, target, 0.25, 2.0); }, {logits});
  s.expect(focal_err <= 1e-6,
           "focal loss: max relative error " + std::to_string(focal_err));
  const double dice_err = finite_difference_check(
      [&] { return dice_loss(logits, target); }, {logits});
  s.expect(dice_err <= 1e-6,
           "dice loss: max relative error " + std::to_string(dice_err));

  std::vector<double> cls_vals(6);
  for (double& v : cls_vals) v = rng.uniform(-2.0, 2.0);
  Tensor cls_logits = Tensor::from_data({3, 2}, cls_vals,
                                        /*requires_grad=*/true);
  Assignment asn;
  asn.col_of_row = {1};
  const double cls_err = finite_difference_check(
      [&] { return classification_loss(cls_logits, asn, 0.1); }, {cls_logits});
  s.expect(cls_err <= 1e-6, "classification loss: max relative error " +
                                std::to_string(cls_err));
  return s.finish("4 losses within 1e-6 of central differences");
}

SketchDETRConfig micro_model_config(bool mask) {
  SketchDETRConfig c;
  c.d = 8;
  c.heads = 2;
  c.num_queries = 3;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.dim_ff = 16;
  c.conditioning = ConditioningMode::object_query;
  c.num_classes = 0;
  c.mask_head = mask;
  c.image_size = 12;
  c.sketch_size = 12;
  c.backbone_channels = {4, 6, 8};
  c.sketch_channels = {4, 6, 8};
  return c;
}

/// Freshly initialized queries decode to near-identical outputs, so the
/// assignment can flip under finite-difference probes; pushing them apart
/// gives the matching a stable margin.
void spread_queries(SketchDETR& model) {
  const std::size_t n = model.queries.shape()[0];
  const std::size_t d = model.queries.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    model.queries.data()[i * d + (i % d)] += 2.0;
    model.queries.data()[i * d + ((i + 3) % d)] -= 1.5;
  }
}

Tensor random_grid(Rng& rng, std::size_t ch, std::size_t s) {
  std::vector<double> d(ch * s * s);
  for (double& v : d) v = rng.uniform(0.0, 1.0);
  return Tensor::from_data({ch, s, s}, std::move(d));
}

SuiteResult suite_gradcheck_model() {
  SuiteRun s("gradcheck_composed_model");
  LossWeights w;
  {
    SketchDETR model(micro_model_config(false), 5);
    spread_queries(model);
    Rng rng(17);
    Tensor img = random_grid(rng, 3, 12);
    Tensor sk = random_grid(rng, 1, 12);
    std::vector<TargetInstance> targets(2);
    targets[0].box = {0.25, 0.30, 0.20, 0.24};
    targets[1].box = {0.70, 0.65, 0.24, 0.20};
    auto f = [&] {
      return hungarian_loss(model.forward(img, &sk), targets, w).total;
    };
    std::vector<Tensor> params;
    for (Param& p : model.params().params()) params.push_back(p.tensor);
    // The zero-input decoder stream makes the first layer norm extremely
    // curved; a 1e-6 step keeps the truncation error below the comparison.
    const double err = finite_difference_check(f, params, 1e-6);
    s.expect(err <= 1e-4,
             "matched loss through the full conditioned model: max relative "
             "error " + std::to_string(err));
  }
  {
    SketchDETR model(micro_model_config(true), 8);
    spread_queries(model);
    Rng rng(20);
    Tensor img = random_grid(rng, 3, 12);
    Tensor sk = random_grid(rng, 1, 12);
    std::vector<TargetInstance> targets(1);
    targets[0].box = {0.45, 0.50, 0.40, 0.36};
    targets[0].mask = make_mask(8, 8);
    for (std::size_t y = 2; y < 6; ++y)
      for (std::size_t x = 2; x < 7; ++x) targets[0].mask.at(y, x) = 1;
    auto f = [&] {
      return hungarian_loss(model.forward(img, &sk), targets, w).total;
    };
    std::vector<Tensor> params;
    for (Param& p : model.params().params())
      if (p.name.rfind("mask.", 0) == 0 || p.name.rfind("head.box", 0) == 0 ||
          p.name.rfind("dec0.cross", 0) == 0)
        params.push_back(p.tensor);
    const double err = finite_difference_check(f, params);
    s.expect(err <= 1e-4, "mask focal+dice terms through the mask head: max "
                          "relative error " + std::to_string(err));
  }
  return s.finish(
      "full model and mask head within 1e-4 of central differences");
}

SuiteResult suite_ap_cases(const VerifyHooks& hooks) {
  SuiteRun s("average_precision_cases");
  using Flags = std::vector<std::uint8_t>;

  const double lone_tp = hooks.ap_fn(Flags{1}, 1, 101);
  s.expect(std::abs(lone_tp - 1.0) <= 1e-12,
           "ap([TP], n_gt=1) = " + std::to_string(lone_tp) + ", want 1");
  const double lone_fp = hooks.ap_fn(Flags{0}, 1, 101);
  s.expect(lone_fp == 0.0,
           "ap([FP], n_gt=1) = " + std::to_string(lone_fp) + ", want 0");
  const double none = hooks.ap_fn(Flags{1}, 0, 101);
  s.expect(none == 0.0,
           "ap with n_gt=0 = " + std::to_string(none) + ", want 0");
  const double second = hooks.ap_fn(Flags{0, 1}, 1, 101);
  s.expect(std::abs(second - 0.5) <= 1e-12,
           "ap([FP,TP], n_gt=1) = " + std::to_string(second) + ", want 0.5");
  // 51 recall samples reachable at precision 1, 50 at precision 2/3.
  const double hand = hooks.ap_fn(Flags{1, 0, 1}, 2, 101);
  const double expect = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  s.expect(std::abs(hand - expect) <= 1e-12 &&
               std::abs(hand - 0.834983) <= 1e-6,
           "ap([TP,FP,TP], n_gt=2) = " + std::to_string(hand) +
               ", want 0.834983");

  // The ranked evaluator path must agree exactly with the brute-force
  // oracle, which re-matches every prefix from scratch.
  Rng rng(20240602);
  for (std::size_t it = 0; it < 25 && s.r.passed; ++it) {
    DetectionSet dets(1 + rng.index(6));
    std::vector<TargetInstance> gts(1 + rng.index(4));
    for (Detection& d : dets) {
      d.box = {(static_cast<double>(rng.index(8)) + 1.0) / 10.0,
               (static_cast<double>(rng.index(8)) + 1.0) / 10.0,
               (static_cast<double>(rng.index(4)) + 1.0) / 10.0,
               (static_cast<double>(rng.index(4)) + 1.0) / 10.0};
      d.score = static_cast<double>(rng.index(5)) / 4.0;
    }
    for (TargetInstance& g : gts)
      g.box = {(static_cast<double>(rng.index(8)) + 1.0) / 10.0,
               (static_cast<double>(rng.index(8)) + 1.0) / 10.0,
               (static_cast<double>(rng.index(4)) + 1.0) / 10.0,
               (static_cast<double>(rng.index(4)) + 1.0) / 10.0};
    for (double iou_t : {0.5, 0.75}) {
      DetectionSet ranked = dets;
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const Detection& a, const Detection& b) {
                         return a.score > b.score;
                       });
      const double main = hooks.ap_fn(match_dets(ranked, gts, iou_t, false),
                                      gts.size(), 101);
      const double brute = brute_force_ap(dets, gts, iou_t);
      s.expect(main == brute, "instance set #" + std::to_string(it) +
                                  " at iou " + std::to_string(iou_t) +
                                  ": ranked " + std::to_string(main) +
                                  " vs brute force " + std::to_string(brute));
    }
  }
  return s.finish("hand values and 25 brute-force cross-checks");
}

SuiteResult suite_giou_iou(const VerifyHooks& hooks) {
  SuiteRun s("iou_giou_hand_cases");
  struct Case {
    const char* name;
    bool use_giou;
    BoxXYXY a, b;
    double want;
  };
  const Case cases[] = {
      {"iou(identity)", false, {0, 0, 1, 1}, {0, 0, 1, 1}, 1.0},
      {"giou(identity)", true, {0, 0, 1, 1}, {0, 0, 1, 1}, 1.0},
      {"iou(offset overlap)", false, {0, 0, 2, 2}, {1, 1, 3, 3}, 1.0 / 7.0},
      {"iou(disjoint)", false, {0, 0, 1, 1}, {2, 2, 3, 3}, 0.0},
      {"giou(touching edges)", true, {0, 0, 1, 1}, {1, 0, 2, 1}, 0.0},
      {"giou(disjoint corners)", true, {0, 0, 1, 1}, {2, 2, 3, 3},
       -7.0 / 9.0},
      {"iou(containment)", false, {0, 0, 1, 1}, {0.25, 0.25, 0.75, 0.75},
       0.25},
      {"giou(containment)", true, {0, 0, 1, 1}, {0.25, 0.25, 0.75, 0.75},
       0.25},
  };
  for (const Case& c : cases) {
    const double got =
        c.use_giou ? hooks.giou_fn(c.a, c.b) : hooks.iou_fn(c.a, c.b);
    s.expect(std::abs(got - c.want) <= 1e-9,
             std::string(c.name) + " = " + std::to_string(got) + ", want " +
                 std::to_string(c.want));
  }
  return s.finish("8 hand values within 1e-9");
}

int cmd_verify() {
  const auto t0 = Clock::now();
  const std::vector<SuiteResult> results =
      run_verify_suites(default_verify_hooks());
  bool all = true;
  for (const SuiteResult& r : results) {
    std::printf("%s %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : ": ", r.detail.c_str());
    all = all && r.passed;
  }
  std::printf("verification: %zu/%zu suites passed, %.2fs\n",
              static_cast<std::size_t>(
                  std::count_if(results.begin(), results.end(),
                                [](const SuiteResult& r) { return r.passed; })),
              results.size(), seconds_since(t0));
  return all ? kExitOk : kExitVerifyFailed;
}

}  // namespace

VerifyHooks default_verify_hooks() {
  VerifyHooks h;
  h.iou_fn = [](const BoxXYXY& a, const BoxXYXY& b) { return iou(a, b); };
  h.giou_fn = [](const BoxXYXY& a, const BoxXYXY& b) { return giou(a, b); };
  h.assignment_fn = [](const CostMatrix& m) { return hungarian(m); };
  h.ap_fn = [](const std::vector<std::uint8_t>& flags, std::size_t n_gt,
               std::size_t recall_points) {
    return average_precision(flags, n_gt, recall_points);
  };
  return h;
}

std::vector<SuiteResult> run_verify_suites(const VerifyHooks& hooks) {
  std::vector<SuiteResult> out;
  out.push_back(guarded_suite("assignment_vs_exhaustive",
                              [&] { return suite_assignment(hooks); }));
  out.push_back(guarded_suite("gradcheck_losses",
                              [&] { return suite_gradcheck_losses(); }));
  out.push_back(guarded_suite("gradcheck_composed_model",
                              [&] { return suite_gradcheck_model(); }));
  out.push_back(guarded_suite("average_precision_cases",
                              [&] { return suite_ap_cases(hooks); }));
  out.push_back(
      guarded_suite("iou_giou_hand_cases", [&] { return suite_giou_iou(hooks); }));
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Argument parsing and dispatch
// ---------------------------------------------------------------------------

void note_threads(std::size_t threads) {
  if (threads > 1)
    std::printf("threads: %zu requested; running serially so results are "
                "independent of the thread count\n",
                threads);
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"sketch-guided object localization toolkit"};
  app.require_subcommand(1);

  GenOpts gen;
  CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  CLI::Option* gen_out = c_gen->add_option("--out", gen.out,
                                           "dataset output directory");
  CLI::Option* gen_seed = c_gen->add_option("--seed", gen.seed,
                                            "master generation seed");
  c_gen->add_option("--config", gen.config_path, "config file overriding "
                    "defaults; flags override the file");
  CLI::Option* gen_threads =
      c_gen->add_option("--threads", gen.threads, "worker threads");

  TrainOpts train;
  CLI::App* c_train = app.add_subcommand("train", "train a model variant");
  CLI::Option* train_dataset =
      c_train->add_option("--dataset", train.dataset, "dataset directory");
  CLI::Option* train_out =
      c_train->add_option("--out", train.out, "model output directory");
  CLI::Option* train_variant = c_train->add_option(
      "--variant", train.variant,
      "multiclass | sketch_detr_query | sketch_detr_concat | "
      "sketch_classifier");
  CLI::Option* train_seed =
      c_train->add_option("--seed", train.seed, "training seed");
  std::string train_style = "A";
  CLI::Option* train_style_opt = c_train->add_option(
      "--style-train", train_style, "sketch style to train on (A or B)");
  CLI::Option* train_mask = c_train->add_flag(
      "--mask", train.mask, "fine-tune a mask head on frozen detection "
                            "weights (needs --checkpoint)");
  CLI::Option* train_ckpt = c_train->add_option(
      "--checkpoint", train.init_checkpoint,
      "model directory whose weights seed this run");
  CLI::Option* train_cls = c_train->add_option(
      "--classifier", train.init_classifier,
      "classifier directory whose trunk seeds the sketch encoder");
  CLI::Option* train_pre = c_train->add_flag(
      "--pretrain-first", train.pretrain_first,
      "train detection weights in out/pretrain before the conditioned run");
  CLI::Option* train_epochs =
      c_train->add_option("--epochs", train.epochs, "epoch count (0 = "
                          "default: 20 detection, 10 mask fine-tune)");
  c_train->add_option("--config", train.config_path, "config file; flags "
                      "override the file");
  CLI::Option* train_threads =
      c_train->add_option("--threads", train.threads, "worker threads");

  EvalOpts ev, t2b, cross;
  std::string ev_style, t2b_style, cross_style_eval, cross_style_train;

  CLI::App* c_eval = app.add_subcommand(
      "eval", "evaluate a conditioned detector on the test sketch pool");
  CLI::Option* eval_dataset =
      c_eval->add_option("--dataset", ev.dataset, "dataset directory");
  CLI::Option* eval_ckpt =
      c_eval->add_option("--checkpoint", ev.checkpoint, "model directory");
  CLI::Option* eval_out =
      c_eval->add_option("--out", ev.out, "report output directory");
  CLI::Option* eval_seed =
      c_eval->add_option("--seed", ev.seed, "negative-sampling seed");
  CLI::Option* eval_style = c_eval->add_option(
      "--style-eval", ev_style, "sketch style to query with (defaults to "
                                "the model's training style)");
  c_eval->add_option("--config", ev.config_path, "config file; flags "
                     "override the file");
  CLI::Option* eval_threads =
      c_eval->add_option("--threads", ev.threads, "worker threads");

  CLI::App* c_t2b = app.add_subcommand(
      "t2b", "evaluate the classifier-filtered detection baseline");
  CLI::Option* t2b_dataset =
      c_t2b->add_option("--dataset", t2b.dataset, "dataset directory");
  CLI::Option* t2b_ckpt = c_t2b->add_option(
      "--checkpoint", t2b.checkpoint, "multi-class detector directory");
  CLI::Option* t2b_cls = c_t2b->add_option(
      "--classifier", t2b.classifier, "sketch classifier directory");
  CLI::Option* t2b_out =
      c_t2b->add_option("--out", t2b.out, "report output directory");
  CLI::Option* t2b_seed =
      c_t2b->add_option("--seed", t2b.seed, "negative-sampling seed");
  CLI::Option* t2b_style_opt = c_t2b->add_option(
      "--style-eval", t2b_style, "sketch style to query with (defaults to "
                                 "the classifier's training style)");
  CLI::Option* t2b_ub = c_t2b->add_flag(
      "--upper-bound", t2b.upper_bound,
      "substitute the true class for the classifier prediction");
  c_t2b->add_option("--config", t2b.config_path, "config file; flags "
                    "override the file");
  CLI::Option* t2b_threads =
      c_t2b->add_option("--threads", t2b.threads, "worker threads");

  CLI::App* c_cross = app.add_subcommand(
      "cross", "evaluate across sketch styles, split by vocabulary overlap");
  CLI::Option* cross_dataset =
      c_cross->add_option("--dataset", cross.dataset, "dataset directory");
  CLI::Option* cross_ckpt = c_cross->add_option(
      "--checkpoint", cross.checkpoint,
      "detector directory (conditioned, or multi-class with --classifier)");
  CLI::Option* cross_cls = c_cross->add_option(
      "--classifier", cross.classifier,
      "classifier directory (filtering baseline only)");
  CLI::Option* cross_out =
      c_cross->add_option("--out", cross.out, "report output directory");
  CLI::Option* cross_seed =
      c_cross->add_option("--seed", cross.seed, "negative-sampling seed");
  CLI::Option* cross_st = c_cross->add_option(
      "--style-train", cross_style_train,
      "declared training style (defaults to the model's)");
  CLI::Option* cross_se = c_cross->add_option(
      "--style-eval", cross_style_eval, "sketch style to query with");
  CLI::Option* cross_ub = c_cross->add_flag(
      "--upper-bound", cross.upper_bound,
      "substitute the true class (filtering baseline only)");
  c_cross->add_option("--config", cross.config_path, "config file; flags "
                      "override the file");
  CLI::Option* cross_threads =
      c_cross->add_option("--threads", cross.threads, "worker threads");

  CLI::App* c_verify =
      app.add_subcommand("verify", "run the verification suites");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("sgol");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (c_gen->parsed()) {
    ConfigFile cf(gen.config_path);
    cf.take("seed", gen_seed, gen.seed);
    cf.take("out", gen_out, gen.out);
    cf.take("threads", gen_threads, gen.threads);
    cf.take("num_scenes", nullptr, gen.ds.num_scenes);
    cf.take("image_size", nullptr, gen.ds.image_size);
    cf.take("sketch_size", nullptr, gen.ds.sketch_size);
    cf.take("train_sketches_per_class", nullptr,
            gen.ds.train_sketches_per_class);
    cf.take("test_sketches_per_class", nullptr,
            gen.ds.test_sketches_per_class);
    cf.take("style_a_vocab", nullptr, gen.ds.style_a_vocab);
    cf.take("style_b_vocab", nullptr, gen.ds.style_b_vocab);
    cf.take("scene_classes", nullptr, gen.ds.scene.classes);
    cf.take("min_instances", nullptr, gen.ds.scene.min_instances);
    cf.take("max_instances", nullptr, gen.ds.scene.max_instances);
    cf.take("max_pairwise_iou", nullptr, gen.ds.scene.max_pairwise_iou);
    cf.take("min_scale", nullptr, gen.ds.scene.min_scale);
    cf.take("max_scale", nullptr, gen.ds.scene.max_scale);
    cf.finish();
    if (gen.out.empty()) throw UsageError("gen: --out is required");
    note_threads(gen.threads);
    return cmd_gen(gen);
  }

  if (c_train->parsed()) {
    ConfigFile cf(train.config_path);
    cf.take("seed", train_seed, train.seed);
    cf.take("dataset", train_dataset, train.dataset);
    cf.take("out", train_out, train.out);
    cf.take("variant", train_variant, train.variant);
    cf.take("threads", train_threads, train.threads);
    cf.take("style_train", train_style_opt, train_style);
    cf.take("mask", train_mask, train.mask);
    cf.take("pretrain_first", train_pre, train.pretrain_first);
    cf.take("checkpoint", train_ckpt, train.init_checkpoint);
    cf.take("classifier", train_cls, train.init_classifier);
    cf.take("epochs", train_epochs, train.epochs);
    cf.take("pretrain_epochs", nullptr, train.pretrain_epochs);
    cf.take("lr", nullptr, train.optimizer.lr);
    cf.take("weight_decay", nullptr, train.optimizer.weight_decay);
    cf.take("lambda_iou", nullptr, train.weights.lambda_iou);
    cf.take("lambda_l1", nullptr, train.weights.lambda_l1);
    cf.take("eos_weight", nullptr, train.weights.eos_weight);
    cf.take("focal_alpha", nullptr, train.weights.focal_alpha);
    cf.take("focal_gamma", nullptr, train.weights.focal_gamma);
    cf.take("lambda_focal", nullptr, train.weights.lambda_focal);
    cf.take("lambda_dice", nullptr, train.weights.lambda_dice);
    cf.take("d", nullptr, train.model.d);
    cf.take("heads", nullptr, train.model.heads);
    cf.take("num_queries", nullptr, train.model.num_queries);
    cf.take("enc_layers", nullptr, train.model.enc_layers);
    cf.take("dec_layers", nullptr, train.model.dec_layers);
    cf.take("dim_ff", nullptr, train.model.dim_ff);
    cf.take("backbone_channels", nullptr, train.model.backbone_channels);
    cf.take("sketch_channels", nullptr, train.model.sketch_channels);
    cf.take("classifier_d", nullptr, train.classifier_d);
    cf.take("classifier_channels", nullptr, train.classifier_channels);
    cf.finish();
    train.style_train = parse_style(train_style, "--style-train");
    if (train.dataset.empty()) throw UsageError("train: --dataset is required");
    if (train.out.empty()) throw UsageError("train: --out is required");
    if (train.variant.empty()) throw UsageError("train: --variant is required");
    note_threads(train.threads);
    return cmd_train(train);
  }

  const auto finish_eval_opts = [](EvalOpts& o, ConfigFile& cf,
                                   const char* cmd) {
    if (o.dataset.empty())
      throw UsageError(std::string(cmd) + ": --dataset is required");
    if (o.checkpoint.empty())
      throw UsageError(std::string(cmd) + ": --checkpoint is required");
    if (o.out.empty()) throw UsageError(std::string(cmd) + ": --out is required");
    cf.finish();
    note_threads(o.threads);
  };

  if (c_eval->parsed()) {
    ConfigFile cf(ev.config_path);
    cf.take("seed", eval_seed, ev.seed);
    cf.take("dataset", eval_dataset, ev.dataset);
    cf.take("checkpoint", eval_ckpt, ev.checkpoint);
    cf.take("out", eval_out, ev.out);
    cf.take("threads", eval_threads, ev.threads);
    cf.take("style_eval", eval_style, ev_style);
    cf.take("score_threshold", nullptr, ev.score_threshold);
    if (!ev_style.empty()) ev.style_eval = parse_style(ev_style, "--style-eval");
    finish_eval_opts(ev, cf, "eval");
    return cmd_eval(ev);
  }

  if (c_t2b->parsed()) {
    ConfigFile cf(t2b.config_path);
    cf.take("seed", t2b_seed, t2b.seed);
    cf.take("dataset", t2b_dataset, t2b.dataset);
    cf.take("checkpoint", t2b_ckpt, t2b.checkpoint);
    cf.take("classifier", t2b_cls, t2b.classifier);
    cf.take("out", t2b_out, t2b.out);
    cf.take("threads", t2b_threads, t2b.threads);
    cf.take("style_eval", t2b_style_opt, t2b_style);
    cf.take("upper_bound", t2b_ub, t2b.upper_bound);
    cf.take("score_threshold", nullptr, t2b.score_threshold);
    if (!t2b_style.empty())
      t2b.style_eval = parse_style(t2b_style, "--style-eval");
    finish_eval_opts(t2b, cf, "t2b");
    return cmd_t2b(t2b);
  }

  if (c_cross->parsed()) {
    ConfigFile cf(cross.config_path);
    cf.take("seed", cross_seed, cross.seed);
    cf.take("dataset", cross_dataset, cross.dataset);
    cf.take("checkpoint", cross_ckpt, cross.checkpoint);
    cf.take("classifier", cross_cls, cross.classifier);
    cf.take("out", cross_out, cross.out);
    cf.take("threads", cross_threads, cross.threads);
    cf.take("style_train", cross_st, cross_style_train);
    cf.take("style_eval", cross_se, cross_style_eval);
    cf.take("upper_bound", cross_ub, cross.upper_bound);
    cf.take("score_threshold", nullptr, cross.score_threshold);
    if (!cross_style_train.empty())
      cross.style_train = parse_style(cross_style_train, "--style-train");
    if (!cross_style_eval.empty())
      cross.style_eval = parse_style(cross_style_eval, "--style-eval");
    finish_eval_opts(cross, cf, "cross");
    return cmd_cross(cross);
  }

  if (c_verify->parsed()) return cmd_verify();
  throw UsageError("no command given");
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MissingInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const EmptySplitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEmptySplit;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const TensorError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args);
}

}  // namespace sgol
