#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sgol/matching.hpp"
#include "sgol/model.hpp"

namespace sgol {

// Process exit codes of the sgol tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitMissingInput = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitEmptySplit = 4;
inline constexpr int kExitVerifyFailed = 5;

/// Injection points for the verification suites. Each suite exercises these
/// instead of calling the library directly, so a deliberately broken
/// implementation can prove that the suite catches it.
struct VerifyHooks {
  std::function<double(const BoxXYXY&, const BoxXYXY&)> iou_fn;
  std::function<double(const BoxXYXY&, const BoxXYXY&)> giou_fn;
  std::function<Assignment(const CostMatrix&)> assignment_fn;
  std::function<double(const std::vector<std::uint8_t>&, std::size_t,
                       std::size_t)>
      ap_fn;  // (tp flags, n_gt, recall points) -> average precision
};

/// Hooks bound to the real implementations.
VerifyHooks default_verify_hooks();

struct SuiteResult {
  std::string name;
  bool passed = false;
  /// Names the first failing case; a short run summary when the suite passed.
  std::string detail;
};

/// Runs every verification suite in a fixed order: assignment solver vs
/// exhaustive enumeration, finite-difference gradient checks (standalone
/// losses and the composed matched loss through a small model), average
/// precision hand cases plus the brute-force cross-check, and the IoU/GIoU
/// hand values. Exceptions inside a suite count as failures.
std::vector<SuiteResult> run_verify_suites(const VerifyHooks& hooks);

/// A detector reconstructed from a model directory (model.json + model.ckpt)
/// as written by the train command. Throws DataError when the directory is
/// missing, malformed, or does not hold a detector.
struct LoadedDetector {
  std::string variant;  // multiclass | sketch_detr_query | sketch_detr_concat
  char style_train = 'A';
  std::uint64_t seed = 0;
  SketchDETRConfig config;
  std::unique_ptr<SketchDETR> model;
};

LoadedDetector load_detector(const std::string& dir);

/// Same for a sketch classifier directory.
struct LoadedClassifier {
  char style_train = 'A';
  std::uint64_t seed = 0;
  std::size_t d = 0;
  std::size_t num_classes = 0;
  std::size_t sketch_size = 0;
  std::vector<std::size_t> channels;
  std::unique_ptr<SketchClassifier> model;
};

LoadedClassifier load_classifier(const std::string& dir);

/// Entry point behind the sgol binary. `args` excludes the program name,
/// e.g. {"gen", "--seed", "7", "--out", "ds"}. Reports through
/// stdout/stderr and returns one of the exit codes above.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, const char* const* argv);

}  // namespace sgol
