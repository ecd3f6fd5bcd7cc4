#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace llts {

/// Axis-aligned box in absolute pixels.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
};

struct Detection {
  int class_id = 0;
  double confidence = 0.0;
  Box box;
};

struct GroundTruth {
  int class_id = 0;
  Box box;
};

/// Intersection over union; 0 for disjoint pairs. A zero-area operand yields 0
/// and bumps degenerate_iou_count().
double iou(const Box& a, const Box& b);
std::size_t degenerate_iou_count();

/// Result of matching one class slice of one image. Indices refer to the
/// filtered slices, in input order.
struct MatchOutcome {
  std::vector<bool> det_is_tp;
  std::vector<long> det_gt;      // matched GT index or -1
  std::vector<double> det_iou;   // IoU with the matched GT, 0 for FPs
  std::vector<bool> gt_matched;
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Detections of `class_id` are visited by descending confidence (stable);
/// each claims the unmatched GT of the same class with the highest IoU, if
/// that IoU reaches iou_thresh.
MatchOutcome match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                              double iou_thresh, int class_id);

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct PrecisionRecall {
  double precision = 0, recall = 0, f1 = 0;
};

/// 0/0 is taken as 0 for each ratio.
PrecisionRecall precision_recall_f1(const Counts& c);

using ImageDetections = std::vector<std::vector<Detection>>;
using ImageGroundTruths = std::vector<std::vector<GroundTruth>>;

/// 101-point interpolated AP for one class over a set of images. Detections
/// are ranked globally by confidence; matching happens within each image.
/// Empty when the class has neither GTs nor detections.
std::optional<double> average_precision(const ImageDetections& dets, const ImageGroundTruths& gts,
                                        double iou_thresh, int class_id);

inline constexpr std::size_t kNumIouThresholds = 10;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, kNumIouThresholds> iou_thresholds();

struct EvalOptions {
  double conf_threshold = 0.25;  // operating point for P/R/F1
  double iou_threshold = 0.5;
};

struct EvalReport {
  std::size_t num_classes = 0;
  EvalOptions options;
  std::array<double, kNumIouThresholds> thresholds{};
  std::vector<std::array<std::optional<double>, kNumIouThresholds>> ap;  // [class][threshold]
  std::vector<std::size_t> gt_count;
  std::vector<std::size_t> det_count;
  std::array<double, kNumIouThresholds> map_at{};  // mean over present classes
  double map50 = 0.0;
  double map50_95 = 0.0;
  Counts counts;
  PrecisionRecall prf;
};

/// Full metric suite. Throws DataError when there are no GTs at all or the
/// image lists are misaligned.
EvalReport map_suite(const ImageDetections& dets, const ImageGroundTruths& gts, std::size_t num_classes,
                     const EvalOptions& options = {});

nlohmann::json report_to_json(const EvalReport& r, const std::vector<std::string>& class_names);
/// Aligned-column text table with a header line naming the operating point.
std::string report_table(const EvalReport& r, const std::vector<std::string>& class_names);

/// One "class_id confidence x1 y1 x2 y2" line per detection.
std::vector<Detection> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, std::span<const Detection> dets);

}  // namespace llts
