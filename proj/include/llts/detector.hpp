#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "llts/datakit.hpp"
#include "llts/errors.hpp"
#include "llts/evalkit.hpp"
#include "llts/hrfm.hpp"
#include "llts/params.hpp"
#include "llts/pgfe.hpp"

namespace llts {

// ---------------------------------------------------------------- model

struct ModelConfig {
  std::size_t input_size = 640;
  std::size_t num_classes = 3;
  std::size_t stem_channels = 64;
  std::size_t pgfe_stages = 3;
  std::size_t inn_blocks = 2;
  std::array<std::size_t, 4> backbone_widths{64, 128, 256, 512};
  std::size_t branch_channels = 128;
  std::size_t head_channels = 128;
  std::size_t cam_ratio = 4;
  bool enable_pgfe = true;
  bool enable_hrfm = true;
  bool enable_mfia = true;
  double conf_threshold = 0.25;
  double nms_iou = 0.6;

  void validate() const;
  PgfeConfig pgfe_config() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Stride-2 3x3 conv blocks: two for the first stage (stride 4), one for each
/// further stage (strides 8, 16, 32). Only the first stage exists when the
/// high-resolution neck is disabled, since nothing consumes the deeper levels.
struct BackboneParams {
  std::vector<ConvSpec> convs;
  std::size_t stages = 4;

  static BackboneParams make(std::size_t in_channels, const std::array<std::size_t, 4>& widths, std::size_t stages);
  void init(Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct HeadParams {
  ConvSpec conv1, conv2, out;

  static HeadParams make(std::size_t in_channels, std::size_t width, std::size_t num_classes);
  void init(Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct DetectorModel {
  ModelConfig cfg;
  PgfeParams pgfe;  // the stem is always used; the rest only with enable_pgfe
  BackboneParams backbone;
  /// With enable_hrfm the projections read the four pyramid levels; without
  /// it all four read the stride-4 level and skip resampling.
  HrfmParams neck;
  HeadParams head;

  ParamList params() const;
  std::size_t param_count() const { return count_params(params()); }
};

DetectorModel make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Closed-form parameter count of make_model(cfg).
std::size_t model_param_count(const ModelConfig& cfg);

/// [N, C, H, W] -> levels at strides 4, 8, 16, 32 (only as many as built).
/// Throws ShapeError unless H and W are multiples of 32.
PyramidFeatures backbone_forward(const Tensor& x, const BackboneParams& p);

/// Two 3x3 conv + relu blocks and a 1x1 projection to 4 + K channels;
/// channels 0..3 (l, t, r, b distances in stride units) pass through softplus.
Tensor head_forward(const Tensor& fused, const HeadParams& p);

struct ForwardOutputs {
  Tensor features;  // stem or PGFE output at input resolution
  PyramidFeatures pyramid;
  FeatureBranches branches;
  Tensor fused;
  Tensor raw;
};

ForwardOutputs model_forward_all(const DetectorModel& m, const Tensor& images);
Tensor model_forward(const DetectorModel& m, const Tensor& images);

inline constexpr double kHeadStride = 4.0;

// ---------------------------------------------------------------- targets and loss

struct TargetMap {
  std::size_t batch = 0, grid = 0;
  double stride = 0;
  std::vector<int> cls;  // [N * S * S], -1 for negatives
  std::vector<Box> box;  // GT box in pixels for positive cells
  std::size_t positives = 0;
  std::size_t skipped = 0;  // degenerate labels (w or h <= 1 px)
};

/// The cell containing a GT center is positive for it; when several GTs share
/// a cell the smallest area wins (first in input order on equal areas).
TargetMap assign_targets(std::span<const std::vector<LabelRecord>> labels, std::size_t grid, double stride);

struct LossBreakdown {
  double box_loss = 0, cls_loss = 0, total = 0;
  double normalizer = 1;  // max(1, positives)
  std::size_t positives = 0;
};

struct LossResult {
  Tensor total;  // differentiable scalar
  LossBreakdown parts;
};

/// cls: BCE over every cell and class; box: 1 - IoU on positive cells;
/// total = cls + 2 box, each divided by max(1, positives).
LossResult detection_loss(const Tensor& raw, const TargetMap& t);

// ---------------------------------------------------------------- decoding

/// Per image, one candidate per cell with confidence = max class sigmoid,
/// box = cell centre -/+ (l, t, r, b) * stride clipped to the image. Cells
/// below conf_threshold are dropped; max_per_image > 0 keeps the top ones.
std::vector<std::vector<Detection>> decode_predictions(const Tensor& raw, double conf_threshold, double stride,
                                                       std::size_t max_per_image = 0);

/// Per-class greedy suppression of IoU > iou_thresh, visiting detections by
/// descending confidence (lower index first on ties). Survivors keep that
/// order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh);

/// Stacks [3, S, S] sample images into one batch.
Tensor stack_images(std::span<const ImageSample> samples);

/// Forward, decode and NMS over a sample set.
std::vector<std::vector<Detection>> predict(const DetectorModel& m, std::span<const ImageSample> samples,
                                            double conf_threshold, double nms_iou, std::size_t max_per_image = 100,
                                            std::size_t batch_size = 8);

ImageGroundTruths ground_truths(std::span<const ImageSample> samples, std::size_t image_size);

EvalReport evaluate_model(const DetectorModel& m, std::span<const ImageSample> samples, const EvalOptions& opt = {},
                          std::size_t batch_size = 8);

// ---------------------------------------------------------------- training

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double lr = 0.01;
  double lr_final_ratio = 0.01;  // cosine decay ends at lr * ratio
  double momentum = 0.937;
  double grad_clip = 10.0;
  std::size_t max_steps = 0;   // 0 = no cap
  double target_map50 = 0.0;   // > 0 stops once reached on the eval set
  std::size_t eval_every = 1;  // epochs; 0 disables evaluation
  double divergence_factor = 1e3;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // cumulative optimizer steps
  double box_loss = 0, cls_loss = 0, total = 0;
  double norm_loss = 0;  // total / epoch-0 total
  std::optional<EvalReport> eval;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  std::size_t steps = 0;
  bool reached_target = false;
};

/// Thrown when a step loss exceeds divergence_factor times the first one.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::vector<EpochRecord> trace)
      : NumericError(what), trace_(std::move(trace)) {}
  const std::vector<EpochRecord>& trace() const { return trace_; }

 private:
  std::vector<EpochRecord> trace_;
};

/// SGD with momentum, cosine-decayed learning rate and global-norm gradient
/// clipping. Deterministic for a fixed seed. on_epoch sees every record as
/// soon as it is complete.
TrainResult train_loop(DetectorModel& m, std::span<const ImageSample> train, std::span<const ImageSample> eval_set,
                       const TrainOptions& opt, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// epoch, box_loss, cls_loss, norm_loss, precision, recall, mAP50, mAP50_95
void write_trace_header(std::ostream& os);
void write_trace_row(std::ostream& os, const EpochRecord& r);

// ---------------------------------------------------------------- checkpoints

/// "LLTSCKPT", u32 version, u32 manifest length, JSON manifest (config and
/// parameter names/shapes), then one tensor container per parameter.
void save_checkpoint(const std::filesystem::path& path, const DetectorModel& m,
                     const nlohmann::json& extra = nlohmann::json::object());
DetectorModel load_checkpoint(const std::filesystem::path& path);

}  // namespace llts
