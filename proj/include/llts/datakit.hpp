#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "llts/tensor.hpp"

namespace llts {

// ---------------------------------------------------------------- labels

/// One YOLO label: class id and normalized center/size.
struct LabelRecord {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
  bool operator==(const LabelRecord&) const = default;
};

/// prohibitory, mandatory, warning
std::vector<std::string> default_class_names();
/// Relative class frequencies 4954 : 1658 : 1075, normalized.
std::array<double, 3> default_class_ratios();

struct LabelParse {
  std::vector<LabelRecord> labels;
  std::size_t malformed = 0;
};

/// Parses "class cx cy w h" lines; '#' starts a comment. Lines that do not
/// parse, or whose box is empty after clipping to [0,1], are counted as
/// malformed and skipped. A class id outside the table throws DataError.
LabelParse parse_labels(std::istream& in, std::size_t num_classes, const std::string& source);
std::string format_labels(std::span<const LabelRecord> labels);

// ---------------------------------------------------------------- manifest

struct ImageEntry {
  std::string path;  // relative to the dataset root, e.g. "images/0001.png"
  std::size_t width = 0, height = 0;
  std::vector<LabelRecord> labels;
  bool operator==(const ImageEntry&) const = default;
};

struct DatasetManifest {
  std::string split;
  std::vector<std::string> class_names;
  std::vector<ImageEntry> images;
  std::vector<std::size_t> class_counts;
  std::size_t malformed_lines = 0;
  std::size_t missing_label_files = 0;
  nlohmann::json provenance = nlohmann::json::object();  // how the corpus was produced

  bool operator==(const DatasetManifest&) const = default;
};

std::vector<std::size_t> recount(const DatasetManifest& m);

/// Reads root/images/*.{png,jpg,jpeg} with labels from root/labels/<stem>.txt
/// and class names from root/classes.txt (defaults when absent). Images are
/// listed in file-name order. A missing label file means a background image.
DatasetManifest load_dataset(const std::filesystem::path& root);

/// Writes labels/, classes.txt and manifest.json under root. Image files are
/// expected to exist already at the entries' paths.
void save_dataset(const std::filesystem::path& root, const DatasetManifest& m);

nlohmann::json manifest_to_json(const DatasetManifest& m);

// ---------------------------------------------------------------- images

struct ImageSize {
  std::size_t width = 0, height = 0;
};

/// 8-bit PNG or JPEG as a [3, H, W] tensor with values v / 255.
Tensor load_image(const std::filesystem::path& path);
ImageSize image_size(const std::filesystem::path& path);
/// Writes [3, H, W] values clamped to [0, 1] as 8-bit RGB PNG.
void save_png(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resampling of a [3, H, W] image (half-pixel centers).
Tensor resize_image(const Tensor& image, std::size_t out_h, std::size_t out_w);

struct ImageSample {
  std::string id;
  Tensor image;  // [3, S, S]
  std::vector<LabelRecord> labels;
};

/// Loads every manifest entry resized to size x size. Normalized labels are
/// unaffected by the resize.
std::vector<ImageSample> load_samples(const std::filesystem::path& root, const DatasetManifest& m,
                                      std::size_t size);

// ---------------------------------------------------------------- synthesis

struct SynthOptions {
  std::size_t size = 160;
  std::size_t max_signs = 4;
  std::size_t min_sign_px = 12;
  std::size_t max_sign_px = 60;
  std::size_t distractors = 6;
  std::array<double, 3> class_ratios = default_class_ratios();
};

struct SignGlyph {
  int class_id = 0;
  double cx = 0, cy = 0;  // pixels
  double width = 0;       // pixels
  double brightness = 1;  // multiplies the palette
};

struct Distractor {
  int kind = 0;  // 0 rectangle, 1 disc, 2 pole
  double x = 0, y = 0, a = 0, b = 0;
  std::array<double, 3> color{};
};

struct SceneLayout {
  std::size_t size = 0;
  std::uint64_t texture_seed = 0;
  std::array<double, 3> sky{}, ground{};
  double horizon = 0.5;
  std::vector<Distractor> distractors;
  std::vector<SignGlyph> signs;
};

SceneLayout make_layout(std::uint64_t seed, const SynthOptions& opt);
/// Renders the layout; draw_signs = false gives the bare background, which
/// makes the sign pixels recoverable as the difference of the two renders.
Tensor render_layout(const SceneLayout& layout, bool draw_signs = true);
/// Row-major size x size coverage mask (0/1) of one glyph.
std::vector<std::uint8_t> glyph_mask(const SignGlyph& g, std::size_t size);

struct SynthScene {
  Tensor image;  // [3, size, size]
  std::vector<LabelRecord> labels;
};

/// Deterministic per seed; labels are the tight pixel bounds of each glyph.
SynthScene synth_scene(std::uint64_t seed, const SynthOptions& opt);
SynthScene synth_scene(std::uint64_t seed, std::size_t size, std::size_t max_signs);

// ---------------------------------------------------------------- degradation

struct DegradeParams {
  double gamma_dark = 2.2;
  double contrast_scale = 0.7;
  double noise_sigma = 0.015;
  double blur_sigma = 0.6;
  std::array<double, 3> color_cast{0.85, 0.9, 1.0};
  std::uint64_t seed = 0;

  static DegradeParams identity();
  /// "none", "mild", "night" or "severe".
  static DegradeParams profile(const std::string& name);
  void validate() const;
};

nlohmann::json degrade_to_json(const DegradeParams& p);

/// Color cast, gamma v^g, contrast scaling about each channel's mean,
/// Gaussian blur, seeded additive noise, clamp to [0, 1]; in that order.
Tensor degrade_lowlight(const Tensor& image, const DegradeParams& p);

// ---------------------------------------------------------------- statistics

struct AnchorStats {
  std::size_t count = 0;
  double mean_w = 0, mean_h = 0;
  double bin_px = 8;
  std::size_t bins = 16;
  std::vector<std::size_t> histogram;  // [h_bin * bins + w_bin]; the last bin absorbs overflow
};

/// Per-instance pixel sizes (w * W, h * H). Throws DataError when empty.
AnchorStats anchor_stats(const DatasetManifest& m, double bin_px = 8, std::size_t bins = 16);
/// "w_lo,w_hi,h_lo,h_hi,count" for every non-empty bin.
void write_anchor_csv(std::ostream& os, const AnchorStats& s);

}  // namespace llts
