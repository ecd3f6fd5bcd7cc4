#include <cmath>

#include "llts/detector.hpp"
#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

namespace {
// Independent init streams so that toggling one module leaves the initial
// weights of the others unchanged.
constexpr std::uint64_t kStreamPgfe = 101, kStreamBackbone = 102, kStreamNeck = 103, kStreamHead = 104;
constexpr double kClassPrior = 0.01;
constexpr double kInitialDistance = 2.5;  // stride units
}  // namespace

void ModelConfig::validate() const {
  if (input_size == 0 || input_size % 32 != 0)
    throw UsageError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  if (num_classes == 0) throw UsageError("num_classes must be positive");
  if (stem_channels < 2) throw UsageError("stem_channels must be at least 2");
  if (pgfe_stages == 0) throw UsageError("pgfe_stages must be at least 1");
  for (std::size_t w : backbone_widths)
    if (w == 0) throw UsageError("backbone widths must be positive");
  if (branch_channels == 0 || head_channels == 0) throw UsageError("branch and head widths must be positive");
  if (cam_ratio == 0 || branch_channels % cam_ratio != 0)
    throw UsageError("cam_ratio must divide branch_channels");
  if (!(conf_threshold >= 0 && conf_threshold <= 1)) throw UsageError("conf_threshold must lie in [0, 1]");
  if (!(nms_iou >= 0 && nms_iou <= 1)) throw UsageError("nms_iou must lie in [0, 1]");
}

PgfeConfig ModelConfig::pgfe_config() const {
  PgfeConfig c;
  c.in_channels = 3;
  c.channels = stem_channels;
  c.stages = pgfe_stages;
  c.inn_blocks = inn_blocks;
  c.split = stem_channels / 2;
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"input_size", input_size},       {"num_classes", num_classes},
          {"stem_channels", stem_channels}, {"pgfe_stages", pgfe_stages},
          {"inn_blocks", inn_blocks},       {"backbone_widths", backbone_widths},
          {"branch_channels", branch_channels}, {"head_channels", head_channels},
          {"cam_ratio", cam_ratio},         {"enable_pgfe", enable_pgfe},
          {"enable_hrfm", enable_hrfm},     {"enable_mfia", enable_mfia},
          {"conf_threshold", conf_threshold}, {"nms_iou", nms_iou}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "input_size") c.input_size = v.get<std::size_t>();
      else if (key == "num_classes") c.num_classes = v.get<std::size_t>();
      else if (key == "stem_channels") c.stem_channels = v.get<std::size_t>();
      else if (key == "pgfe_stages") c.pgfe_stages = v.get<std::size_t>();
      else if (key == "inn_blocks") c.inn_blocks = v.get<std::size_t>();
      else if (key == "backbone_widths") c.backbone_widths = v.get<std::array<std::size_t, 4>>();
      else if (key == "branch_channels") c.branch_channels = v.get<std::size_t>();
      else if (key == "head_channels") c.head_channels = v.get<std::size_t>();
      else if (key == "cam_ratio") c.cam_ratio = v.get<std::size_t>();
      else if (key == "enable_pgfe") c.enable_pgfe = v.get<bool>();
      else if (key == "enable_hrfm") c.enable_hrfm = v.get<bool>();
      else if (key == "enable_mfia") c.enable_mfia = v.get<bool>();
      else if (key == "conf_threshold") c.conf_threshold = v.get<double>();
      else if (key == "nms_iou") c.nms_iou = v.get<double>();
      else throw DataError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

BackboneParams BackboneParams::make(std::size_t in_channels, const std::array<std::size_t, 4>& w, std::size_t stages) {
  if (stages < 1 || stages > 4) throw UsageError("backbone needs 1..4 stages");
  BackboneParams b;
  b.stages = stages;
  b.convs.push_back(ConvSpec::make(in_channels, w[0], 3, 3, 2, 1));
  b.convs.push_back(ConvSpec::make(w[0], w[0], 3, 3, 2, 1));
  for (std::size_t s = 1; s < stages; ++s) b.convs.push_back(ConvSpec::make(w[s - 1], w[s], 3, 3, 2, 1));
  return b;
}

void BackboneParams::init(Rng& rng) {
  for (ConvSpec& c : convs) c.init_uniform(rng, std::sqrt(2.0));
}

void BackboneParams::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs.size(); ++i) collect_conv(out, prefix + ".conv" + std::to_string(i), convs[i]);
}

HeadParams HeadParams::make(std::size_t in_channels, std::size_t width, std::size_t num_classes) {
  HeadParams h;
  h.conv1 = ConvSpec::make(in_channels, width, 3, 3, 1, 1);
  h.conv2 = ConvSpec::make(width, width, 3, 3, 1, 1);
  h.out = ConvSpec::make(width, 4 + num_classes, 1, 1);
  return h;
}

void HeadParams::init(Rng& rng) {
  conv1.init_uniform(rng, std::sqrt(2.0));
  conv2.init_uniform(rng, std::sqrt(2.0));
  out.init_uniform(rng, 0.1);
  auto b = out.bias.mutable_data();
  const double dist_bias = std::log(std::expm1(kInitialDistance));  // softplus^-1
  const double cls_bias = -std::log((1 - kClassPrior) / kClassPrior);
  for (std::size_t k = 0; k < b.size(); ++k) b[k] = k < 4 ? dist_bias : cls_bias;
}

void HeadParams::collect(ParamList& out_list, const std::string& prefix) const {
  collect_conv(out_list, prefix + ".conv1", conv1);
  collect_conv(out_list, prefix + ".conv2", conv2);
  collect_conv(out_list, prefix + ".out", out);
}

ParamList DetectorModel::params() const {
  ParamList out;
  if (cfg.enable_pgfe)
    pgfe.collect(out, "pgfe");
  else
    collect_conv(out, "pgfe.stem", pgfe.stem);
  backbone.collect(out, "backbone");
  neck.collect(out, "neck");
  head.collect(out, "head");
  return out;
}

DetectorModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DetectorModel m;
  m.cfg = cfg;
  m.pgfe = PgfeParams::make(cfg.pgfe_config());
  const std::size_t stages = cfg.enable_hrfm ? 4 : 1;
  m.backbone = BackboneParams::make(cfg.stem_channels, cfg.backbone_widths, stages);
  std::array<std::size_t, 4> level_channels;
  for (std::size_t i = 0; i < 4; ++i) level_channels[i] = cfg.enable_hrfm ? cfg.backbone_widths[i] : cfg.backbone_widths[0];
  m.neck = HrfmParams::make(level_channels, cfg.branch_channels, cfg.enable_mfia, cfg.cam_ratio);
  m.head = HeadParams::make(4 * cfg.branch_channels, cfg.head_channels, cfg.num_classes);

  Rng r_pgfe(seed, kStreamPgfe), r_backbone(seed, kStreamBackbone), r_neck(seed, kStreamNeck), r_head(seed, kStreamHead);
  m.pgfe.init(r_pgfe);
  m.backbone.init(r_backbone);
  m.neck.init(r_neck);
  m.head.init(r_head);
  return m;
}

std::size_t model_param_count(const ModelConfig& c) {
  const auto& w = c.backbone_widths;
  std::size_t n = pgfe_stem_param_count(c.pgfe_config());
  if (c.enable_pgfe) n += pgfe_enhancement_param_count(c.pgfe_config());
  n += conv_param_count(c.stem_channels, w[0], 3, 3) + conv_param_count(w[0], w[0], 3, 3);
  if (c.enable_hrfm) {
    for (std::size_t s = 1; s < 4; ++s) n += conv_param_count(w[s - 1], w[s], 3, 3);
    n += hrfm_param_count(w, c.branch_channels, c.enable_mfia, c.cam_ratio);
  } else {
    n += 4 * conv_param_count(w[0], c.branch_channels, 1, 1);
    if (c.enable_mfia) n += 4 * mfia_param_count(c.branch_channels, c.cam_ratio);
  }
  n += conv_param_count(4 * c.branch_channels, c.head_channels, 3, 3) +
       conv_param_count(c.head_channels, c.head_channels, 3, 3) +
       conv_param_count(c.head_channels, 4 + c.num_classes, 1, 1);
  return n;
}

PyramidFeatures backbone_forward(const Tensor& x, const BackboneParams& p) {
  if (x.rank() != 4) throw ShapeError("backbone_forward expects [N,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0)
    throw ShapeError("backbone_forward: spatial size must be a multiple of 32, got " + shape_str(x.shape()));
  PyramidFeatures out;
  Tensor h = relu(conv2d(relu(conv2d(x, p.convs[0])), p.convs[1]));
  out.levels[0] = h;
  for (std::size_t s = 1; s < p.stages; ++s) {
    h = relu(conv2d(h, p.convs[s + 1]));
    out.levels[s] = h;
  }
  return out;
}

Tensor head_forward(const Tensor& fused, const HeadParams& p) {
  Tensor z = conv2d(relu(conv2d(relu(conv2d(fused, p.conv1)), p.conv2)), p.out);
  const std::size_t C = z.dim(1);
  Tensor parts[] = {softplus(slice_channels(z, 0, 4)), slice_channels(z, 4, C)};
  return concat_channels(parts);
}

ForwardOutputs model_forward_all(const DetectorModel& m, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw ShapeError("model input must be [N,3,H,W], got " + shape_str(images.shape()));
  ForwardOutputs o;
  o.features = m.cfg.enable_pgfe ? pgfe_forward(images, m.pgfe) : pgfe_stem(images, m.pgfe);
  o.pyramid = backbone_forward(o.features, m.backbone);
  if (m.cfg.enable_hrfm) {
    o.branches = hrfm_project(o.pyramid, m.neck);
  } else {
    const Tensor& p1 = o.pyramid.levels[0];
    for (std::size_t i = 0; i < 4; ++i) o.branches.f[i] = conv2d(p1, m.neck.proj[i]);
  }
  o.fused = m.cfg.enable_mfia ? hrfm_fuse(o.branches, m.neck.mfia) : hrfm_concat(o.branches);
  o.raw = head_forward(o.fused, m.head);
  return o;
}

Tensor model_forward(const DetectorModel& m, const Tensor& images) { return model_forward_all(m, images).raw; }

}  // namespace llts
