#include "commands.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "llts/datakit.hpp"
#include "llts/detector.hpp"
#include "llts/errors.hpp"
#include "llts/evalkit.hpp"
#include "llts/gradsuite.hpp"
#include "llts/pgfe.hpp"
#include "llts/rng.hpp"

namespace llts::cli {

namespace fs = std::filesystem;

namespace {

// Seed streams for the synthesizer: scenes and degradation noise never share one.
constexpr std::uint64_t kSceneStream = 0;
constexpr std::uint64_t kNoiseStream = 1u << 20;

const char* const kModelKeys[] = {"input_size",      "num_classes",   "stem_channels", "pgfe_stages",
                                  "inn_blocks",      "backbone_widths", "branch_channels", "head_channels",
                                  "cam_ratio",       "enable_pgfe",   "enable_hrfm",   "enable_mfia",
                                  "conf_threshold",  "nms_iou"};

// Shortest text that parses back to the same double.
std::string fmt_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

/// Refuses to touch a non-empty directory unless forced; when forced, only
/// the entries this command writes are removed.
void prepare_out(const RunContext& ctx, std::initializer_list<const char*> owned) {
  if (ctx.out.empty()) throw UsageError("--out is required");
  if (fs::exists(ctx.out) && !fs::is_directory(ctx.out))
    throw UsageError("output path " + ctx.out.string() + " exists and is not a directory");
  if (fs::exists(ctx.out) && !fs::is_empty(ctx.out)) {
    if (!ctx.force) throw UsageError("output directory " + ctx.out.string() + " is not empty; pass --force to overwrite");
    for (const char* name : owned) fs::remove_all(ctx.out / name);
  }
  fs::create_directories(ctx.out);
}

void write_run_json(const Settings& s, const RunContext& ctx) { write_json(ctx.out / "run.json", s.to_json()); }

const std::string& required(const Settings& s, const std::string& key) {
  const std::string& v = s.str(key);
  if (v.empty()) throw UsageError("setting " + key + " is required");
  return v;
}

// ------------------------------------------------------------------ model settings

ModelConfig preset(const std::string& name) {
  ModelConfig c;
  if (name == "full") return c;
  if (name != "desk") throw UsageError("model.preset must be 'desk' or 'full', got '" + name + "'");
  c.input_size = 160;
  c.stem_channels = 8;
  c.backbone_widths = {32, 64, 96, 128};
  c.branch_channels = 32;
  c.head_channels = 64;
  return c;
}

std::string widths_str(const std::array<std::size_t, 4>& w) {
  return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," + std::to_string(w[3]);
}

std::array<std::size_t, 4> parse_widths(const std::string& s) {
  std::array<std::size_t, 4> w{};
  std::stringstream ss(s);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 4) break;
    try {
      std::size_t used = 0;
      w[i] = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("model.backbone_widths must be four comma-separated integers, got '" + s + "'");
    }
    ++i;
  }
  if (i != 4 || std::getline(ss, item)) throw UsageError("model.backbone_widths must list exactly four widths");
  return w;
}

/// Fills unset model.* keys from the preset (and the dataset class count) so
/// that run.json records every value actually used.
ModelConfig resolve_model(Settings& s, std::size_t dataset_classes) {
  const ModelConfig p = preset(s.str("model.preset"));
  auto fill = [&](const char* key, const std::string& v) {
    if (s.str(std::string("model.") + key).empty()) s.set(std::string("model.") + key, v, "preset");
  };
  fill("input_size", std::to_string(p.input_size));
  fill("num_classes", std::to_string(dataset_classes));
  fill("stem_channels", std::to_string(p.stem_channels));
  fill("pgfe_stages", std::to_string(p.pgfe_stages));
  fill("inn_blocks", std::to_string(p.inn_blocks));
  fill("backbone_widths", widths_str(p.backbone_widths));
  fill("branch_channels", std::to_string(p.branch_channels));
  fill("head_channels", std::to_string(p.head_channels));
  fill("cam_ratio", std::to_string(p.cam_ratio));
  fill("enable_pgfe", p.enable_pgfe ? "true" : "false");
  fill("enable_hrfm", p.enable_hrfm ? "true" : "false");
  fill("enable_mfia", p.enable_mfia ? "true" : "false");
  fill("conf_threshold", fmt_real(p.conf_threshold));
  fill("nms_iou", fmt_real(p.nms_iou));

  ModelConfig c;
  c.input_size = s.count("model.input_size");
  c.num_classes = s.count("model.num_classes");
  c.stem_channels = s.count("model.stem_channels");
  c.pgfe_stages = s.count("model.pgfe_stages");
  c.inn_blocks = s.count("model.inn_blocks");
  c.backbone_widths = parse_widths(s.str("model.backbone_widths"));
  c.branch_channels = s.count("model.branch_channels");
  c.head_channels = s.count("model.head_channels");
  c.cam_ratio = s.count("model.cam_ratio");
  c.enable_pgfe = s.flag("model.enable_pgfe");
  c.enable_hrfm = s.flag("model.enable_hrfm");
  c.enable_mfia = s.flag("model.enable_mfia");
  c.conf_threshold = s.real("model.conf_threshold");
  c.nms_iou = s.real("model.nms_iou");
  c.validate();
  if (c.num_classes != dataset_classes)
    throw DataError("model.num_classes = " + std::to_string(c.num_classes) + " but the dataset defines " +
                    std::to_string(dataset_classes) + " classes");
  return c;
}

// ------------------------------------------------------------------ synth

int run_synth(Settings& s, const RunContext& ctx) {
  SynthOptions opt;
  opt.size = s.count("synth.size");
  opt.max_signs = s.count("synth.max_signs");
  opt.min_sign_px = s.count("synth.min_sign_px");
  opt.max_sign_px = s.count("synth.max_sign_px");
  opt.distractors = s.count("synth.distractors");
  const std::size_t n = s.count("synth.n");
  const std::uint64_t seed = s.u64("seed");
  const DegradeParams degrade = DegradeParams::profile(s.str("synth.profile"));
  prepare_out(ctx, {"clean", "lowlight", "run.json"});
  write_run_json(s, ctx);

  DatasetManifest clean, low;
  clean.split = "clean";
  low.split = "lowlight";
  clean.class_names = low.class_names = default_class_names();
  nlohmann::json prov = {{"generator", "llts synth"}, {"seed", seed},           {"count", n},
                         {"size", opt.size},          {"max_signs", opt.max_signs}, {"profile", s.str("synth.profile")}};
  clean.provenance = prov;
  prov["degrade"] = degrade_to_json(degrade);
  prov["degrade"].erase("seed");
  prov["noise_seed_stream"] = kNoiseStream;
  low.provenance = prov;
  for (const char* split : {"clean", "lowlight"}) fs::create_directories(ctx.out / split / "images");

  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    const SynthScene scene = synth_scene(split_seed(seed, kSceneStream + i), opt);
    DegradeParams p = degrade;
    p.seed = split_seed(seed, kNoiseStream + i);
    save_png(ctx.out / "clean" / "images" / name, scene.image);
    save_png(ctx.out / "lowlight" / "images" / name, degrade_lowlight(scene.image, p));
    ImageEntry e{std::string("images/") + name, opt.size, opt.size, scene.labels};
    clean.images.push_back(e);
    low.images.push_back(e);
  }
  clean.class_counts = recount(clean);
  low.class_counts = recount(low);
  save_dataset(ctx.out / "clean", clean);
  save_dataset(ctx.out / "lowlight", low);

  std::printf("synthesized %zu scenes (%zux%zu, profile %s) into %s\n", n, opt.size, opt.size,
              s.str("synth.profile").c_str(), ctx.out.string().c_str());
  for (std::size_t k = 0; k < clean.class_names.size(); ++k)
    std::printf("  %-12s %zu\n", clean.class_names[k].c_str(), clean.class_counts[k]);
  return 0;
}

// ------------------------------------------------------------------ train

int run_train(Settings& s, const RunContext& ctx) {
  const fs::path data = required(s, "train.data");
  const DatasetManifest train_m = load_dataset(data);
  if (train_m.images.empty()) throw DataError("training set " + data.string() + " has no images");
  const ModelConfig cfg = resolve_model(s, train_m.class_names.size());

  TrainOptions opt;
  opt.epochs = s.count("train.epochs");
  opt.batch_size = s.count("train.batch_size");
  opt.lr = s.real("train.lr");
  opt.lr_final_ratio = s.real("train.lr_final_ratio");
  opt.momentum = s.real("train.momentum");
  opt.grad_clip = s.real("train.grad_clip");
  opt.max_steps = s.count("train.max_steps");
  opt.target_map50 = s.real("train.target_map50");
  opt.eval_every = s.count("train.eval_every");
  opt.seed = s.u64("seed");

  std::vector<ImageSample> train = load_samples(data, train_m, cfg.input_size);
  std::vector<ImageSample> val;
  if (!s.str("train.val").empty()) {
    const DatasetManifest val_m = load_dataset(s.str("train.val"));
    if (val_m.class_names.size() != cfg.num_classes)
      throw DataError("validation set defines " + std::to_string(val_m.class_names.size()) + " classes, model has " +
                      std::to_string(cfg.num_classes));
    val = load_samples(s.str("train.val"), val_m, cfg.input_size);
  } else {
    val = train;
  }

  prepare_out(ctx, {"checkpoint.llts", "trace.csv", "summary.json", "run.json"});
  write_run_json(s, ctx);
  DetectorModel model = make_model(cfg, opt.seed);
  const std::size_t params = model.param_count();
  std::printf("model: %zu parameters (pgfe %s, hrfm %s, mfia %s), input %zu, %zu classes\n", params,
              cfg.enable_pgfe ? "on" : "off", cfg.enable_hrfm ? "on" : "off", cfg.enable_mfia ? "on" : "off",
              cfg.input_size, cfg.num_classes);
  std::printf("data: %zu train / %zu eval images\n", train.size(), val.size());
  std::fflush(stdout);

  std::ofstream trace(ctx.out / "trace.csv", std::ios::binary);
  write_trace_header(trace);
  const auto t0 = std::chrono::steady_clock::now();
  auto on_epoch = [&](const EpochRecord& r) {
    write_trace_row(trace, r);
    trace.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %4zu  steps %5zu  box %.4f  cls %.4f  norm %.4f", r.epoch, r.steps, r.box_loss, r.cls_loss,
                r.norm_loss);
    if (r.eval) std::printf("  P %.3f  R %.3f  mAP50 %.3f  mAP50:95 %.3f", r.eval->prf.precision, r.eval->prf.recall,
                            r.eval->map50, r.eval->map50_95);
    std::printf("  [%.0fs]\n", secs);
    std::fflush(stdout);
  };

  TrainResult result;
  try {
    result = train_loop(model, train, val, opt, on_epoch);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    throw;
  }

  nlohmann::json extra = {{"steps", result.steps}, {"reached_target", result.reached_target}, {"seed", opt.seed}};
  save_checkpoint(ctx.out / "checkpoint.llts", model, extra);
  nlohmann::ordered_json summary;
  summary["param_count"] = params;
  summary["steps"] = result.steps;
  summary["epochs_run"] = result.trace.size();
  summary["reached_target"] = result.reached_target;
  if (!result.trace.empty()) {
    const EpochRecord& last = result.trace.back();
    summary["final"] = {{"box_loss", last.box_loss}, {"cls_loss", last.cls_loss}, {"norm_loss", last.norm_loss}};
    for (auto it = result.trace.rbegin(); it != result.trace.rend(); ++it)
      if (it->eval) {
        summary["last_eval"] = {{"epoch", it->epoch},
                                {"precision", it->eval->prf.precision},
                                {"recall", it->eval->prf.recall},
                                {"map50", it->eval->map50},
                                {"map50_95", it->eval->map50_95}};
        break;
      }
  }
  write_json(ctx.out / "summary.json", summary);
  std::printf("done: %zu steps, checkpoint %s\n", result.steps, (ctx.out / "checkpoint.llts").string().c_str());
  return 0;
}

// ------------------------------------------------------------------ eval

ImageGroundTruths pixel_ground_truths(const DatasetManifest& m) {
  ImageGroundTruths g(m.images.size());
  for (std::size_t i = 0; i < m.images.size(); ++i) {
    const double W = static_cast<double>(m.images[i].width), H = static_cast<double>(m.images[i].height);
    for (const LabelRecord& r : m.images[i].labels)
      g[i].push_back({r.class_id, Box{(r.cx - r.w / 2) * W, (r.cy - r.h / 2) * H, (r.cx + r.w / 2) * W,
                                      (r.cy + r.h / 2) * H}});
  }
  return g;
}

int run_eval(Settings& s, const RunContext& ctx) {
  const fs::path data = required(s, "eval.data");
  const std::string ckpt = s.str("eval.checkpoint"), preds = s.str("eval.predictions");
  if (ckpt.empty() == preds.empty()) throw UsageError("eval needs exactly one of eval.checkpoint or eval.predictions");
  if (!preds.empty() && !fs::is_directory(preds)) throw DataError("prediction directory " + preds + " does not exist");
  EvalOptions opt;
  opt.conf_threshold = s.real("eval.conf");
  opt.iou_threshold = s.real("eval.iou");
  if (!(opt.conf_threshold >= 0 && opt.conf_threshold <= 1) || !(opt.iou_threshold > 0 && opt.iou_threshold <= 1))
    throw UsageError("eval.conf must lie in [0, 1] and eval.iou in (0, 1]");
  const DatasetManifest m = load_dataset(data);
  const std::size_t K = m.class_names.size();

  ImageDetections dets(m.images.size());
  std::optional<DetectorModel> model;
  if (!ckpt.empty()) {
    model = load_checkpoint(ckpt);
    if (model->cfg.num_classes != K)
      throw DataError("checkpoint predicts " + std::to_string(model->cfg.num_classes) + " classes but " +
                      data.string() + " defines " + std::to_string(K));
  }
  prepare_out(ctx, {"report.json", "report.txt", "predictions", "run.json"});
  write_run_json(s, ctx);

  if (model) {
    const std::size_t S = model->cfg.input_size;
    const auto samples = load_samples(data, m, S);
    // Low decode floor so AP sees the whole ranking; P/R/F1 apply eval.conf.
    dets = predict(*model, samples, 0.001, model->cfg.nms_iou, s.count("eval.max_det"), s.count("eval.batch_size"));
    fs::create_directories(ctx.out / "predictions");
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const double sx = static_cast<double>(m.images[i].width) / static_cast<double>(S);
      const double sy = static_cast<double>(m.images[i].height) / static_cast<double>(S);
      for (Detection& d : dets[i]) d.box = Box{d.box.x1 * sx, d.box.y1 * sy, d.box.x2 * sx, d.box.y2 * sy};
      write_predictions(ctx.out / "predictions" / (fs::path(m.images[i].path).stem().string() + ".txt"), dets[i]);
    }
  } else {
    for (std::size_t i = 0; i < m.images.size(); ++i) {
      const fs::path f = fs::path(preds) / (fs::path(m.images[i].path).stem().string() + ".txt");
      if (fs::exists(f)) dets[i] = read_predictions(f);
      for (const Detection& d : dets[i])
        if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= K)
          throw DataError(f.string() + ": class " + std::to_string(d.class_id) + " outside the dataset's " +
                          std::to_string(K) + " classes");
    }
  }

  const EvalReport report = map_suite(dets, pixel_ground_truths(m), K, opt);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_to_json(report, m.class_names).dump());
  write_json(ctx.out / "report.json", j);
  const std::string table = report_table(report, m.class_names);
  write_text(ctx.out / "report.txt", table);
  std::fputs(table.c_str(), stdout);
  return 0;
}

// ------------------------------------------------------------------ enhance

int run_enhance(Settings& s, const RunContext& ctx) {
  const fs::path input = required(s, "enhance.input");
  PgfeConfig cfg;
  cfg.channels = s.count("enhance.channels");
  cfg.split = 1;
  cfg.inn_blocks = 0;
  cfg.stages = s.count("enhance.stages");
  cfg.gamma = s.real("enhance.gamma");
  cfg.delta = s.real("enhance.delta");
  cfg.blur_ksize = s.count("enhance.blur_ksize");
  cfg.blur_sigma = s.real("enhance.blur_sigma");
  const PgfeParams p = make_preview_pgfe(cfg);
  const Tensor img = load_image(input);
  const std::string out_name = input.stem().string() + ".png";
  prepare_out(ctx, {out_name.c_str(), "run.json"});
  write_run_json(s, ctx);
  const std::size_t H = img.dim(1), W = img.dim(2);
  Tensor out;
  {
    NoGradGuard no_grad;
    out = reshape(enhance_preview(reshape(img, {1, 3, H, W}), p), {3, H, W});
  }
  save_png(ctx.out / out_name, out);
  std::printf("enhanced %s (%zux%zu) -> %s\n", input.string().c_str(), W, H,
              (ctx.out / out_name).string().c_str());
  return 0;
}

// ------------------------------------------------------------------ stats

int run_stats(Settings& s, const RunContext& ctx) {
  const fs::path data = required(s, "stats.data");
  const DatasetManifest m = load_dataset(data);
  const AnchorStats a = anchor_stats(m, s.real("stats.bin_px"), s.count("stats.bins"));
  prepare_out(ctx, {"anchors.json", "anchors.csv", "run.json"});
  write_run_json(s, ctx);
  nlohmann::ordered_json j;
  j["images"] = m.images.size();
  j["instances"] = a.count;
  j["mean_w"] = a.mean_w;
  j["mean_h"] = a.mean_h;
  j["bin_px"] = a.bin_px;
  j["bins"] = a.bins;
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < m.class_names.size(); ++k) classes[m.class_names[k]] = m.class_counts[k];
  j["class_counts"] = classes;
  j["malformed_lines"] = m.malformed_lines;
  j["missing_label_files"] = m.missing_label_files;
  write_json(ctx.out / "anchors.json", j);
  std::ofstream csv(ctx.out / "anchors.csv", std::ios::binary);
  write_anchor_csv(csv, a);
  std::printf("%zu instances in %zu images, mean size %.2f x %.2f px\n", a.count, m.images.size(), a.mean_w, a.mean_h);
  return 0;
}

// ------------------------------------------------------------------ gradcheck

int run_gradcheck(Settings& s, const RunContext& ctx) {
  const double tol = s.real("gradcheck.tol");
  const auto results = run_grad_suite(s.str("gradcheck.scope"), s.count("gradcheck.seeds"));
  if (!ctx.out.empty()) {
    prepare_out(ctx, {"gradcheck.json", "run.json"});
    write_run_json(s, ctx);
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (const auto& r : results) {
    const std::string key = r.module + "/" + r.op;
    if (!worst.count(key)) order.push_back(key);
    worst[key] = std::max(worst[key], r.max_rel_error);
    rows.push_back({{"module", r.module}, {"op", r.op}, {"seed", r.seed}, {"max_rel_error", r.max_rel_error},
                    {"coords", r.coords}, {"kinks", r.kinks}});
  }
  bool ok = true;
  for (const std::string& key : order) {
    const bool pass = worst[key] <= tol;
    ok = ok && pass;
    std::printf("%-32s max rel error %.3e  %s\n", key.c_str(), worst[key], pass ? "ok" : "FAIL");
  }
  if (!ctx.out.empty()) {
    nlohmann::ordered_json j;
    j["tolerance"] = tol;
    j["passed"] = ok;
    j["checks"] = rows;
    write_json(ctx.out / "gradcheck.json", j);
  }
  if (!ok) std::fprintf(stderr, "gradient check exceeded tolerance %.1e\n", tol);
  return ok ? 0 : 3;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth", "train", "eval", "enhance", "stats", "gradcheck"};
  return names;
}

Settings make_settings(const std::string& command) {
  std::vector<SettingSpec> specs;
  if (command == "synth") {
    specs = {{"seed", "0", "master seed"},
             {"synth.n", "8", "number of scenes"},
             {"synth.size", "160", "square image size in pixels"},
             {"synth.max_signs", "4", "signs per scene, at most"},
             {"synth.min_sign_px", "12", "smallest sign width"},
             {"synth.max_sign_px", "60", "largest sign width"},
             {"synth.distractors", "6", "non-sign clutter objects per scene"},
             {"synth.profile", "night", "degradation profile: none, mild, night, severe"}};
  } else if (command == "train") {
    specs = {{"seed", "0", "initialization and shuffling seed"},
             {"train.data", "", "training dataset root"},
             {"train.val", "", "evaluation dataset root (default: the training set)"},
             {"train.epochs", "100", ""},
             {"train.batch_size", "8", ""},
             {"train.lr", "0.01", ""},
             {"train.lr_final_ratio", "0.01", "cosine schedule floor as a fraction of lr"},
             {"train.momentum", "0.937", ""},
             {"train.grad_clip", "10", "global gradient norm cap"},
             {"train.max_steps", "0", "0 = no cap"},
             {"train.target_map50", "0", "stop once eval mAP50 reaches this (0 = never)"},
             {"train.eval_every", "1", "epochs between evaluations (0 = never)"},
             {"model.preset", "desk", "desk or full; unset model keys come from it"}};
    for (const char* k : kModelKeys) specs.push_back({std::string("model.") + k, "", ""});
  } else if (command == "eval") {
    specs = {{"eval.data", "", "dataset root with ground truth"},
             {"eval.checkpoint", "", "model to run"},
             {"eval.predictions", "", "directory of <image stem>.txt prediction files instead of a model"},
             {"eval.conf", "0.25", "confidence threshold for precision/recall/F1"},
             {"eval.iou", "0.5", "IoU threshold for precision/recall/F1"},
             {"eval.max_det", "100", "detections kept per image"},
             {"eval.batch_size", "8", ""}};
  } else if (command == "enhance") {
    specs = {{"enhance.input", "", "PNG or JPEG image"},
             {"enhance.channels", "3", "feature channels of the preview stem"},
             {"enhance.stages", "1", "residual stages"},
             {"enhance.gamma", "2", "contrast gain about the channel mean"},
             {"enhance.delta", "2.5", "edge gain"},
             {"enhance.blur_ksize", "5", ""},
             {"enhance.blur_sigma", "1", ""}};
  } else if (command == "stats") {
    specs = {{"stats.data", "", "dataset root"}, {"stats.bin_px", "8", ""}, {"stats.bins", "16", ""}};
  } else if (command == "gradcheck") {
    specs = {{"gradcheck.scope", "all", "all, tensorops, pgfe, mfia or detector"},
             {"gradcheck.seeds", "3", ""},
             {"gradcheck.tol", "1e-4", "maximum relative error"}};
  } else {
    throw UsageError("unknown command '" + command + "'");
  }
  return Settings(command, std::move(specs));
}

int run_command(Settings& s, const RunContext& ctx) {
  const std::string& c = s.command();
  if (c == "synth") return run_synth(s, ctx);
  if (c == "train") return run_train(s, ctx);
  if (c == "eval") return run_eval(s, ctx);
  if (c == "enhance") return run_enhance(s, ctx);
  if (c == "stats") return run_stats(s, ctx);
  return run_gradcheck(s, ctx);
}

}  // namespace llts::cli
