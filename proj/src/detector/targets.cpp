#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "llts/detector.hpp"
#include "llts/errors.hpp"

namespace llts {

TargetMap assign_targets(std::span<const std::vector<LabelRecord>> labels, std::size_t grid, double stride) {
  if (grid == 0 || !(stride > 0)) throw UsageError("assign_targets needs a non-empty grid and positive stride");
  TargetMap t;
  t.batch = labels.size();
  t.grid = grid;
  t.stride = stride;
  t.cls.assign(t.batch * grid * grid, -1);
  t.box.assign(t.batch * grid * grid, Box{});
  const double size = static_cast<double>(grid) * stride;
  std::vector<double> area(grid * grid);
  for (std::size_t n = 0; n < t.batch; ++n) {
    std::fill(area.begin(), area.end(), 0.0);
    for (const LabelRecord& r : labels[n]) {
      const double w = r.w * size, h = r.h * size;
      if (w <= 1.0 || h <= 1.0) {
        ++t.skipped;
        continue;
      }
      const double cx = r.cx * size, cy = r.cy * size;
      const auto gx = std::min(grid - 1, static_cast<std::size_t>(std::max(0.0, std::floor(cx / stride))));
      const auto gy = std::min(grid - 1, static_cast<std::size_t>(std::max(0.0, std::floor(cy / stride))));
      const std::size_t cell = gy * grid + gx, k = n * grid * grid + cell;
      if (t.cls[k] >= 0 && area[cell] <= w * h) continue;
      if (t.cls[k] < 0) ++t.positives;
      t.cls[k] = r.class_id;
      t.box[k] = Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      area[cell] = w * h;
    }
  }
  return t;
}

namespace {

double bce_with_logits(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z))); }

double sigmoid_of(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// IoU of the box decoded from (l, t, r, b) at cell centre (cx, cy) with the
// GT, and its gradient with respect to the four distances.
double iou_with_grad(const double d[4], double cx, double cy, double s, const Box& g, double grad[4]) {
  const double x1 = cx - d[0] * s, y1 = cy - d[1] * s, x2 = cx + d[2] * s, y2 = cy + d[3] * s;
  const double iw = std::min(x2, g.x2) - std::max(x1, g.x1);
  const double ih = std::min(y2, g.y2) - std::max(y1, g.y1);
  std::fill(grad, grad + 4, 0.0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double ap = (x2 - x1) * (y2 - y1), ag = g.area();
  const double inter = iw * ih, uni = ap + ag - inter;
  // d(iw)/d(l) = s while x1 is the binding left edge, and so on.
  const double diw[4] = {x1 > g.x1 ? s : 0.0, 0.0, x2 < g.x2 ? s : 0.0, 0.0};
  const double dih[4] = {0.0, y1 > g.y1 ? s : 0.0, 0.0, y2 < g.y2 ? s : 0.0};
  const double dap[4] = {s * (y2 - y1), s * (x2 - x1), s * (y2 - y1), s * (x2 - x1)};
  for (int k = 0; k < 4; ++k) {
    const double di = diw[k] * ih + dih[k] * iw;
    grad[k] = (di * (uni + inter) - inter * dap[k]) / (uni * uni);
  }
  return inter / uni;
}

}  // namespace

LossResult detection_loss(const Tensor& raw, const TargetMap& t) {
  if (raw.rank() != 4 || raw.dim(0) != t.batch || raw.dim(2) != t.grid || raw.dim(3) != t.grid || raw.dim(1) < 5)
    throw ShapeError("detection_loss: raw " + shape_str(raw.shape()) + " does not match targets for batch " +
                     std::to_string(t.batch) + " on a " + std::to_string(t.grid) + " grid");
  const std::size_t N = t.batch, C = raw.dim(1), K = C - 4, S = t.grid, SS = S * S;
  const auto z = raw.data();
  const double norm = std::max<double>(1.0, static_cast<double>(t.positives));

  double cls_sum = 0.0, box_sum = 0.0;
  std::vector<double> grad(z.size(), 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t cell = 0; cell < SS; ++cell) {
      const int target = t.cls[n * SS + cell];
      if (target >= static_cast<int>(K))
        throw ShapeError("detection_loss: target class " + std::to_string(target) + " but the head has " +
                         std::to_string(K) + " classes");
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t i = (n * C + 4 + k) * SS + cell;
        const double y = static_cast<int>(k) == target ? 1.0 : 0.0;
        cls_sum += bce_with_logits(z[i], y);
        grad[i] = (sigmoid_of(z[i]) - y) / norm;
      }
      if (target < 0) continue;
      const std::size_t gy = cell / S, gx = cell % S;
      const double cx = (static_cast<double>(gx) + 0.5) * t.stride, cy = (static_cast<double>(gy) + 0.5) * t.stride;
      double d[4], g[4];
      for (std::size_t k = 0; k < 4; ++k) d[k] = z[(n * C + k) * SS + cell];
      box_sum += 1.0 - iou_with_grad(d, cx, cy, t.stride, t.box[n * SS + cell], g);
      for (std::size_t k = 0; k < 4; ++k) grad[(n * C + k) * SS + cell] = -2.0 * g[k] / norm;
    }

  LossBreakdown parts;
  parts.normalizer = norm;
  parts.positives = t.positives;
  parts.cls_loss = cls_sum / norm;
  parts.box_loss = box_sum / norm;
  parts.total = parts.cls_loss + 2.0 * parts.box_loss;
  if (!std::isfinite(parts.total)) {
    std::size_t bad = 0;
    double peak = 0.0;
    for (double v : z) {
      if (!std::isfinite(v)) ++bad;
      else peak = std::max(peak, std::fabs(v));
    }
    std::ostringstream os;
    os << "detection_loss is not finite (batch " << N << ", positives " << t.positives << ", non-finite outputs "
       << bad << ", max |output| " << peak << ")";
    throw NumericError(os.str());
  }

  Tensor total = detail::make_result({1}, {parts.total}, {raw}, [grad = std::move(grad)](detail::Node& self) {
    auto& pg = self.parents[0]->grad_buffer();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += s * grad[i];
  });
  return {total, parts};
}

std::vector<std::vector<Detection>> decode_predictions(const Tensor& raw, double conf_threshold, double stride,
                                                       std::size_t max_per_image) {
  if (raw.rank() != 4 || raw.dim(1) < 5) throw ShapeError("decode_predictions: raw must be [N,4+K,S,S]");
  const std::size_t N = raw.dim(0), C = raw.dim(1), K = C - 4, H = raw.dim(2), W = raw.dim(3), HW = H * W;
  const double img_w = static_cast<double>(W) * stride, img_h = static_cast<double>(H) * stride;
  const auto z = raw.data();
  std::vector<std::vector<Detection>> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t cell = 0; cell < HW; ++cell) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (z[(n * C + 4 + k) * HW + cell] > z[(n * C + 4 + best) * HW + cell]) best = k;
      const double conf = sigmoid_of(z[(n * C + 4 + best) * HW + cell]);
      if (conf < conf_threshold) continue;
      const double cx = (static_cast<double>(cell % W) + 0.5) * stride;
      const double cy = (static_cast<double>(cell / W) + 0.5) * stride;
      Box b{cx - z[(n * C + 0) * HW + cell] * stride, cy - z[(n * C + 1) * HW + cell] * stride,
            cx + z[(n * C + 2) * HW + cell] * stride, cy + z[(n * C + 3) * HW + cell] * stride};
      b.x1 = std::clamp(b.x1, 0.0, img_w);
      b.x2 = std::clamp(b.x2, 0.0, img_w);
      b.y1 = std::clamp(b.y1, 0.0, img_h);
      b.y2 = std::clamp(b.y2, 0.0, img_h);
      if (!(b.x1 < b.x2 && b.y1 < b.y2)) continue;
      out[n].push_back({static_cast<int>(best), conf, b});
    }
    if (max_per_image > 0 && out[n].size() > max_per_image) {
      std::stable_sort(out[n].begin(), out[n].end(),
                       [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
      out[n].resize(max_per_image);
    }
  }
  return out;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.class_id == dets[i].class_id && iou(k.box, dets[i].box) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

Tensor stack_images(std::span<const ImageSample> samples) {
  if (samples.empty()) throw UsageError("cannot stack an empty batch");
  const Shape& s = samples[0].image.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("sample images must be [3,H,W], got " + shape_str(s));
  std::vector<double> v;
  v.reserve(samples.size() * shape_numel(s));
  for (const ImageSample& x : samples) {
    if (x.image.shape() != s)
      throw ShapeError("sample " + x.id + " has shape " + shape_str(x.image.shape()) + ", expected " + shape_str(s));
    v.insert(v.end(), x.image.data().begin(), x.image.data().end());
  }
  return Tensor({samples.size(), s[0], s[1], s[2]}, std::move(v));
}

std::vector<std::vector<Detection>> predict(const DetectorModel& m, std::span<const ImageSample> samples,
                                            double conf_threshold, double nms_iou, std::size_t max_per_image,
                                            std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<std::vector<Detection>> out;
  out.reserve(samples.size());
  const std::size_t bs = std::max<std::size_t>(1, batch_size);
  for (std::size_t i = 0; i < samples.size(); i += bs) {
    auto chunk = samples.subspan(i, std::min(bs, samples.size() - i));
    Tensor raw = model_forward(m, stack_images(chunk));
    for (auto& d : decode_predictions(raw, conf_threshold, kHeadStride)) {
      std::vector<Detection> kept = nms(d, nms_iou);
      if (max_per_image > 0 && kept.size() > max_per_image) kept.resize(max_per_image);
      out.push_back(std::move(kept));
    }
  }
  return out;
}

ImageGroundTruths ground_truths(std::span<const ImageSample> samples, std::size_t image_size) {
  const double S = static_cast<double>(image_size);
  ImageGroundTruths g(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const LabelRecord& r : samples[i].labels)
      g[i].push_back({r.class_id, Box{(r.cx - r.w / 2) * S, (r.cy - r.h / 2) * S, (r.cx + r.w / 2) * S,
                                      (r.cy + r.h / 2) * S}});
  return g;
}

EvalReport evaluate_model(const DetectorModel& m, std::span<const ImageSample> samples, const EvalOptions& opt,
                          std::size_t batch_size) {
  // A low decode threshold exposes the full ranking to AP; P/R/F1 apply
  // opt.conf_threshold inside map_suite.
  constexpr double kRankingFloor = 0.001;
  auto dets = predict(m, samples, kRankingFloor, m.cfg.nms_iou, 100, batch_size);
  return map_suite(dets, ground_truths(samples, m.cfg.input_size), m.cfg.num_classes, opt);
}

}  // namespace llts
