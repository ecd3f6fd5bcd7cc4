#include <algorithm>
#include <atomic>
#include <numeric>

#include "llts/errors.hpp"
#include "llts/evalkit.hpp"

namespace llts {

namespace {
std::atomic<std::size_t> g_degenerate_iou{0};

std::vector<std::size_t> rank_by_confidence(std::span<const Detection> dets, std::span<const std::size_t> idx) {
  std::vector<std::size_t> order(idx.begin(), idx.end());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}
}  // namespace

double iou(const Box& a, const Box& b) {
  const double aa = a.area(), ab = b.area();
  if (aa <= 0.0 || ab <= 0.0) {
    g_degenerate_iou.fetch_add(1, std::memory_order_relaxed);
    return 0.0;
  }
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (aa + ab - inter);
}

std::size_t degenerate_iou_count() { return g_degenerate_iou.load(std::memory_order_relaxed); }

MatchOutcome match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                              double iou_thresh, int class_id) {
  std::vector<std::size_t> di, gi;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id) di.push_back(i);
  for (std::size_t j = 0; j < gts.size(); ++j)
    if (gts[j].class_id == class_id) gi.push_back(j);

  MatchOutcome m;
  m.det_is_tp.assign(di.size(), false);
  m.det_gt.assign(di.size(), -1);
  m.det_iou.assign(di.size(), 0.0);
  m.gt_matched.assign(gi.size(), false);

  // Position of each original detection index within the filtered slice.
  std::vector<std::size_t> slot(dets.size());
  for (std::size_t k = 0; k < di.size(); ++k) slot[di[k]] = k;

  for (std::size_t d : rank_by_confidence(dets, di)) {
    long best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gi.size(); ++g) {
      if (m.gt_matched[g]) continue;
      const double v = iou(dets[d].box, gts[gi[g]].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<long>(g);
        best_iou = v;
      }
    }
    const std::size_t k = slot[d];
    if (best >= 0) {
      m.gt_matched[static_cast<std::size_t>(best)] = true;
      m.det_is_tp[k] = true;
      m.det_gt[k] = best;
      m.det_iou[k] = best_iou;
      ++m.tp;
    } else {
      ++m.fp;
    }
  }
  m.fn = gi.size() - m.tp;
  return m;
}

PrecisionRecall precision_recall_f1(const Counts& c) {
  PrecisionRecall r;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) r.precision = tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = tp / static_cast<double>(c.tp + c.fn);
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

std::optional<double> average_precision(const ImageDetections& dets, const ImageGroundTruths& gts,
                                        double iou_thresh, int class_id) {
  if (dets.size() != gts.size())
    throw DataError("average_precision: " + std::to_string(dets.size()) + " detection lists for " +
                    std::to_string(gts.size()) + " images");
  struct Ranked {
    double confidence;
    bool tp;
  };
  std::vector<Ranked> ranked;
  std::size_t n_gt = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    MatchOutcome m = match_detections(dets[i], gts[i], iou_thresh, class_id);
    n_gt += m.gt_matched.size();
    std::size_t k = 0;
    for (const Detection& d : dets[i])
      if (d.class_id == class_id) ranked.push_back({d.confidence, m.det_is_tp[k++]});
  }
  if (n_gt == 0) return ranked.empty() ? std::nullopt : std::optional<double>(0.0);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

  const std::size_t n = ranked.size();
  std::vector<std::size_t> cum_tp(n);
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += ranked[k].tp ? 1 : 0;
    cum_tp[k] = tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);

  // Recall r_k = k/100 is reached once cum_tp * 100 >= k * n_gt (exact integers).
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t level = 0; level <= 100; ++level) {
    while (pos < n && cum_tp[pos] * 100 < level * n_gt) ++pos;
    if (pos < n) total += precision[pos];
  }
  return total / 101.0;
}

std::array<double, kNumIouThresholds> iou_thresholds() {
  std::array<double, kNumIouThresholds> t{};
  for (std::size_t k = 0; k < kNumIouThresholds; ++k) t[k] = static_cast<double>(50 + 5 * k) / 100.0;
  return t;
}

EvalReport map_suite(const ImageDetections& dets, const ImageGroundTruths& gts, std::size_t num_classes,
                     const EvalOptions& options) {
  if (dets.size() != gts.size())
    throw DataError("map_suite: " + std::to_string(dets.size()) + " detection lists for " +
                    std::to_string(gts.size()) + " images");
  EvalReport r;
  r.num_classes = num_classes;
  r.options = options;
  r.thresholds = iou_thresholds();
  r.ap.assign(num_classes, {});
  r.gt_count.assign(num_classes, 0);
  r.det_count.assign(num_classes, 0);

  std::size_t total_gt = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (const GroundTruth& g : gts[i]) {
      if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= num_classes)
        throw DataError("map_suite: ground-truth class " + std::to_string(g.class_id) + " outside 0.." +
                        std::to_string(num_classes - 1));
      ++r.gt_count[static_cast<std::size_t>(g.class_id)];
      ++total_gt;
    }
    for (const Detection& d : dets[i])
      if (d.class_id >= 0 && static_cast<std::size_t>(d.class_id) < num_classes)
        ++r.det_count[static_cast<std::size_t>(d.class_id)];
  }
  if (total_gt == 0) throw DataError("map_suite: no ground-truth boxes in the evaluation set");

  for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      r.ap[c][t] = average_precision(dets, gts, r.thresholds[t], static_cast<int>(c));
      if (r.ap[c][t]) {
        sum += *r.ap[c][t];
        ++present;
      }
    }
    r.map_at[t] = present ? sum / static_cast<double>(present) : 0.0;
  }
  r.map50 = r.map_at[0];
  r.map50_95 = std::accumulate(r.map_at.begin(), r.map_at.end(), 0.0) / static_cast<double>(kNumIouThresholds);

  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::vector<Detection> kept;
    for (const Detection& d : dets[i])
      if (d.confidence >= options.conf_threshold) kept.push_back(d);
    for (std::size_t c = 0; c < num_classes; ++c) {
      MatchOutcome m = match_detections(kept, gts[i], options.iou_threshold, static_cast<int>(c));
      r.counts.tp += m.tp;
      r.counts.fp += m.fp;
      r.counts.fn += m.fn;
    }
  }
  r.prf = precision_recall_f1(r.counts);
  return r;
}

}  // namespace llts
