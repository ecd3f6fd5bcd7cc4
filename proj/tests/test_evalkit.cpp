#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "eval_oracle.hpp"
#include "llts/errors.hpp"
#include "llts/evalkit.hpp"

using namespace llts;

namespace {
Detection det(int c, double conf, Box b) { return Detection{c, conf, b}; }
GroundTruth gt(int c, Box b) { return GroundTruth{c, b}; }
}  // namespace

TEST_CASE("iou spot values") {
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 0, 3, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(iou({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);  // touching edges
  const std::size_t before = degenerate_iou_count();
  CHECK(iou({1, 1, 1, 3}, {0, 0, 2, 2}) == 0.0);
  CHECK(degenerate_iou_count() == before + 1);
}

TEST_CASE("iou matches oracle and is symmetric and scale invariant") {
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    Box a{rng.uniform(0, 10), rng.uniform(0, 10), 0, 0}, b{rng.uniform(0, 10), rng.uniform(0, 10), 0, 0};
    a.x2 = a.x1 + rng.uniform(0.1, 5);
    a.y2 = a.y1 + rng.uniform(0.1, 5);
    b.x2 = b.x1 + rng.uniform(0.1, 5);
    b.y2 = b.y1 + rng.uniform(0.1, 5);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::fabs(v - iou(b, a)) < 1e-15);
    CHECK(std::fabs(v - oracle::box_iou(a, b)) < 1e-15);
    const double s = rng.uniform(0.01, 100);
    Box as{a.x1 * s, a.y1 * s, a.x2 * s, a.y2 * s}, bs{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
    CHECK(std::fabs(iou(as, bs) - v) < 1e-12);
  }
}

TEST_SUITE("match_detections") {
  TEST_CASE("single exact detection") {
    std::vector<Detection> d{det(0, 0.9, {0, 0, 10, 10})};
    std::vector<GroundTruth> g{gt(0, {0, 0, 10, 10})};
    MatchOutcome m = match_detections(d, g, 0.5, 0);
    CHECK(m.tp == 1);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
    CHECK(m.det_gt[0] == 0);
    CHECK(m.det_iou[0] == 1.0);
  }

  TEST_CASE("two detections on one GT") {
    std::vector<Detection> d{det(0, 0.6, {0, 0, 10, 10}), det(0, 0.9, {0, 0, 10, 9})};
    std::vector<GroundTruth> g{gt(0, {0, 0, 10, 10})};
    MatchOutcome m = match_detections(d, g, 0.5, 0);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.det_is_tp[1]);  // higher confidence claims first
    CHECK_FALSE(m.det_is_tp[0]);
  }

  TEST_CASE("other classes are ignored") {
    std::vector<Detection> d{det(1, 0.9, {0, 0, 10, 10})};
    std::vector<GroundTruth> g{gt(0, {0, 0, 10, 10})};
    MatchOutcome m = match_detections(d, g, 0.5, 0);
    CHECK(m.det_is_tp.empty());
    CHECK(m.fn == 1);
  }

  TEST_CASE("random cases agree with oracle and respect count invariants") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      auto in = oracle::random_instance(seed, 1);
      for (int c = 0; c < in.num_classes; ++c)
        for (double thr : {0.3, 0.5, 0.75}) {
          MatchOutcome m = match_detections(in.dets[0], in.gts[0], thr, c);
          auto o = oracle::match_image(in.dets[0], in.gts[0], thr, c);
          CHECK(m.det_is_tp == o.tp);
          CHECK(m.tp <= std::min(m.det_is_tp.size(), m.gt_matched.size()));
          CHECK(m.fn == m.gt_matched.size() - m.tp);
          std::vector<long> used;
          for (long gi : m.det_gt)
            if (gi >= 0) used.push_back(gi);
          std::sort(used.begin(), used.end());
          CHECK(std::adjacent_find(used.begin(), used.end()) == used.end());
        }
    }
  }
}

TEST_CASE("precision recall f1 arithmetic") {
  auto a = precision_recall_f1({8, 2, 2});
  CHECK(a.precision == 0.8);
  CHECK(a.recall == 0.8);
  CHECK(std::fabs(a.f1 - 0.8) < 1e-15);
  auto b = precision_recall_f1({0, 0, 5});
  CHECK(b.precision == 0.0);
  CHECK(b.recall == 0.0);
  CHECK(b.f1 == 0.0);
  auto c = precision_recall_f1({1, 1, 1});
  CHECK(c.precision == 0.5);
  CHECK(c.recall == 0.5);
  CHECK(c.f1 == 0.5);
}

TEST_SUITE("average_precision") {
  TEST_CASE("perfect ranking gives one, misses give zero") {
    ImageDetections d{{det(0, 0.9, {0, 0, 4, 4}), det(0, 0.8, {10, 10, 14, 14}), det(0, 0.1, {30, 30, 31, 31})}};
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4}), gt(0, {10, 10, 14, 14})}};
    CHECK(*average_precision(d, g, 0.5, 0) == 1.0);
    ImageDetections miss{{det(0, 0.9, {50, 50, 54, 54})}};
    CHECK(*average_precision(miss, g, 0.5, 0) == 0.0);
  }

  TEST_CASE("absent class and detections without GT") {
    ImageDetections none{{}};
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4})}};
    CHECK_FALSE(average_precision(none, g, 0.5, 1).has_value());
    ImageDetections stray{{det(1, 0.5, {0, 0, 4, 4})}};
    CHECK(*average_precision(stray, g, 0.5, 1) == 0.0);
  }

  TEST_CASE("hand-computed mixed ranking") {
    // Ranked: TP, FP, TP, FP, TP over 3 GTs.
    // Precision envelope: r<=1/3 -> 1, r<=2/3 -> 2/3, r<=1 -> 3/5.
    ImageDetections d{{det(0, 0.9, {0, 0, 4, 4}), det(0, 0.8, {40, 40, 44, 44}), det(0, 0.7, {10, 0, 14, 4}),
                       det(0, 0.6, {60, 60, 64, 64}), det(0, 0.5, {20, 0, 24, 4})}};
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4}), gt(0, {10, 0, 14, 4}), gt(0, {20, 0, 24, 4})}};
    // Recall levels 0..33 -> 34 points at 1, 34..66 -> 33 points at 2/3, 67..100 -> 34 at 3/5.
    const double expected = (34 * 1.0 + 33 * (2.0 / 3.0) + 34 * 0.6) / 101.0;
    CHECK(std::fabs(*average_precision(d, g, 0.5, 0) - expected) < 1e-12);
    CHECK(std::fabs(*oracle::ap(d, g, 0.5, 0) - expected) < 1e-12);
  }

  TEST_CASE("raising TP confidence never lowers AP") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto in = oracle::random_instance(seed, 1);
      const int c = 0;
      auto base = average_precision(in.dets, in.gts, 0.5, c);
      if (!base) continue;
      MatchOutcome m = match_detections(in.dets[0], in.gts[0], 0.5, c);
      // Boost every TP above all current confidences, keeping TP order.
      auto boosted = in.dets;
      std::size_t k = 0;
      for (Detection& d : boosted[0])
        if (d.class_id == c) {
          if (m.det_is_tp[k]) d.confidence += 10.0;
          ++k;
        }
      CHECK(*average_precision(boosted, in.gts, 0.5, c) >= *base - 1e-12);
    }
  }

  TEST_CASE("duplicate of a matched GT never raises AP") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto in = oracle::random_instance(seed, 1);
      MatchOutcome m = match_detections(in.dets[0], in.gts[0], 0.5, 0);
      auto base = average_precision(in.dets, in.gts, 0.5, 0);
      if (!base || m.tp == 0) continue;
      std::size_t k = 0;
      Detection dup;
      long claimed = -1;
      for (const Detection& d : in.dets[0])
        if (d.class_id == 0) {
          if (m.det_is_tp[k]) {
            dup = d;
            claimed = m.det_gt[k];
            break;
          }
          ++k;
        }
      // The copy must not qualify for any other GT, otherwise it is a new TP.
      bool only_claimed = true;
      long slot = 0;
      for (const GroundTruth& g : in.gts[0])
        if (g.class_id == 0) {
          if (slot != claimed && iou(dup.box, g.box) >= 0.5) only_claimed = false;
          ++slot;
        }
      if (!only_claimed) continue;
      auto more = in.dets;
      more[0].push_back(dup);
      CHECK(*average_precision(more, in.gts, 0.5, 0) <= *base + 1e-12);
    }
  }
}

TEST_SUITE("map_suite") {
  TEST_CASE("perfect detector scores one everywhere") {
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4}), gt(1, {5, 5, 9, 9})}, {gt(2, {1, 1, 3, 3})}};
    ImageDetections d(2);
    for (std::size_t i = 0; i < 2; ++i)
      for (const auto& t : g[i]) d[i].push_back(det(t.class_id, 0.9, t.box));
    EvalReport r = map_suite(d, g, 3);
    CHECK(r.map50 == 1.0);
    CHECK(r.map50_95 == 1.0);
    CHECK(r.prf.precision == 1.0);
    CHECK(r.prf.recall == 1.0);
    CHECK(r.prf.f1 == 1.0);
  }

  TEST_CASE("empty predictions give zeros") {
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4})}};
    EvalReport r = map_suite(ImageDetections(1), g, 2);
    CHECK(r.map50 == 0.0);
    CHECK(r.prf.precision == 0.0);
    CHECK(r.prf.recall == 0.0);
    CHECK(r.prf.f1 == 0.0);
    CHECK_FALSE(r.ap[1][0].has_value());
  }

  TEST_CASE("IoU-insensitive case makes all thresholds equal") {
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4}), gt(0, {10, 0, 14, 4})}};
    ImageDetections d{{det(0, 0.9, {0, 0, 4, 4}), det(0, 0.8, {30, 0, 34, 4})}};
    EvalReport r = map_suite(d, g, 1);
    for (double v : r.map_at) CHECK(v == r.map_at[0]);
    CHECK(std::fabs(r.map50_95 - r.map50) < 1e-12);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(map_suite(ImageDetections(1), ImageGroundTruths(1), 2), DataError);
    CHECK_THROWS_AS(map_suite(ImageDetections(2), ImageGroundTruths(1), 2), DataError);
  }

  TEST_CASE("random instances agree with the brute-force pipeline") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto in = oracle::random_instance(seed + 1000);
      EvalReport r = map_suite(in.dets, in.gts, static_cast<std::size_t>(in.num_classes));
      auto o = oracle::suite(in.dets, in.gts, in.num_classes);
      CHECK(std::fabs(r.map50 - o.map50) < 1e-9);
      CHECK(std::fabs(r.map50_95 - o.map50_95) < 1e-9);
      CHECK(std::fabs(r.prf.precision - o.precision) < 1e-12);
      CHECK(std::fabs(r.prf.recall - o.recall) < 1e-12);
      CHECK(std::fabs(r.prf.f1 - o.f1) < 1e-12);
      double acc = 0;
      for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
        double s = 0;
        int present = 0;
        for (const auto& row : r.ap)
          if (row[t]) {
            s += *row[t];
            ++present;
          }
        CHECK(std::fabs(r.map_at[t] - (present ? s / present : 0.0)) < 1e-12);
        acc += r.map_at[t];
        for (double v : {r.map_at[t]}) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
      }
      CHECK(std::fabs(r.map50_95 - acc / 10.0) < 1e-12);
    }
  }

  TEST_CASE("scaling every coordinate leaves all metrics unchanged") {
    // Power-of-two factors keep the many exact-threshold IoUs of the grid
    // instances bit-identical; arbitrary factors are covered at the IoU level.
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto in = oracle::random_instance(seed + 5000);
      auto scaled = in;
      const double s = seed % 2 ? 4.0 : 0.125;
      for (auto& img : scaled.dets)
        for (auto& d : img) d.box = {d.box.x1 * s, d.box.y1 * s, d.box.x2 * s, d.box.y2 * s};
      for (auto& img : scaled.gts)
        for (auto& g : img) g.box = {g.box.x1 * s, g.box.y1 * s, g.box.x2 * s, g.box.y2 * s};
      const auto n = static_cast<std::size_t>(in.num_classes);
      EvalReport a = map_suite(in.dets, in.gts, n), b = map_suite(scaled.dets, scaled.gts, n);
      CHECK(std::fabs(a.map50 - b.map50) < 1e-12);
      CHECK(std::fabs(a.map50_95 - b.map50_95) < 1e-12);
      CHECK(std::fabs(a.prf.f1 - b.prf.f1) < 1e-12);
    }
  }

  TEST_CASE("json and table report the operating point") {
    ImageGroundTruths g{{gt(0, {0, 0, 4, 4})}};
    ImageDetections d{{det(0, 0.9, {0, 0, 4, 4})}};
    EvalReport r = map_suite(d, g, 2);
    auto j = report_to_json(r, {"prohibitory", "mandatory"});
    CHECK(j["map50"].get<double>() == 1.0);
    CHECK(j["operating_point"]["conf_threshold"].get<double>() == 0.25);
    CHECK(j["classes"][1]["ap"][0].is_null());
    const std::string t = report_table(r, {"prohibitory", "mandatory"});
    CHECK(t.find("conf >= 0.25") != std::string::npos);
    CHECK(t.find("prohibitory") != std::string::npos);
  }
}

TEST_CASE("prediction file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "llts_pred_roundtrip.txt";
  std::vector<Detection> d{det(2, 0.123456789012345, {1.5, 2.25, 10.125, 20.0625}), det(0, 1.0, {0, 0, 1, 1})};
  write_predictions(path, d);
  auto back = read_predictions(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].class_id == 2);
  CHECK(back[0].confidence == d[0].confidence);
  CHECK(back[0].box.x2 == d[0].box.x2);
  std::filesystem::remove(path);
}
