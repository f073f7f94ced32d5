#include "doctest.h"

#include <cmath>
#include <sstream>

#include "itmn/eval.hpp"

using namespace itmn;

namespace {

Box sq(double x, double y, double s = 0.1) { return {x, y, x + s, y + s}; }

// 5 disjoint ground truths, 10 detections with hand-audited outcomes.
ImageEval hand_instance() {
  ImageEval im;
  im.gts = {sq(0.0, 0.0), sq(0.2, 0.2), sq(0.4, 0.4), sq(0.6, 0.6), sq(0.8, 0.8)};
  im.dets = {
      {sq(0.0, 0.0), 0.95, 1},                    // TP on gt0
      {sq(0.2, 0.2), 0.90, 1},                    // TP on gt1
      {sq(0.0, 0.5), 0.85, 1},                    // FP, empty area
      {sq(0.4, 0.4), 0.80, 1},                    // TP on gt2
      {sq(0.0, 0.0), 0.75, 1},                    // FP, duplicate of gt0
      {sq(0.5, 0.0), 0.70, 1},                    // FP, empty area
      {sq(0.6, 0.6), 0.60, 1},                    // TP on gt3
      {{0.85, 0.8, 0.95, 0.9}, 0.50, 1},          // FP, IoU 1/3 with gt4
      {sq(0.8, 0.8), 0.40, 1},                    // TP on gt4
      {sq(0.4, 0.4), 0.30, 1},                    // FP, duplicate of gt2
  };
  return im;
}

}  // namespace

TEST_CASE("reference FPPI grid") {
  const auto pts = reference_fppi_points();
  REQUIRE(pts.size() == 9);
  for (int i = 0; i < 9; ++i) CHECK(std::abs(pts[i] - std::pow(10.0, -2.0 + 0.25 * i)) <= 1e-12);
}

TEST_CASE("hand instance: per-threshold counts match the audited table") {
  const ImageEval im = hand_instance();
  EvalCurve curve = compute_curve({im});
  REQUIRE(curve.points.size() == 10);
  // descending thresholds; tp/fp/fn audited by hand
  const int expect[10][3] = {{1, 0, 4}, {2, 0, 3}, {2, 1, 3}, {3, 1, 2}, {3, 2, 2},
                             {3, 3, 2}, {4, 3, 1}, {4, 4, 1}, {5, 4, 0}, {5, 5, 0}};
  for (int i = 0; i < 10; ++i) {
    CHECK(curve.points[i].counts.tp == expect[i][0]);
    CHECK(curve.points[i].counts.fp == expect[i][1]);
    CHECK(curve.points[i].counts.fn == expect[i][2]);
    CHECK(curve.points[i].miss_rate == doctest::Approx(expect[i][2] / 5.0).epsilon(1e-12));
    CHECK(curve.points[i].fppi == doctest::Approx(static_cast<double>(expect[i][1])).epsilon(1e-12));
  }
}

TEST_CASE("hand instance: AP equals the audited all-point value") {
  EvalCurve curve = compute_curve({hand_instance()});
  // envelope sum worked out by hand from the (recall, precision) table
  const double expect = 0.2 + 0.2 + 0.15 + 0.2 * (4.0 / 7.0) + 0.2 * (5.0 / 9.0);
  CHECK(average_precision(curve) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("hand instance: log-average MR both modes") {
  EvalCurve curve = compute_curve({hand_instance()});
  // one image: refs below 1 resolve to the best zero-FP point (MR 0.6),
  // the ref at 1.0 resolves to the best FPPI 1 point (MR 0.4)
  const double expect_log = std::exp((8 * std::log(0.6) + std::log(0.4)) / 9.0);
  CHECK(log_average_mr(curve, MrAveraging::log_mean) == doctest::Approx(expect_log).epsilon(1e-12));
  CHECK(log_average_mr(curve, MrAveraging::arith_mean) == doctest::Approx((8 * 0.6 + 0.4) / 9.0).epsilon(1e-12));
}

TEST_CASE("log-average MR on a crafted curve spanning decades") {
  EvalCurve curve;
  curve.num_images = 100;
  curve.total_gts = 10;
  const double fppis[5] = {0.005, 0.02, 0.09, 0.4, 2.0};
  const double mrs[5] = {0.9, 0.8, 0.6, 0.3, 0.1};
  for (int i = 0; i < 5; ++i) {
    OperatingPoint p{};
    p.threshold = 0.9 - 0.1 * i;
    p.fppi = fppis[i];
    p.miss_rate = mrs[i];
    curve.points.push_back(p);
  }
  // per-reference selection audited by hand
  const double picked[9] = {0.9, 0.9, 0.8, 0.8, 0.6, 0.6, 0.6, 0.3, 0.3};
  double lg = 0, ar = 0;
  for (double m : picked) {
    lg += std::log(m);
    ar += m;
  }
  CHECK(log_average_mr(curve, MrAveraging::log_mean) == doctest::Approx(std::exp(lg / 9)).epsilon(1e-12));
  CHECK(log_average_mr(curve, MrAveraging::arith_mean) == doctest::Approx(ar / 9).epsilon(1e-12));
}

TEST_CASE("references below the smallest FPPI fall back to MR 1") {
  EvalCurve curve;
  curve.num_images = 10;
  curve.total_gts = 5;
  OperatingPoint p{};
  p.threshold = 0.5;
  p.fppi = 0.05;
  p.miss_rate = 0.2;
  curve.points.push_back(p);
  // refs 0.01, 0.0178, 0.0316 have no point; six refs pick 0.2
  const double expect_log = std::exp((3 * std::log(1.0) + 6 * std::log(0.2)) / 9.0);
  CHECK(log_average_mr(curve, MrAveraging::log_mean) == doctest::Approx(expect_log).epsilon(1e-12));
  CHECK(log_average_mr(curve, MrAveraging::arith_mean) == doctest::Approx((3.0 + 6 * 0.2) / 9.0).epsilon(1e-12));
}

TEST_CASE("miss rate floor guards the log mean") {
  EvalCurve curve;
  curve.num_images = 10;
  curve.total_gts = 5;
  OperatingPoint p{};
  p.threshold = 0.5;
  p.fppi = 0.005;
  p.miss_rate = 0.0;
  curve.points.push_back(p);
  CHECK(log_average_mr(curve, MrAveraging::log_mean) == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("nms keeps the highest confidence of each overlap group") {
  std::vector<Detection> dets = {
      {sq(0.1, 0.1), 0.8, 1},
      {{0.11, 0.1, 0.21, 0.2}, 0.9, 1},   // overlaps first, higher conf
      {sq(0.5, 0.5), 0.7, 1},             // disjoint
      {{0.105, 0.1, 0.205, 0.2}, 0.6, 1}  // overlaps the winner
  };
  auto kept = nms(dets, 0.45);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].confidence == 0.9);
  CHECK(kept[1].confidence == 0.7);
  // different labels never suppress each other
  dets[0].label = 2;
  auto kept2 = nms(dets, 0.45);
  CHECK(kept2.size() == 3);
}

TEST_CASE("greedy matching prefers the highest IoU pair") {
  // one gt, two candidate dets: the closer one wins regardless of order
  std::vector<Box> gts = {sq(0.0, 0.0, 0.2)};
  std::vector<Detection> dets = {
      {{0.02, 0.0, 0.22, 0.2}, 0.5, 1},  // IoU ~0.82
      {{0.0, 0.0, 0.2, 0.2}, 0.5, 1},    // IoU 1.0
  };
  MatchCounts c = match_detections(dets, gts);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 0);
}

TEST_CASE("split additivity of sweep counts") {
  ImageEval day = hand_instance();
  day.day = true;
  ImageEval night = hand_instance();
  night.day = false;
  night.dets.resize(4);  // different detector behaviour at night
  EvalReport all = evaluate_images({day, night});
  CHECK(all.sweep_counts_all.tp == all.sweep_counts_day.tp + all.sweep_counts_night.tp);
  CHECK(all.sweep_counts_all.fn == all.sweep_counts_day.fn + all.sweep_counts_night.fn);
  const std::string text = all.to_text();
  CHECK(text.find("MR(all):") != std::string::npos);
  CHECK(text.find("AP(night):") != std::string::npos);
}

TEST_CASE("curve CSV is clipped to FPPI [0.001, 1] and sorted ascending") {
  EvalCurve curve;
  curve.num_images = 1000;
  curve.total_gts = 10;
  const double fppis[4] = {0.0001, 0.05, 0.5, 3.0};
  for (int i = 0; i < 4; ++i) {
    OperatingPoint p{};
    p.threshold = 0.9 - 0.2 * i;
    p.fppi = fppis[i];
    p.miss_rate = 0.5;
    curve.points.push_back(p);
  }
  std::istringstream is(curve_to_csv(curve));
  std::string line;
  std::getline(is, line);
  CHECK(line == "threshold,fppi,miss_rate");
  double prev = -1.0;
  int rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    double t, f, m;
    char c1, c2;
    std::istringstream ls(line);
    ls >> t >> c1 >> f >> c2 >> m;
    CHECK(f >= 0.001);
    CHECK(f <= 1.0);
    CHECK(f > prev);
    prev = f;
    ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("empty inputs are errors") {
  CHECK_THROWS_AS(compute_curve({}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_images({}), std::invalid_argument);
  CHECK(!miss_rate(0, 0).has_value());
  CHECK(miss_rate(3, 1).value() == doctest::Approx(0.25));
}
