#pragma once

// Detection post-processing and metrology: NMS, greedy IoU matching,
// miss-rate / FPPI operating curves, nine-point log-average MR, and AP.

#include <optional>
#include <string>
#include <vector>

#include "itmn/anchors.hpp"

namespace itmn {

struct Detection {
  Box box;            // normalized corners
  double confidence;  // in [0,1]; the normative sort key
  int label = 1;
};

struct MatchCounts {
  int tp = 0, fp = 0, fn = 0;
};

struct OperatingPoint {
  double threshold;
  double fppi;
  double miss_rate;
  double precision;
  double recall;
  MatchCounts counts;
};

struct EvalCurve {
  std::vector<OperatingPoint> points;  // sorted by threshold descending (FPPI ascending)
  int total_gts = 0;
  int num_images = 0;
};

enum class MrAveraging { log_mean, arith_mean };

// One image's detections and ground truths plus its day/night tag.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<Box> gts;
  bool day = true;
};

// Greedy suppression: keep highest confidence, drop overlaps above the
// threshold. Ties in confidence keep the earlier box-ordering index.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold = 0.45);

// Greedy-by-IoU assignment at IoU > 0.5: per ground truth the single
// highest-IoU detection is the TP; everything else is FP / FN.
MatchCounts match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts);

// MR = FN / (TP + FN); empty denominators are reported as nullopt.
std::optional<double> miss_rate(int tp, int fn);

// Threshold sweep over every distinct confidence value.
EvalCurve compute_curve(const std::vector<ImageEval>& images);

// Nine reference FPPI points 10^(-2 + 0.25 i), i = 0..8.
std::vector<double> reference_fppi_points();

double log_average_mr(const EvalCurve& curve, MrAveraging mode = MrAveraging::log_mean);

double average_precision(const EvalCurve& curve);

struct EvalReport {
  double mr_all = 1.0, mr_day = 1.0, mr_night = 1.0;
  double ap_all = 0.0, ap_day = 0.0, ap_night = 0.0;
  MatchCounts sweep_counts_all, sweep_counts_day, sweep_counts_night;  // at the lowest threshold
  EvalCurve curve_all;
  std::string to_text() const;  // key: value lines mirroring the result-table columns
};

EvalReport evaluate_images(const std::vector<ImageEval>& images, MrAveraging mode = MrAveraging::log_mean);

// Plot-ready CSV (threshold,fppi,miss_rate) restricted to FPPI in [0.001, 1].
std::string curve_to_csv(const EvalCurve& curve);

}  // namespace itmn
