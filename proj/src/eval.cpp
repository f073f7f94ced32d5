#include "itmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace itmn {

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<Detection> kept;
  for (std::size_t oi : order) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.label == dets[oi].label && iou(k.box, dets[oi].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[oi]);
  }
  return kept;
}

MatchCounts match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts) {
  struct Pair {
    double iou;
    int det, gt;
  };
  std::vector<Pair> pairs;
  for (int d = 0; d < static_cast<int>(dets.size()); ++d)
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      const double v = iou(dets[d].box, gts[g]);
      if (v > 0.5) pairs.push_back({v, d, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.det != b.det) return a.det < b.det;
    return a.gt < b.gt;
  });
  std::vector<bool> det_used(dets.size(), false), gt_used(gts.size(), false);
  MatchCounts c;
  for (const auto& p : pairs) {
    if (det_used[p.det] || gt_used[p.gt]) continue;
    det_used[p.det] = true;
    gt_used[p.gt] = true;
    ++c.tp;
  }
  c.fp = static_cast<int>(dets.size()) - c.tp;
  c.fn = static_cast<int>(gts.size()) - c.tp;
  return c;
}

std::optional<double> miss_rate(int tp, int fn) {
  if (tp + fn <= 0) return std::nullopt;
  return static_cast<double>(fn) / (tp + fn);
}

EvalCurve compute_curve(const std::vector<ImageEval>& images) {
  EvalCurve curve;
  curve.num_images = static_cast<int>(images.size());
  for (const auto& im : images) curve.total_gts += static_cast<int>(im.gts.size());
  if (images.empty()) throw std::invalid_argument("compute_curve: empty image set");

  std::set<double, std::greater<double>> thresholds;
  for (const auto& im : images)
    for (const auto& d : im.dets) thresholds.insert(d.confidence);
  if (thresholds.empty()) thresholds.insert(1.0);  // degenerate: no detections at all

  for (double t : thresholds) {
    MatchCounts total;
    for (const auto& im : images) {
      std::vector<Detection> active;
      for (const auto& d : im.dets)
        if (d.confidence >= t) active.push_back(d);
      const MatchCounts c = match_detections(active, im.gts);
      total.tp += c.tp;
      total.fp += c.fp;
      total.fn += c.fn;
    }
    OperatingPoint p;
    p.threshold = t;
    p.counts = total;
    p.fppi = static_cast<double>(total.fp) / curve.num_images;
    p.miss_rate = miss_rate(total.tp, total.fn).value_or(0.0);
    p.precision = (total.tp + total.fp) > 0 ? static_cast<double>(total.tp) / (total.tp + total.fp) : 1.0;
    p.recall = curve.total_gts > 0 ? static_cast<double>(total.tp) / curve.total_gts : 0.0;
    curve.points.push_back(p);
  }
  return curve;
}

std::vector<double> reference_fppi_points() {
  std::vector<double> pts(9);
  for (int i = 0; i < 9; ++i) pts[i] = std::pow(10.0, -2.0 + 0.25 * i);
  return pts;
}

double log_average_mr(const EvalCurve& curve, MrAveraging mode) {
  if (curve.points.empty()) throw std::invalid_argument("log_average_mr: empty curve");
  if (curve.total_gts == 0) throw std::invalid_argument("log_average_mr: curve contains no ground truths");
  const auto refs = reference_fppi_points();
  double acc = 0.0;
  for (double ref : refs) {
    // MR of the operating point with the largest FPPI <= ref; among equal
    // FPPIs the lowest MR; 1.0 when no point qualifies
    double best_fppi = -1.0, mr = 1.0;
    for (const auto& p : curve.points) {
      if (p.fppi <= ref && (p.fppi > best_fppi || (p.fppi == best_fppi && p.miss_rate < mr))) {
        best_fppi = p.fppi;
        mr = p.miss_rate;
      }
    }
    if (mode == MrAveraging::log_mean) {
      acc += std::log(std::max(mr, 1e-4));
    } else {
      acc += mr;
    }
  }
  return mode == MrAveraging::log_mean ? std::exp(acc / refs.size()) : acc / refs.size();
}

double average_precision(const EvalCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("average_precision: empty curve");
  if (curve.total_gts == 0) throw std::invalid_argument("average_precision: no ground truths");
  // (recall, precision) sorted by recall ascending; all-point interpolation
  // with the precision envelope from the right
  std::vector<std::pair<double, double>> pr;
  for (const auto& p : curve.points) pr.emplace_back(p.recall, p.precision);
  std::sort(pr.begin(), pr.end());
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double env = 0.0;  // max precision among points with recall >= pr[i].first
    for (std::size_t j = i; j < pr.size(); ++j) env = std::max(env, pr[j].second);
    ap += (pr[i].first - prev_recall) * env;
    prev_recall = pr[i].first;
  }
  return ap;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "MR(all): " << mr_all << "\n";
  os << "MR(day): " << mr_day << "\n";
  os << "MR(night): " << mr_night << "\n";
  os << "AP(all): " << ap_all << "\n";
  os << "AP(day): " << ap_day << "\n";
  os << "AP(night): " << ap_night << "\n";
  os << "TP(all): " << sweep_counts_all.tp << "\n";
  os << "FP(all): " << sweep_counts_all.fp << "\n";
  os << "FN(all): " << sweep_counts_all.fn << "\n";
  os << "TP(day): " << sweep_counts_day.tp << "\n";
  os << "FN(day): " << sweep_counts_day.fn << "\n";
  os << "TP(night): " << sweep_counts_night.tp << "\n";
  os << "FN(night): " << sweep_counts_night.fn << "\n";
  return os.str();
}

EvalReport evaluate_images(const std::vector<ImageEval>& images, MrAveraging mode) {
  if (images.empty()) throw std::invalid_argument("evaluate_images: empty dataset");
  EvalReport report;
  std::vector<ImageEval> day, night;
  for (const auto& im : images) (im.day ? day : night).push_back(im);

  report.curve_all = compute_curve(images);
  report.mr_all = log_average_mr(report.curve_all, mode);
  report.ap_all = average_precision(report.curve_all);
  report.sweep_counts_all = report.curve_all.points.back().counts;

  if (!day.empty()) {
    EvalCurve c = compute_curve(day);
    if (c.total_gts > 0) {
      report.mr_day = log_average_mr(c, mode);
      report.ap_day = average_precision(c);
    }
    report.sweep_counts_day = c.points.back().counts;
  }
  if (!night.empty()) {
    EvalCurve c = compute_curve(night);
    if (c.total_gts > 0) {
      report.mr_night = log_average_mr(c, mode);
      report.ap_night = average_precision(c);
    }
    report.sweep_counts_night = c.points.back().counts;
  }
  return report;
}

std::string curve_to_csv(const EvalCurve& curve) {
  std::ostringstream os;
  os << "threshold,fppi,miss_rate\n";
  os.precision(9);
  std::vector<OperatingPoint> pts = curve.points;
  std::sort(pts.begin(), pts.end(), [](const OperatingPoint& a, const OperatingPoint& b) { return a.fppi < b.fppi; });
  for (const auto& p : pts) {
    if (p.fppi < 0.001 || p.fppi > 1.0) continue;
    os << p.threshold << "," << p.fppi << "," << p.miss_rate << "\n";
  }
  return os.str();
}

}  // namespace itmn
