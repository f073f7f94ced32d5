#include "itmn/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace itmn {

namespace {

// SSD-300 per-level box counts for the original variant.
const int kOriginalBoxesPerCell[6] = {4, 6, 6, 6, 4, 4};

}  // namespace

int BoxConfig::boxes_per_cell(int level) const {
  if (variant == BoxVariant::improved) return static_cast<int>(aspect_ratios.size());
  if (level < 0 || level >= 6) throw std::invalid_argument("boxes_per_cell: original variant needs 6 levels");
  return kOriginalBoxesPerCell[level];
}

double box_scale(int k, int m, double s_min, double s_max) {
  if (m < 2) throw std::invalid_argument("box_scale: need at least 2 feature maps, got " + std::to_string(m));
  if (k < 1 || k > m)
    throw std::invalid_argument("box_scale: level " + std::to_string(k) + " out of range 1.." + std::to_string(m));
  return s_min + (s_max - s_min) / (m - 1) * (k - 1);
}

std::array<double, 2> box_dims(double s_k, double a_r) {
  if (s_k <= 0 || a_r <= 0)
    throw std::invalid_argument("box_dims: non-positive scale or aspect ratio");
  const double r = std::sqrt(a_r);
  return {s_k * r, s_k / r};
}

DefaultBoxSet generate_default_boxes(const BoxConfig& config) {
  const int m = config.num_levels();
  if (m < 2) throw std::invalid_argument("generate_default_boxes: need at least 2 levels");
  for (int f : config.level_extents)
    if (f <= 0) throw std::invalid_argument("generate_default_boxes: invalid extent " + std::to_string(f));
  if (config.variant == BoxVariant::original_ssd && m != 6)
    throw std::invalid_argument("generate_default_boxes: original-ssd variant requires 6 levels");

  DefaultBoxSet set;
  set.config = config;
  const double step = (config.s_max - config.s_min) / (m - 1);

  for (int level = 0; level < m; ++level) {
    set.level_offsets.push_back(set.boxes.size());
    const int f = config.level_extents[level];
    const double s_k = box_scale(level + 1, m, config.s_min, config.s_max);

    // (w,h) list for one cell, in normative ratio order
    std::vector<std::array<double, 2>> dims;
    if (config.variant == BoxVariant::improved) {
      for (double ar : config.aspect_ratios) dims.push_back(box_dims(s_k, ar));
    } else {
      const double s_next = s_k + step;  // one step past s_max at the last level
      const double s_extra = std::sqrt(s_k * s_next);
      dims.push_back(box_dims(s_k, 1.0));
      dims.push_back({s_extra, s_extra});
      dims.push_back(box_dims(s_k, 2.0));
      dims.push_back(box_dims(s_k, 0.5));
      if (kOriginalBoxesPerCell[level] == 6) {
        dims.push_back(box_dims(s_k, 3.0));
        dims.push_back(box_dims(s_k, 1.0 / 3.0));
      }
    }

    for (int j = 0; j < f; ++j)
      for (int i = 0; i < f; ++i) {
        const double cx = (i + 0.5) / f;
        const double cy = (j + 0.5) / f;
        for (const auto& d : dims) set.boxes.push_back({cx, cy, d[0], d[1]});
      }
  }

  set.boxes_clipped.reserve(set.boxes.size());
  for (const auto& b : set.boxes) {
    Box c = to_corner(b);
    c.x1 = std::clamp(c.x1, 0.0, 1.0);
    c.y1 = std::clamp(c.y1, 0.0, 1.0);
    c.x2 = std::clamp(c.x2, 0.0, 1.0);
    c.y2 = std::clamp(c.y2, 0.0, 1.0);
    set.boxes_clipped.push_back(to_center(c));
  }
  return set;
}

double iou(const Box& a, const Box& b) {
  const double aa = a.area(), ab = b.area();
  if (aa <= 0.0 || ab <= 0.0) return 0.0;  // degenerate boxes never overlap
  const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  if (ix2 <= ix1 || iy2 <= iy1) return 0.0;
  const double inter = (ix2 - ix1) * (iy2 - iy1);
  return inter / (aa + ab - inter);
}

MatchResult match_for_training(const DefaultBoxSet& boxes, const std::vector<Box>& gts) {
  MatchResult result;
  result.entries.assign(boxes.size(), MatchEntry{});
  if (gts.empty()) return result;

  const std::size_t n = boxes.size();
  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best_iou(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_box(gts.size(), 0);

  for (std::size_t i = 0; i < n; ++i) {
    const Box prior = to_corner(boxes.boxes_clipped[i]);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(prior, gts[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_box[g] = i;
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (best_gt[i] >= 0 && best_iou[i] >= 0.5) {
      result.entries[i] = {true, best_gt[i], best_iou[i]};
    }
  }
  // each gt claims its single best box regardless of threshold
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best_iou[g] > 0.0) {
      result.entries[gt_best_box[g]] = {true, static_cast<int>(g), gt_best_iou[g]};
    }
  }
  for (const auto& e : result.entries)
    if (e.matched) ++result.positive_count;
  return result;
}

std::array<double, 4> encode_box(const Box& gt, const DefaultBox& prior, const BoxConfig& cfg) {
  const DefaultBox g = to_center(gt);
  if (g.w <= 0 || g.h <= 0) throw std::invalid_argument("encode_box: non-positive ground-truth extent");
  if (prior.w <= 0 || prior.h <= 0) throw std::invalid_argument("encode_box: non-positive prior extent");
  return {(g.cx - prior.cx) / (prior.w * cfg.variance_center), (g.cy - prior.cy) / (prior.h * cfg.variance_center),
          std::log(g.w / prior.w) / cfg.variance_size, std::log(g.h / prior.h) / cfg.variance_size};
}

Box decode_box(const std::array<double, 4>& offsets, const DefaultBox& prior, const BoxConfig& cfg) {
  DefaultBox g;
  g.cx = offsets[0] * cfg.variance_center * prior.w + prior.cx;
  g.cy = offsets[1] * cfg.variance_center * prior.h + prior.cy;
  g.w = prior.w * std::exp(offsets[2] * cfg.variance_size);
  g.h = prior.h * std::exp(offsets[3] * cfg.variance_size);
  return to_corner(g);
}

std::string boxes_to_csv(const DefaultBoxSet& set) {
  std::ostringstream os;
  os << "level,cell_x,cell_y,ratio,cx,cy,w,h\n";
  os.precision(9);
  const int m = set.config.num_levels();
  std::size_t idx = 0;
  for (int level = 0; level < m; ++level) {
    const int f = set.config.level_extents[level];
    const int per_cell = set.config.boxes_per_cell(level);
    for (int j = 0; j < f; ++j)
      for (int i = 0; i < f; ++i)
        for (int d = 0; d < per_cell; ++d) {
          const DefaultBox& b = set.boxes[idx++];
          os << level << "," << i << "," << j << "," << b.w / b.h << "," << b.cx << "," << b.cy << "," << b.w << ","
             << b.h << "\n";
        }
  }
  return os.str();
}

}  // namespace itmn
