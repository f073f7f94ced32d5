#pragma once

// Default-box (anchor) generation, IoU, training assignment, and the
// SSD-style box encode/decode pair. All geometry is double precision and
// normalized to [0,1] image coordinates.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace itmn {

enum class BoxVariant { improved, original_ssd };

struct BoxConfig {
  double s_min = 0.2;
  double s_max = 0.9;
  std::vector<double> aspect_ratios = {1.0, 0.5, 1.0 / 3.0};  // improved variant
  std::vector<int> level_extents = {38, 19, 10, 5, 3, 1};
  BoxVariant variant = BoxVariant::improved;
  double variance_center = 0.1;
  double variance_size = 0.2;

  int num_levels() const { return static_cast<int>(level_extents.size()); }
  // boxes per cell at a level
  int boxes_per_cell(int level) const;
};

// Center-form box, normalized coordinates.
struct DefaultBox {
  double cx, cy, w, h;
};

// Corner-form box (x1,y1,x2,y2), normalized.
struct Box {
  double x1, y1, x2, y2;
  double area() const { return (x2 > x1 && y2 > y1) ? (x2 - x1) * (y2 - y1) : 0.0; }
};

inline Box to_corner(const DefaultBox& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}
inline DefaultBox to_center(const Box& b) {
  return {(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, b.x2 - b.x1, b.y2 - b.y1};
}

struct DefaultBoxSet {
  std::vector<DefaultBox> boxes;          // level-major, row-major cell, ratio order
  std::vector<DefaultBox> boxes_clipped;  // clipped to [0,1]
  std::vector<std::size_t> level_offsets;  // first box index of each level
  BoxConfig config;

  std::size_t size() const { return boxes.size(); }
};

struct MatchEntry {
  bool matched = false;
  int gt_index = -1;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchEntry> entries;  // one per default box
  int positive_count = 0;
};

// Eq-style evenly spaced scale for level k (1-based).
double box_scale(int k, int m, double s_min, double s_max);

// (w, h) from scale and aspect ratio; w/h == a_r.
std::array<double, 2> box_dims(double s_k, double a_r);

DefaultBoxSet generate_default_boxes(const BoxConfig& config);

double iou(const Box& a, const Box& b);

// Training assignment: each gt's best box matched unconditionally, plus
// every box with IoU >= 0.5 matched to its best gt.
MatchResult match_for_training(const DefaultBoxSet& boxes, const std::vector<Box>& gts);

std::array<double, 4> encode_box(const Box& gt, const DefaultBox& prior, const BoxConfig& cfg);
Box decode_box(const std::array<double, 4>& offsets, const DefaultBox& prior, const BoxConfig& cfg);

// Audit dump: level, cell_x, cell_y, ratio, cx, cy, w, h.
std::string boxes_to_csv(const DefaultBoxSet& set);

}  // namespace itmn
