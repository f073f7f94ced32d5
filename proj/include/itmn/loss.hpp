#pragma once

// Detection training objective: focal classification loss over all default
// boxes plus smooth-L1 localization loss over the positives.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "itmn/anchors.hpp"
#include "itmn/nn.hpp"
#include "itmn/tensor.hpp"

namespace itmn {

struct LossConfig {
  double gamma = 2.0;  // focal modulation exponent
  double alpha = 1.0;  // localization weight
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  T cls = 0, loc = 0;
  int positives = 0;
};

// Scalar focal loss value, the unit used by the verification tests.
inline double focal_loss_value(double p_t, double gamma) {
  const double p = std::max(p_t, 1e-7);
  return -std::pow(1.0 - p, gamma) * std::log(p);
}

// deltas [A,4], scores [A,Cls]; gts are person boxes (class 1).
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& deltas, const Tensor<T>& scores, const std::vector<Box>& gts,
                        const DefaultBoxSet& boxes, const LossConfig& cfg) {
  const int a = static_cast<int>(boxes.size());
  if (deltas.shape()[0] != a || scores.shape()[0] != a)
    throw std::invalid_argument("total_loss: prediction row count does not match default box count");

  const MatchResult match = match_for_training(boxes, gts);
  std::vector<int> labels(a, 0);
  std::vector<int> pos_rows;
  std::vector<T> targets;
  for (int i = 0; i < a; ++i) {
    if (!match.entries[i].matched) continue;
    labels[i] = 1;
    pos_rows.push_back(i);
    const auto enc = encode_box(gts[match.entries[i].gt_index], boxes.boxes_clipped[i], boxes.config);
    for (double v : enc) targets.push_back(static_cast<T>(v));
  }

  LossTerms<T> out;
  out.positives = static_cast<int>(pos_rows.size());
  Tensor<T> cls_loss = softmax_focal_loss(scores, labels, static_cast<T>(cfg.gamma));
  out.cls = cls_loss.item();
  if (pos_rows.empty()) {
    out.total = cls_loss;
    out.loc = 0;
    return out;
  }
  Tensor<T> loc_loss = smooth_l1_mean(gather_rows(deltas, pos_rows), targets);
  out.loc = loc_loss.item();
  out.total = add(cls_loss, scale(loc_loss, static_cast<T>(cfg.alpha)));
  return out;
}

}  // namespace itmn
