#pragma once

// Shared post-processing from raw head outputs to final detections:
// softmax person confidence, threshold pre-filter, offset decoding against
// the clipped default boxes, and NMS.

#include <cmath>
#include <vector>

#include "itmn/anchors.hpp"
#include "itmn/eval.hpp"
#include "itmn/model.hpp"
#include "itmn/quant.hpp"

namespace itmn {

struct DetectConfig {
  double conf_threshold = 0.01;
  double nms_iou = 0.45;
  int person_class = 1;
};

template <typename T>
std::vector<Detection> decode_detections(const T* deltas, const T* scores, const DefaultBoxSet& boxes,
                                         int num_classes, const DetectConfig& dc = {}) {
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const T* s = scores + i * num_classes;
    T mx = s[0];
    for (int j = 1; j < num_classes; ++j) mx = std::max(mx, s[j]);
    double z = 0;
    for (int j = 0; j < num_classes; ++j) z += std::exp(static_cast<double>(s[j] - mx));
    const double conf = std::exp(static_cast<double>(s[dc.person_class] - mx)) / z;
    if (conf < dc.conf_threshold) continue;
    const T* d = deltas + i * 4;
    const std::array<double, 4> off = {static_cast<double>(d[0]), static_cast<double>(d[1]),
                                       static_cast<double>(d[2]), static_cast<double>(d[3])};
    Detection det;
    det.box = decode_box(off, boxes.boxes_clipped[i], boxes.config);
    det.confidence = conf;
    det.label = dc.person_class;
    dets.push_back(det);
  }
  return nms(std::move(dets), dc.nms_iou);
}

template <typename T>
std::vector<Detection> detect(Detector<T>& model, const ImagePair& pair, const DefaultBoxSet& boxes,
                              const DetectConfig& dc = {}) {
  model.training = false;
  DetectorOut<T> out = model.forward(pair);
  return decode_detections(out.deltas.data().data(), out.scores.data().data(), boxes, model.cfg.num_classes, dc);
}

inline std::vector<Detection> detect_quantized(QuantizedDetector& model, const ImagePair& pair,
                                               const DefaultBoxSet& boxes, QRunMode mode,
                                               const DetectConfig& dc = {}) {
  QuantizedDetector::Out out = model.forward(pair, mode);
  return decode_detections(out.deltas.data(), out.scores.data(), boxes, model.cfg.num_classes, dc);
}

// Runs the detector over a dataset and packages per-image results for the
// metric computations.
template <typename T>
std::vector<ImageEval> evaluate_dataset(Detector<T>& model, const Dataset& ds, const DefaultBoxSet& boxes,
                                        const DetectConfig& dc = {}) {
  std::vector<ImageEval> out;
  for (const auto& pair : ds.pairs) {
    ImageEval e;
    e.dets = detect(model, pair, boxes, dc);
    e.gts = pair.gts;
    e.day = pair.params.day();
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ImageEval> evaluate_dataset_quantized(QuantizedDetector& model, const Dataset& ds,
                                                         const DefaultBoxSet& boxes, QRunMode mode,
                                                         const DetectConfig& dc = {}) {
  std::vector<ImageEval> out;
  for (const auto& pair : ds.pairs) {
    ImageEval e;
    e.dets = detect_quantized(model, pair, boxes, mode, dc);
    e.gts = pair.gts;
    e.day = pair.params.day();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace itmn
