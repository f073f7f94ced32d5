#pragma once

// Post-training affine int8 quantization: per-tensor (scale, zero point)
// parameters, BN folding, activation calibration, an integer inference path
// with int32 accumulation, a float-simulated reference path, and optional
// straight-through fine-tuning of the float master weights.

#include <cstdint>
#include <string>
#include <vector>

#include "itmn/checkpoint.hpp"
#include "itmn/model.hpp"
#include "itmn/synthdata.hpp"
#include "itmn/trainer.hpp"

namespace itmn {

enum class RoundMode { half_even, floor_literal };

struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;
};

QuantParams compute_qparams(double x_min, double x_max);
std::int8_t quantize_value(double x, const QuantParams& qp, RoundMode mode);
inline double dequantize_value(std::int8_t q, const QuantParams& qp) {
  return qp.scale * (static_cast<int>(q) - qp.zero_point);
}

std::vector<std::int8_t> quantize_values(const std::vector<float>& v, const QuantParams& qp, RoundMode mode);
QuantParams qparams_of(const std::vector<float>& v);

// Plain float feature map used by the non-differentiating inference paths.
struct FMap {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;  // CHW
};

// One quantized convolution site: folded float weights kept as the master,
// their int8 image plus its dequantization, and the calibrated input
// activation parameters.
struct QConv {
  std::string name;
  std::vector<float> w_f;
  std::vector<std::int8_t> w_q;
  std::vector<float> w_dq;
  QuantParams wq, in_q;
  std::vector<float> bias;  // empty means none
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  bool depthwise = false;
  bool relu = false;
  bool calibrated = false;
  double cal_min = 0, cal_max = 0;
  bool cal_seen = false;
};

struct QLinear {
  std::string name;
  std::vector<float> w_f;
  std::vector<std::int8_t> w_q;
  std::vector<float> w_dq;
  QuantParams wq, in_q;
  std::vector<float> bias;
  int in_d = 0, out_d = 0;
  bool calibrated = false;
  double cal_min = 0, cal_max = 0;
  bool cal_seen = false;
};

struct QStage {  // separable conv with BN folded into the pointwise half
  QConv dw, pw;
};

enum class QRunMode { calibrate, simulated, integer };

class QuantizedDetector {
 public:
  ModelConfig cfg;
  RoundMode round_mode = RoundMode::half_even;

  std::vector<QStage> a_stem, a_levels;
  std::vector<QStage> b_stem, b_levels;
  std::vector<QConv> nins;
  // fusion weight network
  QStage fwn_conv0_v, fwn_conv0_t;
  std::vector<QStage> fwn_stages;
  QLinear fwn_fc;
  bool has_stream_b = false, has_fwn = false;
  std::vector<QConv> head_f0, head_f1, head_loc, head_cls;

  struct Out {
    std::vector<float> deltas;  // [A,4]
    std::vector<float> scores;  // [A,Cls]
    float w_c = 0.5f, w_l = 0.5f;
  };

  Out forward(const ImagePair& pair, QRunMode mode);

  void finalize_calibration();  // turns recorded min/max into QuantParams
  void quantize_weights();      // fills w_q / w_dq from w_f using round_mode
  std::size_t weight_elements() const;
  std::size_t quantized_payload_bytes() const;  // int8 weight bytes
  std::size_t float_payload_bytes() const;      // 4 bytes per folded weight

  Checkpoint to_checkpoint() const;
  static QuantizedDetector from_checkpoint(const Checkpoint& ckp);

  template <typename Fn>
  void visit_convs(Fn&& fn) {
    auto stage = [&](QStage& st) {
      fn(st.dw);
      fn(st.pw);
    };
    for (auto& st : a_stem) stage(st);
    for (auto& st : a_levels) stage(st);
    for (auto& st : b_stem) stage(st);
    for (auto& st : b_levels) stage(st);
    for (auto& qc : nins) fn(qc);
    if (has_fwn) {
      stage(fwn_conv0_v);
      stage(fwn_conv0_t);
      for (auto& st : fwn_stages) stage(st);
    }
    for (auto& qc : head_f0) fn(qc);
    for (auto& qc : head_f1) fn(qc);
    for (auto& qc : head_loc) fn(qc);
    for (auto& qc : head_cls) fn(qc);
  }

 private:
  FMap run_conv(QConv& qc, const FMap& x, QRunMode mode);
  FMap run_stage(QStage& st, const FMap& x, QRunMode mode);
  std::vector<float> run_linear(QLinear& fc, const std::vector<float>& x, QRunMode mode);
};

// Builds the quantized topology from a trained float model: folds BN into
// the pointwise/dense convs and computes per-tensor weight parameters.
QuantizedDetector fold_detector(Detector<float>& model, RoundMode mode);

struct QuantizeOptions {
  RoundMode mode = RoundMode::half_even;
  int finetune_epochs = 0;
  TrainConfig finetune;  // epochs field overridden by finetune_epochs
};

// Full pipeline: optional straight-through fine-tune of the float model,
// BN fold, activation calibration over the set, weight quantization.
QuantizedDetector quantize_model(Detector<float>& model, const Dataset& calib, const DefaultBoxSet& boxes,
                                 const QuantizeOptions& opts);

}  // namespace itmn
