#include "itmn/quant.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "itmn/kernels.hpp"

namespace itmn {

namespace {

double round_half_even(double r) {
  const double f = std::floor(r);
  const double diff = r - f;
  if (diff > 0.5) return f + 1.0;
  if (diff < 0.5) return f;
  // exact tie: pick the even integer
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

int clamp_code(double q) { return static_cast<int>(std::min(127.0, std::max(-128.0, q))); }

}  // namespace

QuantParams compute_qparams(double x_min, double x_max) {
  if (!std::isfinite(x_min) || !std::isfinite(x_max))
    throw std::invalid_argument("compute_qparams: non-finite range");
  if (x_min > x_max) throw std::invalid_argument("compute_qparams: x_min > x_max");
  QuantParams qp;
  qp.scale = x_min == x_max ? 1.0 : (x_max - x_min) / 255.0;
  qp.zero_point = clamp_code(round_half_even(-128.0 - x_min / qp.scale));
  return qp;
}

std::int8_t quantize_value(double x, const QuantParams& qp, RoundMode mode) {
  const double r = x / qp.scale + qp.zero_point;
  const double q = mode == RoundMode::half_even ? round_half_even(r) : std::floor(r);
  return static_cast<std::int8_t>(clamp_code(q));
}

std::vector<std::int8_t> quantize_values(const std::vector<float>& v, const QuantParams& qp, RoundMode mode) {
  std::vector<std::int8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = quantize_value(v[i], qp, mode);
  return out;
}

QuantParams qparams_of(const std::vector<float>& v) {
  if (v.empty()) throw std::invalid_argument("qparams_of: empty tensor");
  float lo = v[0], hi = v[0];
  for (float x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  return compute_qparams(lo, hi);
}

// ---------------------------------------------------------------------------
// Folding

namespace {

QConv fold_dense(const std::string& name, const Conv2dLayer<float>& l, bool relu) {
  QConv q;
  q.name = name;
  q.w_f = l.w.data();
  q.out_c = l.w.shape()[0];
  q.in_c = l.w.shape()[1];
  q.k = l.w.shape()[2];
  q.stride = l.stride;
  q.pad = l.pad;
  if (l.b.defined()) q.bias = l.b.data();
  q.relu = relu;
  return q;
}

QStage fold_sepconv_bn(const std::string& name, const SeparableConv2dLayer<float>& sep,
                       const BatchNormLayer<float>& bn, bool relu) {
  QStage st;
  st.dw.name = name + ".dw";
  st.dw.w_f = sep.dw.data();
  st.dw.in_c = st.dw.out_c = sep.dw.shape()[0];
  st.dw.k = sep.dw.shape()[2];
  st.dw.stride = sep.stride;
  st.dw.pad = sep.pad;
  st.dw.depthwise = true;

  const int out_c = sep.pw.shape()[0], in_c = sep.pw.shape()[1];
  st.pw.name = name + ".pw";
  st.pw.in_c = in_c;
  st.pw.out_c = out_c;
  st.pw.k = 1;
  st.pw.stride = 1;
  st.pw.pad = 0;
  st.pw.relu = relu;
  st.pw.w_f.resize(static_cast<std::size_t>(out_c) * in_c);
  st.pw.bias.resize(out_c);
  for (int o = 0; o < out_c; ++o) {
    const float s = bn.gamma.data()[o] / std::sqrt(bn.running_var[o] + bn.eps);
    for (int c = 0; c < in_c; ++c)
      st.pw.w_f[static_cast<std::size_t>(o) * in_c + c] = sep.pw.data()[static_cast<std::size_t>(o) * in_c + c] * s;
    st.pw.bias[o] = bn.beta.data()[o] - s * bn.running_mean[o];
  }
  return st;
}

QStage fold_backbone_stage(const std::string& name, const BackboneStage<float>& bs) {
  return fold_sepconv_bn(name, bs.conv, bs.bn, true);
}

}  // namespace

QuantizedDetector fold_detector(Detector<float>& model, RoundMode mode) {
  QuantizedDetector q;
  q.cfg = model.cfg;
  q.round_mode = mode;
  for (std::size_t i = 0; i < model.stream_a.stem.size(); ++i)
    q.a_stem.push_back(fold_backbone_stage("stream_a.stem" + std::to_string(i), model.stream_a.stem[i]));
  for (std::size_t i = 0; i < model.stream_a.levels.size(); ++i)
    q.a_levels.push_back(fold_backbone_stage("stream_a.level" + std::to_string(i), model.stream_a.levels[i]));
  if (model.stream_b) {
    q.has_stream_b = true;
    for (std::size_t i = 0; i < model.stream_b->stem.size(); ++i)
      q.b_stem.push_back(fold_backbone_stage("stream_b.stem" + std::to_string(i), model.stream_b->stem[i]));
    for (std::size_t i = 0; i < model.stream_b->levels.size(); ++i)
      q.b_levels.push_back(fold_backbone_stage("stream_b.level" + std::to_string(i), model.stream_b->levels[i]));
  }
  for (std::size_t i = 0; i < model.nins.size(); ++i)
    q.nins.push_back(fold_dense("nin" + std::to_string(i), model.nins[i].conv, true));
  if (model.fwn) {
    q.has_fwn = true;
    q.fwn_conv0_v = fold_sepconv_bn("fwn.conv0_v", model.fwn->conv0_v, model.fwn->bn0_v, true);
    q.fwn_conv0_t = fold_sepconv_bn("fwn.conv0_t", model.fwn->conv0_t, model.fwn->bn0_t, true);
    for (std::size_t i = 0; i < model.fwn->stages.size(); ++i)
      q.fwn_stages.push_back(fold_backbone_stage("fwn.stage" + std::to_string(i), model.fwn->stages[i]));
    q.fwn_fc.name = "fwn.fc";
    q.fwn_fc.w_f = model.fwn->fc.w.data();
    q.fwn_fc.out_d = model.fwn->fc.w.shape()[0];
    q.fwn_fc.in_d = model.fwn->fc.w.shape()[1];
    q.fwn_fc.bias = model.fwn->fc.b.data();
  }
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    const std::string p = "head" + std::to_string(i);
    q.head_f0.push_back(fold_dense(p + ".f0", model.heads[i].f0, true));
    q.head_f1.push_back(fold_dense(p + ".f1", model.heads[i].f1, true));
    q.head_loc.push_back(fold_dense(p + ".loc", model.heads[i].loc, false));
    q.head_cls.push_back(fold_dense(p + ".cls", model.heads[i].cls, false));
  }
  return q;
}

// ---------------------------------------------------------------------------
// Inference

namespace {

FMap image_to_fmap(const ImageU8& im) {
  FMap m;
  m.c = 3;
  m.h = im.height;
  m.w = im.width;
  m.v.resize(static_cast<std::size_t>(3) * m.h * m.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        m.v[(static_cast<std::size_t>(c) * m.h + y) * m.w + x] =
            static_cast<float>(im.at(x, y, im.channels == 3 ? c : 0)) / 255.0f;
  return m;
}

FMap concat_channels(const FMap& a, const FMap& b) {
  FMap m;
  m.c = a.c + b.c;
  m.h = a.h;
  m.w = a.w;
  m.v = a.v;
  m.v.insert(m.v.end(), b.v.begin(), b.v.end());
  return m;
}

FMap maxpool_fmap(const FMap& x) {
  FMap m;
  m.c = x.c;
  m.h = x.h / 2;
  m.w = x.w / 2;
  m.v.resize(static_cast<std::size_t>(m.c) * m.h * m.w);
  for (int c = 0; c < m.c; ++c)
    for (int oy = 0; oy < m.h; ++oy)
      for (int ox = 0; ox < m.w; ++ox) {
        float best = x.v[(static_cast<std::size_t>(c) * x.h + 2 * oy) * x.w + 2 * ox];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            best = std::max(best, x.v[(static_cast<std::size_t>(c) * x.h + 2 * oy + dy) * x.w + 2 * ox + dx]);
        m.v[(static_cast<std::size_t>(c) * m.h + oy) * m.w + ox] = best;
      }
  return m;
}

FMap blend_fmap(const FMap& a, const FMap& b, float w) {
  FMap m = a;
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = w * a.v[i] + (1.0f - w) * b.v[i];
  return m;
}

}  // namespace

FMap QuantizedDetector::run_conv(QConv& qc, const FMap& x, QRunMode mode) {
  if (x.c != qc.in_c)
    throw std::runtime_error("quant: '" + qc.name + "' expects " + std::to_string(qc.in_c) + " channels, got " +
                             std::to_string(x.c));
  ConvDims d;
  d.n = 1;
  d.c = x.c;
  d.h = x.h;
  d.w = x.w;
  d.oc = qc.out_c;
  d.k = qc.k;
  d.stride = qc.stride;
  d.pad = qc.pad;
  d.oh = conv_out_extent(x.h, qc.k, qc.stride, qc.pad);
  d.ow = conv_out_extent(x.w, qc.k, qc.stride, qc.pad);

  FMap y;
  y.c = qc.out_c;
  y.h = d.oh;
  y.w = d.ow;
  y.v.resize(static_cast<std::size_t>(y.c) * y.h * y.w);

  if (mode == QRunMode::calibrate) {
    for (float v : x.v) {
      if (!qc.cal_seen) {
        qc.cal_min = qc.cal_max = v;
        qc.cal_seen = true;
      } else {
        qc.cal_min = std::min(qc.cal_min, static_cast<double>(v));
        qc.cal_max = std::max(qc.cal_max, static_cast<double>(v));
      }
    }
    if (qc.depthwise) {
      kern::dwconv2d_fwd(x.v.data(), qc.w_f.data(), static_cast<const float*>(nullptr), y.v.data(), d);
    } else {
      kern::conv2d_fwd(x.v.data(), qc.w_f.data(), static_cast<const float*>(nullptr), y.v.data(), d);
    }
  } else {
    if (!qc.calibrated)
      throw std::runtime_error("quant: missing activation parameters for '" + qc.name + "'");
    if (mode == QRunMode::simulated) {
      std::vector<float> xq(x.v.size());
      for (std::size_t i = 0; i < x.v.size(); ++i)
        xq[i] = static_cast<float>(dequantize_value(quantize_value(x.v[i], qc.in_q, round_mode), qc.in_q));
      if (qc.depthwise) {
        kern::dwconv2d_fwd(xq.data(), qc.w_dq.data(), static_cast<const float*>(nullptr), y.v.data(), d);
      } else {
        kern::conv2d_fwd(xq.data(), qc.w_dq.data(), static_cast<const float*>(nullptr), y.v.data(), d);
      }
    } else {
      std::vector<std::int8_t> xq(x.v.size());
      for (std::size_t i = 0; i < x.v.size(); ++i) xq[i] = quantize_value(x.v[i], qc.in_q, round_mode);
      std::vector<std::int32_t> acc(y.v.size());
      if (qc.depthwise) {
        kern::qdwconv2d_fwd(xq.data(), qc.in_q.zero_point, qc.w_q.data(), qc.wq.zero_point, acc.data(), d);
      } else {
        kern::qconv2d_fwd(xq.data(), qc.in_q.zero_point, qc.w_q.data(), qc.wq.zero_point, acc.data(), d);
      }
      const float s = static_cast<float>(qc.in_q.scale * qc.wq.scale);
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] = s * acc[i];
    }
  }
  if (!qc.bias.empty()) {
    const std::size_t hw = static_cast<std::size_t>(y.h) * y.w;
    for (int o = 0; o < y.c; ++o)
      for (std::size_t i = 0; i < hw; ++i) y.v[static_cast<std::size_t>(o) * hw + i] += qc.bias[o];
  }
  if (qc.relu)
    for (auto& v : y.v) v = std::max(v, 0.0f);
  return y;
}

FMap QuantizedDetector::run_stage(QStage& st, const FMap& x, QRunMode mode) {
  return run_conv(st.pw, run_conv(st.dw, x, mode), mode);
}

std::vector<float> QuantizedDetector::run_linear(QLinear& fc, const std::vector<float>& x, QRunMode mode) {
  if (static_cast<int>(x.size()) != fc.in_d)
    throw std::runtime_error("quant: '" + fc.name + "' expects " + std::to_string(fc.in_d) + " inputs");
  std::vector<float> y(fc.out_d);
  if (mode == QRunMode::calibrate) {
    for (float v : x) {
      if (!fc.cal_seen) {
        fc.cal_min = fc.cal_max = v;
        fc.cal_seen = true;
      } else {
        fc.cal_min = std::min(fc.cal_min, static_cast<double>(v));
        fc.cal_max = std::max(fc.cal_max, static_cast<double>(v));
      }
    }
    for (int o = 0; o < fc.out_d; ++o) {
      float acc = fc.bias[o];
      for (int i = 0; i < fc.in_d; ++i) acc += fc.w_f[static_cast<std::size_t>(o) * fc.in_d + i] * x[i];
      y[o] = acc;
    }
    return y;
  }
  if (!fc.calibrated) throw std::runtime_error("quant: missing activation parameters for '" + fc.name + "'");
  if (mode == QRunMode::simulated) {
    for (int o = 0; o < fc.out_d; ++o) {
      float acc = fc.bias[o];
      for (int i = 0; i < fc.in_d; ++i) {
        const float xi = static_cast<float>(dequantize_value(quantize_value(x[i], fc.in_q, round_mode), fc.in_q));
        acc += fc.w_dq[static_cast<std::size_t>(o) * fc.in_d + i] * xi;
      }
      y[o] = acc;
    }
    return y;
  }
  std::vector<std::int8_t> xq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xq[i] = quantize_value(x[i], fc.in_q, round_mode);
  for (int o = 0; o < fc.out_d; ++o) {
    std::int32_t acc = 0;
    for (int i = 0; i < fc.in_d; ++i)
      acc += (static_cast<std::int32_t>(fc.w_q[static_cast<std::size_t>(o) * fc.in_d + i]) - fc.wq.zero_point) *
             (static_cast<std::int32_t>(xq[i]) - fc.in_q.zero_point);
    y[o] = static_cast<float>(fc.in_q.scale * fc.wq.scale) * acc + fc.bias[o];
  }
  return y;
}

QuantizedDetector::Out QuantizedDetector::forward(const ImagePair& pair, QRunMode mode) {
  if (pair.visual.width != cfg.pyramid.input_size || pair.visual.height != cfg.pyramid.input_size)
    throw std::runtime_error("quant: input resolution does not match model input size");
  FMap vis = image_to_fmap(pair.visual);
  FMap th = image_to_fmap(pair.thermal);

  auto run_chain = [&](std::vector<QStage>& chain, FMap x) {
    for (auto& st : chain) x = run_stage(st, x, mode);
    return x;
  };
  auto run_levels = [&](std::vector<QStage>& levels, FMap x) {
    std::vector<FMap> taps;
    for (auto& st : levels) {
      x = run_stage(st, x, mode);
      taps.push_back(x);
    }
    return taps;
  };

  Out out;
  std::vector<FMap> maps_a, maps_b;
  const bool dual = cfg.dual();
  if (!dual) {
    maps_a = run_levels(a_levels, run_chain(a_stem, cfg.stream == StreamMode::visual ? vis : th));
  } else if (cfg.strategy == Strategy::early) {
    maps_a = run_levels(a_levels, run_chain(a_stem, concat_channels(vis, th)));
  } else if (cfg.strategy == Strategy::middle) {
    FMap ya = run_chain(a_stem, vis);
    FMap yb = run_chain(b_stem, th);
    for (int i = 0; i < cfg.middle_merge_levels; ++i) {
      ya = run_stage(a_levels[i], ya, mode);
      yb = run_stage(b_levels[i], yb, mode);
      ya = run_conv(nins[i], concat_channels(ya, yb), mode);
      maps_a.push_back(ya);
    }
    FMap y = maps_a.back();
    for (int i = cfg.middle_merge_levels; i < static_cast<int>(a_levels.size()); ++i) {
      y = run_stage(a_levels[i], y, mode);
      maps_a.push_back(y);
    }
  } else {
    maps_a = run_levels(a_levels, run_chain(a_stem, vis));
    maps_b = run_levels(b_levels, run_chain(b_stem, th));
  }

  if (dual && cfg.strategy == Strategy::late) {
    if (cfg.fwn == FwnMode::fixed_half) {
      out.w_c = out.w_l = 0.5f;
    } else {
      FMap a = run_stage(fwn_conv0_v, vis, mode);
      FMap b = run_stage(fwn_conv0_t, th, mode);
      if (cfg.fwn == FwnMode::visual_only) b = a;
      if (cfg.fwn == FwnMode::thermal_only) a = b;
      FMap x = concat_channels(a, b);
      for (auto& st : fwn_stages) x = maxpool_fmap(run_stage(st, x, mode));
      std::vector<float> g(x.c);
      const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
      for (int c = 0; c < x.c; ++c) {
        float acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += x.v[static_cast<std::size_t>(c) * hw + i];
        g[c] = acc / static_cast<float>(hw);
      }
      std::vector<float> w = run_linear(fwn_fc, g, mode);
      out.w_c = 1.0f / (1.0f + std::exp(-w[0]));
      out.w_l = 1.0f / (1.0f + std::exp(-w[1]));
    }
  }

  for (int i = 0; i < 6; ++i) {
    FMap y0_in, y1_in;
    if (dual && cfg.strategy == Strategy::late) {
      y0_in = blend_fmap(maps_a[i], maps_b[i], out.w_l);
      y1_in = blend_fmap(maps_a[i], maps_b[i], out.w_c);
    } else {
      y0_in = maps_a[i];
      y1_in = maps_a[i];
    }
    FMap loc = run_conv(head_loc[i], run_conv(head_f0[i], y0_in, mode), mode);
    FMap cls = run_conv(head_cls[i], run_conv(head_f1[i], y1_in, mode), mode);
    // [1, Dn*K, f, f] -> rows (y*f+x)*Dn+d, cols j from channel d*K+j
    const int dn = cfg.boxes.boxes_per_cell(i);
    const std::size_t hw = static_cast<std::size_t>(loc.h) * loc.w;
    for (int yy = 0; yy < loc.h; ++yy)
      for (int xx = 0; xx < loc.w; ++xx)
        for (int d = 0; d < dn; ++d) {
          for (int j = 0; j < 4; ++j)
            out.deltas.push_back(loc.v[static_cast<std::size_t>(d * 4 + j) * hw + static_cast<std::size_t>(yy) * loc.w + xx]);
          for (int j = 0; j < cfg.num_classes; ++j)
            out.scores.push_back(
                cls.v[static_cast<std::size_t>(d * cfg.num_classes + j) * hw + static_cast<std::size_t>(yy) * cls.w + xx]);
        }
  }
  return out;
}

void QuantizedDetector::finalize_calibration() {
  visit_convs([&](QConv& qc) {
    if (!qc.cal_seen) return;
    qc.in_q = compute_qparams(qc.cal_min, qc.cal_max);
    qc.calibrated = true;
  });
  if (has_fwn && fwn_fc.cal_seen) {
    fwn_fc.in_q = compute_qparams(fwn_fc.cal_min, fwn_fc.cal_max);
    fwn_fc.calibrated = true;
  }
}

void QuantizedDetector::quantize_weights() {
  auto quantize_one = [&](auto& t) {
    t.wq = qparams_of(t.w_f);
    t.w_q = quantize_values(t.w_f, t.wq, round_mode);
    t.w_dq.resize(t.w_q.size());
    for (std::size_t i = 0; i < t.w_q.size(); ++i) t.w_dq[i] = static_cast<float>(dequantize_value(t.w_q[i], t.wq));
  };
  visit_convs([&](QConv& qc) { quantize_one(qc); });
  if (has_fwn) quantize_one(fwn_fc);
}

std::size_t QuantizedDetector::weight_elements() const {
  std::size_t n = 0;
  auto* self = const_cast<QuantizedDetector*>(this);
  self->visit_convs([&](QConv& qc) { n += qc.w_f.size(); });
  if (has_fwn) n += fwn_fc.w_f.size();
  return n;
}

std::size_t QuantizedDetector::quantized_payload_bytes() const { return weight_elements(); }
std::size_t QuantizedDetector::float_payload_bytes() const { return weight_elements() * sizeof(float); }

// ---------------------------------------------------------------------------
// Serialization: shares the checkpoint container; int8 weights carry their
// (s, z) pairs and the input activation (s, z) in the header metadata.

Checkpoint QuantizedDetector::to_checkpoint() const {
  Checkpoint ckp;
  ckp.metadata["format_version"] = 1;
  ckp.metadata["quantized"] = true;
  ckp.metadata["round_mode"] = round_mode == RoundMode::half_even ? "half_even" : "floor_literal";
  ckp.metadata["model"] = model_config_to_json(cfg);
  auto* self = const_cast<QuantizedDetector*>(this);
  auto put = [&](const std::string& name, const std::vector<std::int8_t>& w, const QuantParams& wq,
                 const QuantParams& in_q, bool calibrated, const std::vector<float>& bias) {
    TensorBlob b;
    b.name = "qweight:" + name;
    b.shape = {static_cast<int>(w.size())};
    b.dtype = "i8";
    b.bytes.assign(reinterpret_cast<const std::uint8_t*>(w.data()),
                   reinterpret_cast<const std::uint8_t*>(w.data()) + w.size());
    ckp.tensors.push_back(std::move(b));
    nlohmann::json& qj = ckp.metadata["qparams"][name];
    qj["w_scale"] = wq.scale;
    qj["w_zero"] = wq.zero_point;
    qj["calibrated"] = calibrated;
    if (calibrated) {
      qj["in_scale"] = in_q.scale;
      qj["in_zero"] = in_q.zero_point;
    }
    if (!bias.empty()) ckp.tensors.push_back(detail::make_blob<float>("bias:" + name, {static_cast<int>(bias.size())}, bias));
  };
  self->visit_convs([&](QConv& qc) { put(qc.name, qc.w_q, qc.wq, qc.in_q, qc.calibrated, qc.bias); });
  if (has_fwn) put(fwn_fc.name, fwn_fc.w_q, fwn_fc.wq, fwn_fc.in_q, fwn_fc.calibrated, fwn_fc.bias);
  return ckp;
}

QuantizedDetector QuantizedDetector::from_checkpoint(const Checkpoint& ckp) {
  if (!ckp.metadata.value("quantized", false))
    throw std::runtime_error("quant: checkpoint does not hold a quantized model");
  const ModelConfig cfg = model_config_from_json(ckp.metadata.at("model"));
  Detector<float> scaffold = Detector<float>::create(cfg);
  const std::string rm = ckp.metadata.at("round_mode").get<std::string>();
  QuantizedDetector q = fold_detector(scaffold, rm == "half_even" ? RoundMode::half_even : RoundMode::floor_literal);

  auto load = [&](auto& t) {
    const TensorBlob* b = ckp.find("qweight:" + t.name);
    if (!b) throw std::runtime_error("quant: checkpoint missing weights for '" + t.name + "'");
    if (b->bytes.size() != t.w_f.size())
      throw std::runtime_error("quant: size mismatch for '" + t.name + "'");
    t.w_q.assign(reinterpret_cast<const std::int8_t*>(b->bytes.data()),
                 reinterpret_cast<const std::int8_t*>(b->bytes.data()) + b->bytes.size());
    const nlohmann::json& qj = ckp.metadata.at("qparams").at(t.name);
    t.wq.scale = qj.at("w_scale").get<double>();
    t.wq.zero_point = qj.at("w_zero").get<int>();
    t.calibrated = qj.at("calibrated").get<bool>();
    if (t.calibrated) {
      t.in_q.scale = qj.at("in_scale").get<double>();
      t.in_q.zero_point = qj.at("in_zero").get<int>();
    }
    t.w_dq.resize(t.w_q.size());
    for (std::size_t i = 0; i < t.w_q.size(); ++i) t.w_dq[i] = static_cast<float>(dequantize_value(t.w_q[i], t.wq));
    t.w_f = t.w_dq;  // the float masters are not stored in quantized form
    const TensorBlob* bb = ckp.find("bias:" + t.name);
    if (bb) {
      t.bias = detail::blob_values<float>(*bb);
    } else {
      t.bias.clear();
    }
  };
  q.visit_convs([&](QConv& qc) { load(qc); });
  if (q.has_fwn) load(q.fwn_fc);
  return q;
}

// ---------------------------------------------------------------------------

QuantizedDetector quantize_model(Detector<float>& model, const Dataset& calib, const DefaultBoxSet& boxes,
                                 const QuantizeOptions& opts) {
  if (calib.pairs.empty()) throw std::invalid_argument("quantize_model: empty calibration set");

  if (opts.finetune_epochs > 0) {
    // quantization-aware fine-tune: fake-quantize the weights for each
    // forward pass, let gradients pass straight through the rounding, and
    // apply updates to the float masters
    TrainConfig tc = opts.finetune;
    tc.epochs = opts.finetune_epochs;
    Trainer<float> trainer(tc);
    auto masters = std::make_shared<std::map<std::string, std::vector<float>>>();
    StepHooks<float> hooks;
    hooks.pre_forward = [masters, mode = opts.mode](Detector<float>& m) {
      m.visit_params([&](const std::string& name, Tensor<float>& p) {
        (*masters)[name] = p.data();
        const QuantParams qp = qparams_of(p.data());
        for (auto& v : p.data()) v = static_cast<float>(dequantize_value(quantize_value(v, qp, mode), qp));
      });
    };
    hooks.post_backward = [masters](Detector<float>& m) {
      m.visit_params([&](const std::string& name, Tensor<float>& p) { p.data() = masters->at(name); });
    };
    trainer.fit(model, calib, boxes, 0, hooks);
  }

  QuantizedDetector q = fold_detector(model, opts.mode);
  for (const auto& pair : calib.pairs) q.forward(pair, QRunMode::calibrate);
  q.finalize_calibration();
  q.quantize_weights();
  return q;
}

}  // namespace itmn
