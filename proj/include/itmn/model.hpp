#pragma once

// The detector: dual-stream separable-conv feature pyramid, the fusion
// weight network, early/middle/late fusion strategies and their ablation
// variants, and the per-level prediction heads.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "itmn/anchors.hpp"
#include "itmn/nn.hpp"
#include "itmn/rng.hpp"
#include "itmn/synthdata.hpp"

namespace itmn {

enum class Strategy { early, middle, late };
enum class StreamMode { visual, thermal, dual };
// Which inputs feed the fusion weight network: both (IT), visual only (I),
// thermal only (T), or a constant 0.5 with no FWN evaluation (N).
enum class FwnMode { full, visual_only, thermal_only, fixed_half };

struct StageSpec {
  int out_channels;
  int stride = 2;
  int pad = 1;
  int kernel = 3;
  int expect_out = -1;  // expected output extent; validated at build time
};

struct PyramidConfig {
  int input_size = 96;
  std::vector<StageSpec> stem;
  std::vector<StageSpec> levels;  // the 6 tapped stages

  std::vector<int> level_extents() const {
    std::vector<int> out;
    int e = input_size;
    for (const auto& s : stem) e = conv_out_extent(e, s.kernel, s.stride, s.pad);
    for (const auto& s : levels) {
      e = conv_out_extent(e, s.kernel, s.stride, s.pad);
      out.push_back(e);
    }
    return out;
  }

  void validate() const {
    if (levels.size() != 6) throw std::invalid_argument("pyramid: exactly 6 levels required");
    int e = input_size;
    int idx = 0;
    for (const auto& s : stem) {
      e = conv_out_extent(e, s.kernel, s.stride, s.pad);
      if (e <= 0) throw std::invalid_argument("pyramid: stem stage " + std::to_string(idx) + " yields extent " +
                                              std::to_string(e));
      ++idx;
    }
    idx = 0;
    int tap_prev = e;
    for (const auto& s : levels) {
      e = conv_out_extent(e, s.kernel, s.stride, s.pad);
      if (s.expect_out >= 0 && e != s.expect_out)
        throw std::invalid_argument("pyramid: level " + std::to_string(idx) + " unreachable: expected extent " +
                                    std::to_string(s.expect_out) + " but schedule yields " + std::to_string(e));
      if (e <= 0 || e >= tap_prev)
        throw std::invalid_argument("pyramid: level " + std::to_string(idx) + " extent " + std::to_string(e) +
                                    " not strictly decreasing");
      tap_prev = e;
      ++idx;
    }
    if (e != 1) throw std::invalid_argument("pyramid: terminal level extent must be 1, got " + std::to_string(e));
  }

  // Desk-scale config: one stride-2 stem stage, taps [24,12,6,3,2,1].
  static PyramidConfig desk(int input = 96) {
    PyramidConfig c;
    c.input_size = input;
    c.stem = {{16, 2, 1, 3, input / 2}};
    const int e0 = input / 2;
    c.levels = {{16, 2, 1, 3, e0 / 2},     {32, 2, 1, 3, e0 / 4},     {64, 2, 1, 3, e0 / 8},
                {64, 2, 1, 3, e0 / 16},    {64, 2, 1, 3, -1},         {64, 2, 1, 3, 1}};
    return c;
  }

  // Reference resolution: input 300, taps [38,19,10,5,3,1].
  static PyramidConfig reference300() {
    PyramidConfig c;
    c.input_size = 300;
    c.stem = {{16, 2, 1, 3, 150}, {16, 2, 1, 3, 75}};
    c.levels = {{16, 2, 1, 3, 38}, {32, 2, 1, 3, 19}, {64, 2, 1, 3, 10},
                {64, 2, 1, 3, 5},  {64, 2, 1, 3, 3},  {64, 2, 0, 3, 1}};
    return c;
  }
};

struct ModelConfig {
  PyramidConfig pyramid = PyramidConfig::desk();
  Strategy strategy = Strategy::late;
  StreamMode stream = StreamMode::dual;
  FwnMode fwn = FwnMode::full;
  BoxConfig boxes;  // level_extents must match the pyramid's
  int num_classes = 2;
  int middle_merge_levels = 3;
  std::uint64_t seed = 0;

  void validate() const {
    pyramid.validate();
    if (boxes.level_extents != pyramid.level_extents())
      throw std::invalid_argument("model: box config extents do not match pyramid extents");
    if (num_classes < 2) throw std::invalid_argument("model: need background + at least one class");
    if (middle_merge_levels < 1 || middle_merge_levels > 6)
      throw std::invalid_argument("model: middle_merge_levels out of range");
  }

  bool dual() const { return stream == StreamMode::dual; }

  static ModelConfig desk(std::uint64_t seed = 0) {
    ModelConfig c;
    c.pyramid = PyramidConfig::desk();
    c.boxes.level_extents = c.pyramid.level_extents();
    c.seed = seed;
    return c;
  }
};

// One backbone downsampling stage: separable conv + BN + ReLU.
template <typename T>
struct BackboneStage {
  SeparableConv2dLayer<T> conv;
  BatchNormLayer<T> bn;

  static BackboneStage create(Rng& rng, int in_c, const StageSpec& s) {
    BackboneStage st;
    st.conv = SeparableConv2dLayer<T>::create(rng, in_c, s.out_channels, s.kernel, s.stride, s.pad);
    st.bn = BatchNormLayer<T>::create(s.out_channels);
    return st;
  }
  Tensor<T> forward(const Tensor<T>& x, bool training) { return relu(bn(conv(x), training)); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    conv.visit(prefix + ".conv", fn);
    bn.visit(prefix + ".bn", fn);
  }
  template <typename Fn>
  void visit_buffers(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".bn.running_mean", bn.running_mean);
    fn(prefix + ".bn.running_var", bn.running_var);
    fn(prefix + ".bn.running_sqmean", bn.running_sqmean);
  }
  template <typename Fn>
  void visit_bn(Fn&& fn) {
    fn(bn);
  }
};

template <typename T>
struct Stream {
  std::vector<BackboneStage<T>> stem;
  std::vector<BackboneStage<T>> levels;

  static Stream create(Rng& rng, const PyramidConfig& cfg, int in_channels) {
    Stream s;
    int c = in_channels;
    for (const auto& spec : cfg.stem) {
      s.stem.push_back(BackboneStage<T>::create(rng, c, spec));
      c = spec.out_channels;
    }
    for (const auto& spec : cfg.levels) {
      s.levels.push_back(BackboneStage<T>::create(rng, c, spec));
      c = spec.out_channels;
    }
    return s;
  }

  Tensor<T> run_stem(const Tensor<T>& x, bool training) {
    Tensor<T> y = x;
    for (auto& st : stem) y = st.forward(y, training);
    return y;
  }

  // All 6 taps from the stem output.
  std::vector<Tensor<T>> run_levels(const Tensor<T>& stem_out, bool training) {
    std::vector<Tensor<T>> taps;
    Tensor<T> y = stem_out;
    for (auto& st : levels) {
      y = st.forward(y, training);
      taps.push_back(y);
    }
    return taps;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < stem.size(); ++i) stem[i].visit(prefix + ".stem" + std::to_string(i), fn);
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i].visit(prefix + ".level" + std::to_string(i), fn);
  }
  template <typename Fn>
  void visit_buffers(const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < stem.size(); ++i) stem[i].visit_buffers(prefix + ".stem" + std::to_string(i), fn);
    for (std::size_t i = 0; i < levels.size(); ++i)
      levels[i].visit_buffers(prefix + ".level" + std::to_string(i), fn);
  }
  template <typename Fn>
  void visit_bn(Fn&& fn) {
    for (auto& st : stem) st.visit_bn(fn);
    for (auto& st : levels) st.visit_bn(fn);
  }
};

// Fusion weight network: per-stream conv0 (3->16), channel concat (->32),
// conv1..conv5 each followed by max-pool(2), global average pool, fc 64->2,
// sigmoid. All convs are separable, each with BN + ReLU.
template <typename T>
struct Fwn {
  SeparableConv2dLayer<T> conv0_v, conv0_t;
  BatchNormLayer<T> bn0_v, bn0_t;
  std::vector<BackboneStage<T>> stages;  // conv1..conv5, stride 1; pooling applied outside
  LinearLayer<T> fc;

  static Fwn create(Rng& rng) {
    Fwn f;
    f.conv0_v = SeparableConv2dLayer<T>::create(rng, 3, 16, 3, 1, 1);
    f.bn0_v = BatchNormLayer<T>::create(16);
    f.conv0_t = SeparableConv2dLayer<T>::create(rng, 3, 16, 3, 1, 1);
    f.bn0_t = BatchNormLayer<T>::create(16);
    const int chain[6] = {32, 64, 128, 256, 128, 64};  // conv1..conv5 in/out chain
    for (int i = 0; i < 5; ++i) {
      StageSpec spec{chain[i + 1], 1, 1, 3, -1};
      f.stages.push_back(BackboneStage<T>::create(rng, chain[i], spec));
    }
    f.fc = LinearLayer<T>::create(rng, 64, 2);
    return f;
  }

  // Returns sigmoid([w_c, w_l]) as a [1,2] tensor.
  Tensor<T> forward(const Tensor<T>& visual, const Tensor<T>& thermal, FwnMode mode, bool training) {
    Tensor<T> a = relu(bn0_v(conv0_v(visual), training));
    Tensor<T> b = relu(bn0_t(conv0_t(thermal), training));
    // single-factor ablations duplicate one stream's features into the concat
    if (mode == FwnMode::visual_only) b = a;
    if (mode == FwnMode::thermal_only) a = b;
    Tensor<T> x = concat<T>({a, b}, 1);
    for (auto& st : stages) x = maxpool2d(st.forward(x, training));
    Tensor<T> g = global_avg_pool(x);
    return sigmoid(fc(g));
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    conv0_v.visit(prefix + ".conv0_v", fn);
    bn0_v.visit(prefix + ".bn0_v", fn);
    conv0_t.visit(prefix + ".conv0_t", fn);
    bn0_t.visit(prefix + ".bn0_t", fn);
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].visit(prefix + ".stage" + std::to_string(i), fn);
    fc.visit(prefix + ".fc", fn);
  }
  template <typename Fn>
  void visit_buffers(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".bn0_v.running_mean", bn0_v.running_mean);
    fn(prefix + ".bn0_v.running_var", bn0_v.running_var);
    fn(prefix + ".bn0_v.running_sqmean", bn0_v.running_sqmean);
    fn(prefix + ".bn0_t.running_mean", bn0_t.running_mean);
    fn(prefix + ".bn0_t.running_var", bn0_t.running_var);
    fn(prefix + ".bn0_t.running_sqmean", bn0_t.running_sqmean);
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].visit_buffers(prefix + ".stage" + std::to_string(i), fn);
  }
  template <typename Fn>
  void visit_bn(Fn&& fn) {
    fn(bn0_v);
    fn(bn0_t);
    for (auto& st : stages) st.visit_bn(fn);
  }
};

// Per-level post-fusion convolutions f0/f1 plus the prediction heads.
template <typename T>
struct LevelHead {
  Conv2dLayer<T> f0, f1;  // 3x3, channel-preserving, ReLU after
  Conv2dLayer<T> loc, cls;

  static LevelHead create(Rng& rng, int channels, int dn, int num_classes) {
    LevelHead h;
    h.f0 = Conv2dLayer<T>::create(rng, channels, channels, 3, 1, 1);
    h.f1 = Conv2dLayer<T>::create(rng, channels, channels, 3, 1, 1);
    h.loc = Conv2dLayer<T>::create(rng, channels, dn * 4, 3, 1, 1);
    h.cls = Conv2dLayer<T>::create(rng, channels, dn * num_classes, 3, 1, 1);
    return h;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    f0.visit(prefix + ".f0", fn);
    f1.visit(prefix + ".f1", fn);
    loc.visit(prefix + ".loc", fn);
    cls.visit(prefix + ".cls", fn);
  }
};

template <typename T>
struct DetectorOut {
  Tensor<T> deltas;  // [A,4], normative box ordering
  Tensor<T> scores;  // [A,Cls]
  T w_c = T(0.5), w_l = T(0.5);
};

// Converts an 8-bit image to a [1,C,H,W] tensor in [0,1]; single-channel
// images are replicated to 3 channels.
template <typename T>
Tensor<T> image_to_tensor(const ImageU8& im) {
  const int h = im.height, w = im.width;
  std::vector<T> v(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        v[(static_cast<std::size_t>(c) * h + y) * w + x] =
            static_cast<T>(im.at(x, y, im.channels == 3 ? c : 0)) / T(255);
  return Tensor<T>({1, 3, h, w}, std::move(v));
}

template <typename T>
Tensor<T> blend(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& w) {
  return add(mul(a, w), mul(b, sub(Tensor<T>::scalar(T(1)), w)));
}

template <typename T>
class Detector {
 public:
  ModelConfig cfg;
  Stream<T> stream_a;                 // visual (or the single/stacked stream)
  std::optional<Stream<T>> stream_b;  // thermal, dual strategies only
  std::vector<NinBlock<T>> nins;      // middle fusion merges
  std::optional<Fwn<T>> fwn;
  std::vector<LevelHead<T>> heads;
  bool training = false;

  static Detector create(const ModelConfig& config) {
    config.validate();
    Detector m;
    m.cfg = config;
    Rng rng = Rng::child(config.seed, /*purpose=*/0);
    const int in_c = (config.dual() && config.strategy == Strategy::early) ? 6 : 3;
    m.stream_a = Stream<T>::create(rng, config.pyramid, in_c);
    if (config.dual() && config.strategy != Strategy::early)
      m.stream_b = Stream<T>::create(rng, config.pyramid, 3);
    if (config.dual() && config.strategy == Strategy::middle) {
      for (int i = 0; i < config.middle_merge_levels; ++i) {
        const int c = config.pyramid.levels[i].out_channels;
        m.nins.push_back(NinBlock<T>::create(rng, 2 * c));
      }
    }
    if (config.dual() && config.strategy == Strategy::late) m.fwn = Fwn<T>::create(rng);
    for (int i = 0; i < 6; ++i) {
      const int c = config.pyramid.levels[i].out_channels;
      m.heads.push_back(LevelHead<T>::create(rng, c, config.boxes.boxes_per_cell(i), config.num_classes));
    }
    return m;
  }

  DetectorOut<T> forward(const ImagePair& pair, std::optional<std::pair<T, T>> force_w = std::nullopt) {
    if (pair.visual.width != cfg.pyramid.input_size || pair.visual.height != cfg.pyramid.input_size)
      throw std::invalid_argument("forward: input resolution " + std::to_string(pair.visual.width) +
                                  " does not match model input size " + std::to_string(cfg.pyramid.input_size));
    Tensor<T> vis = image_to_tensor<T>(pair.visual);
    Tensor<T> th = image_to_tensor<T>(pair.thermal);

    DetectorOut<T> out;
    std::vector<Tensor<T>> maps_a, maps_b;  // late keeps both; others one

    if (!cfg.dual()) {
      const Tensor<T>& x = cfg.stream == StreamMode::visual ? vis : th;
      maps_a = stream_a.run_levels(stream_a.run_stem(x, training), training);
    } else if (cfg.strategy == Strategy::early) {
      Tensor<T> stacked = concat<T>({vis, th}, 1);
      maps_a = stream_a.run_levels(stream_a.run_stem(stacked, training), training);
    } else if (cfg.strategy == Strategy::middle) {
      Tensor<T> ya = stream_a.run_stem(vis, training);
      Tensor<T> yb = stream_b->run_stem(th, training);
      std::vector<Tensor<T>> merged;
      for (int i = 0; i < cfg.middle_merge_levels; ++i) {
        ya = stream_a.levels[i].forward(ya, training);
        yb = stream_b->levels[i].forward(yb, training);
        merged.push_back(nins[i](concat<T>({ya, yb}, 1)));
      }
      Tensor<T> y = merged.back();
      maps_a = merged;
      for (int i = cfg.middle_merge_levels; i < static_cast<int>(stream_a.levels.size()); ++i) {
        y = stream_a.levels[i].forward(y, training);
        maps_a.push_back(y);
      }
    } else {  // late
      maps_a = stream_a.run_levels(stream_a.run_stem(vis, training), training);
      maps_b = stream_b->run_levels(stream_b->run_stem(th, training), training);
    }

    Tensor<T> wc_t, wl_t;
    if (cfg.dual() && cfg.strategy == Strategy::late) {
      if (force_w) {
        wc_t = Tensor<T>::scalar(force_w->first);
        wl_t = Tensor<T>::scalar(force_w->second);
      } else if (cfg.fwn == FwnMode::fixed_half) {
        wc_t = Tensor<T>::scalar(T(0.5));
        wl_t = Tensor<T>::scalar(T(0.5));
      } else {
        Tensor<T> w = fwn->forward(vis, th, cfg.fwn, training);
        wc_t = take(w, 0);
        wl_t = take(w, 1);
      }
      out.w_c = wc_t.item();
      out.w_l = wl_t.item();
    }

    std::vector<Tensor<T>> loc_rows, cls_rows;
    for (int i = 0; i < 6; ++i) {
      Tensor<T> y0, y1;
      if (cfg.dual() && cfg.strategy == Strategy::late) {
        y0 = relu(heads[i].f0(blend(maps_a[i], maps_b[i], wl_t)));
        y1 = relu(heads[i].f1(blend(maps_a[i], maps_b[i], wc_t)));
      } else {
        y0 = relu(heads[i].f0(maps_a[i]));
        y1 = relu(heads[i].f1(maps_a[i]));
      }
      const int dn = cfg.boxes.boxes_per_cell(i);
      loc_rows.push_back(flatten_head(heads[i].loc(y0), dn, 4));
      cls_rows.push_back(flatten_head(heads[i].cls(y1), dn, cfg.num_classes));
    }
    out.deltas = concat<T>(loc_rows, 0);
    out.scores = concat<T>(cls_rows, 0);
    return out;
  }

  template <typename Fn>
  void visit_params(Fn&& fn) {
    stream_a.visit("stream_a", fn);
    if (stream_b) stream_b->visit("stream_b", fn);
    for (std::size_t i = 0; i < nins.size(); ++i) nins[i].visit("nin" + std::to_string(i), fn);
    if (fwn) fwn->visit("fwn", fn);
    for (std::size_t i = 0; i < heads.size(); ++i) heads[i].visit("head" + std::to_string(i), fn);
  }

  template <typename Fn>
  void visit_buffers(Fn&& fn) {
    stream_a.visit_buffers("stream_a", fn);
    if (stream_b) stream_b->visit_buffers("stream_b", fn);
    if (fwn) fwn->visit_buffers("fwn", fn);
  }

  template <typename Fn>
  void visit_bn(Fn&& fn) {
    stream_a.visit_bn(fn);
    if (stream_b) stream_b->visit_bn(fn);
    if (fwn) fwn->visit_bn(fn);
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }
};

// Multiply-accumulate count of the prediction-head stage (loc + cls convs)
// for one image; this is what the default-box reduction shrinks.
inline std::size_t head_mac_count(const ModelConfig& cfg) {
  std::size_t macs = 0;
  const auto extents = cfg.pyramid.level_extents();
  for (int i = 0; i < 6; ++i) {
    const std::size_t f2 = static_cast<std::size_t>(extents[i]) * extents[i];
    const std::size_t c = static_cast<std::size_t>(cfg.pyramid.levels[i].out_channels);
    const std::size_t dn = static_cast<std::size_t>(cfg.boxes.boxes_per_cell(i));
    macs += f2 * c * 9 * dn * (4 + static_cast<std::size_t>(cfg.num_classes));
  }
  return macs;
}

// Whole-network multiply-accumulate count for one image pair, from the
// config alone (report-only; used by the bench command).
inline std::size_t model_mac_count(const ModelConfig& cfg) {
  auto sep_macs = [](int e_out, int in_c, int out_c, int k) {
    const std::size_t f2 = static_cast<std::size_t>(e_out) * e_out;
    return f2 * in_c * k * k + f2 * static_cast<std::size_t>(in_c) * out_c;
  };
  std::size_t macs = 0;
  const bool dual = cfg.dual();
  const int streams = dual && cfg.strategy != Strategy::early ? 2 : 1;
  int e = cfg.pyramid.input_size;
  int c = dual && cfg.strategy == Strategy::early ? 6 : 3;
  for (const auto& s : cfg.pyramid.stem) {
    e = conv_out_extent(e, s.kernel, s.stride, s.pad);
    macs += static_cast<std::size_t>(streams) * sep_macs(e, c, s.out_channels, s.kernel);
    c = s.out_channels;
  }
  const auto extents = cfg.pyramid.level_extents();
  for (int i = 0; i < 6; ++i) {
    const auto& s = cfg.pyramid.levels[i];
    const bool merged_tail = dual && cfg.strategy == Strategy::middle && i >= cfg.middle_merge_levels;
    const int n_streams = merged_tail ? 1 : streams;
    macs += static_cast<std::size_t>(n_streams) * sep_macs(extents[i], c, s.out_channels, s.kernel);
    if (dual && cfg.strategy == Strategy::middle && i < cfg.middle_merge_levels) {
      // NIN merge: 1x1 over the channel concat
      macs += static_cast<std::size_t>(extents[i]) * extents[i] * (2 * s.out_channels) * s.out_channels;
    }
    c = s.out_channels;
  }
  if (dual && cfg.strategy == Strategy::late && cfg.fwn != FwnMode::fixed_half) {
    const int es = cfg.pyramid.input_size;
    macs += 2 * sep_macs(es, 3, 16, 3);
    const int chain[6] = {32, 64, 128, 256, 128, 64};
    int ef = es;
    for (int i = 0; i < 5; ++i) {
      macs += sep_macs(ef, chain[i], chain[i + 1], 3);
      ef /= 2;
    }
    macs += 64 * 2;
  }
  for (int i = 0; i < 6; ++i) {
    const std::size_t f2 = static_cast<std::size_t>(extents[i]) * extents[i];
    const std::size_t ch = static_cast<std::size_t>(cfg.pyramid.levels[i].out_channels);
    macs += 2 * f2 * ch * ch * 9;  // f0 and f1
  }
  return macs + head_mac_count(cfg);
}

}  // namespace itmn
