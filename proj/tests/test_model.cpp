#include "doctest.h"

#include <cmath>
#include <map>

#include "itmn/model.hpp"

using namespace itmn;

namespace {

ImagePair test_pair(std::uint64_t seed = 9, int res = 96) {
  SceneParams p;
  p.seed = seed;
  p.lambda = 0.7;
  p.tau = 0.6;
  p.pedestrian_count = 2;
  GeneratorConfig cfg;
  cfg.resolution = res;
  return generate_scene(p, cfg);
}

ImagePair with_scrambled_thermal(ImagePair p) {
  for (auto& v : p.thermal.data) v = static_cast<std::uint8_t>(255 - v);
  return p;
}

ImagePair with_scrambled_visual(ImagePair p) {
  for (auto& v : p.visual.data) v = static_cast<std::uint8_t>(255 - v);
  return p;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

int desk_box_count() {
  // 3 boxes per cell on extents [24,12,6,3,2,1]
  return 3 * (576 + 144 + 36 + 9 + 4 + 1);
}

}  // namespace

TEST_CASE("pyramid factories produce the documented tap extents") {
  CHECK(PyramidConfig::desk().level_extents() == std::vector<int>{24, 12, 6, 3, 2, 1});
  CHECK_NOTHROW(PyramidConfig::desk().validate());
  CHECK(PyramidConfig::reference300().level_extents() == std::vector<int>{38, 19, 10, 5, 3, 1});
  CHECK_NOTHROW(PyramidConfig::reference300().validate());
}

TEST_CASE("pyramid validation rejects broken schedules") {
  PyramidConfig c = PyramidConfig::desk();
  c.levels[2].expect_out = 99;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("level 2 unreachable"), std::invalid_argument);

  PyramidConfig flat = PyramidConfig::desk();
  flat.levels[4] = {64, 1, 1, 3, -1};  // stride 1 keeps the extent: not decreasing
  CHECK_THROWS_WITH_AS(flat.validate(), doctest::Contains("not strictly decreasing"), std::invalid_argument);

  PyramidConfig five = PyramidConfig::desk();
  five.levels.pop_back();
  CHECK_THROWS_AS(five.validate(), std::invalid_argument);

  PyramidConfig tall = PyramidConfig::desk(192);  // terminal extent 2, not 1
  tall.levels.back().expect_out = -1;
  CHECK_THROWS_WITH_AS(tall.validate(), doctest::Contains("must be 1"), std::invalid_argument);
}

TEST_CASE("model config validation") {
  ModelConfig c = ModelConfig::desk();
  CHECK_NOTHROW(c.validate());
  ModelConfig mism = c;
  mism.boxes.level_extents = {38, 19, 10, 5, 3, 1};
  CHECK_THROWS_WITH_AS(mism.validate(), doctest::Contains("do not match"), std::invalid_argument);
  ModelConfig one_class = c;
  one_class.num_classes = 1;
  CHECK_THROWS_AS(one_class.validate(), std::invalid_argument);
  ModelConfig deep = c;
  deep.middle_merge_levels = 7;
  CHECK_THROWS_AS(deep.validate(), std::invalid_argument);
}

TEST_CASE("forward output shapes match the box inventory for every strategy") {
  const ImagePair pair = test_pair();
  const int a = desk_box_count();
  for (Strategy strat : {Strategy::late, Strategy::middle, Strategy::early}) {
    ModelConfig cfg = ModelConfig::desk(3);
    cfg.strategy = strat;
    auto model = Detector<float>::create(cfg);
    auto out = model.forward(pair);
    CHECK(out.deltas.shape() == std::vector<int>{a, 4});
    CHECK(out.scores.shape() == std::vector<int>{a, 2});
    for (float v : out.deltas.data()) CHECK(std::isfinite(v));
    for (float v : out.scores.data()) CHECK(std::isfinite(v));
  }
  CHECK(generate_default_boxes(ModelConfig::desk().boxes).size() == static_cast<std::size_t>(a));
}

TEST_CASE("component inventory per strategy") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.strategy = Strategy::late;
  auto late = Detector<float>::create(cfg);
  CHECK(late.stream_b.has_value());
  CHECK(late.fwn.has_value());
  CHECK(late.nins.empty());

  cfg.strategy = Strategy::middle;
  auto middle = Detector<float>::create(cfg);
  CHECK(middle.stream_b.has_value());
  CHECK(!middle.fwn.has_value());
  CHECK(middle.nins.size() == 3);

  cfg.strategy = Strategy::early;
  auto early = Detector<float>::create(cfg);
  CHECK(!early.stream_b.has_value());
  CHECK(!early.fwn.has_value());
  // early consumes the 6-channel stack in its first stem conv
  CHECK(early.stream_a.stem[0].conv.dw.shape()[0] == 6);

  cfg.strategy = Strategy::late;
  cfg.stream = StreamMode::visual;
  auto mono = Detector<float>::create(cfg);
  CHECK(!mono.stream_b.has_value());
  CHECK(!mono.fwn.has_value());
}

TEST_CASE("fusion weights live in (0,1) and respond to the fwn mode") {
  const ImagePair pair = test_pair();
  ModelConfig cfg = ModelConfig::desk(5);
  auto model = Detector<float>::create(cfg);
  auto out = model.forward(pair);
  CHECK(out.w_c > 0.0f);
  CHECK(out.w_c < 1.0f);
  CHECK(out.w_l > 0.0f);
  CHECK(out.w_l < 1.0f);

  cfg.fwn = FwnMode::fixed_half;
  auto fixed = Detector<float>::create(cfg);
  auto fout = fixed.forward(pair);
  CHECK(fout.w_c == 0.5f);
  CHECK(fout.w_l == 0.5f);
}

TEST_CASE("forcing the fusion weight to 0.5 reproduces the fixed-half variant bit for bit") {
  const ImagePair pair = test_pair();
  ModelConfig cfg = ModelConfig::desk(7);
  auto full = Detector<float>::create(cfg);
  cfg.fwn = FwnMode::fixed_half;
  auto fixed = Detector<float>::create(cfg);  // same seed: identical weights
  auto a = full.forward(pair, std::make_pair(0.5f, 0.5f));
  auto b = fixed.forward(pair);
  CHECK(same_values(a.deltas, b.deltas));
  CHECK(same_values(a.scores, b.scores));
}

TEST_CASE("forced fusion weights select a single stream exactly") {
  const ImagePair pair = test_pair();
  ModelConfig cfg = ModelConfig::desk(11);
  auto model = Detector<float>::create(cfg);
  // weight 1: all signal from the visual stream, thermal content irrelevant
  auto a = model.forward(pair, std::make_pair(1.0f, 1.0f));
  auto a2 = model.forward(with_scrambled_thermal(pair), std::make_pair(1.0f, 1.0f));
  CHECK(same_values(a.deltas, a2.deltas));
  CHECK(same_values(a.scores, a2.scores));
  // weight 0: all signal from the thermal stream
  auto b = model.forward(pair, std::make_pair(0.0f, 0.0f));
  auto b2 = model.forward(with_scrambled_visual(pair), std::make_pair(0.0f, 0.0f));
  CHECK(same_values(b.deltas, b2.deltas));
  CHECK(same_values(b.scores, b2.scores));
  // and the two extremes disagree
  CHECK(!same_values(a.deltas, b.deltas));
}

TEST_CASE("fwn ablations ignore the dropped modality when weighing") {
  const ImagePair pair = test_pair();
  ModelConfig cfg = ModelConfig::desk(13);
  cfg.fwn = FwnMode::visual_only;
  auto vis = Detector<float>::create(cfg);
  auto w1 = vis.forward(pair);
  auto w2 = vis.forward(with_scrambled_thermal(pair));
  CHECK(w1.w_c == w2.w_c);
  CHECK(w1.w_l == w2.w_l);

  cfg.fwn = FwnMode::thermal_only;
  auto th = Detector<float>::create(cfg);
  auto w3 = th.forward(pair);
  auto w4 = th.forward(with_scrambled_visual(pair));
  CHECK(w3.w_c == w4.w_c);
  // full mode reacts to both
  cfg.fwn = FwnMode::full;
  auto full = Detector<float>::create(cfg);
  CHECK(full.forward(pair).w_c != full.forward(with_scrambled_thermal(pair)).w_c);
}

TEST_CASE("single-stream models ignore the other image entirely") {
  const ImagePair pair = test_pair();
  ModelConfig cfg = ModelConfig::desk(17);
  cfg.stream = StreamMode::visual;
  auto vis = Detector<float>::create(cfg);
  auto a = vis.forward(pair);
  auto b = vis.forward(with_scrambled_thermal(pair));
  CHECK(same_values(a.deltas, b.deltas));
  CHECK(same_values(a.scores, b.scores));

  cfg.stream = StreamMode::thermal;
  auto th = Detector<float>::create(cfg);
  auto c = th.forward(pair);
  auto d = th.forward(with_scrambled_visual(pair));
  CHECK(same_values(c.deltas, d.deltas));
  CHECK(same_values(c.scores, d.scores));
}

TEST_CASE("initialization is deterministic in the seed") {
  ModelConfig cfg = ModelConfig::desk(23);
  auto a = Detector<float>::create(cfg);
  auto b = Detector<float>::create(cfg);
  std::map<std::string, std::vector<float>> pa, pb;
  a.visit_params([&](const std::string& n, Tensor<float>& t) { pa[n] = t.data(); });
  b.visit_params([&](const std::string& n, Tensor<float>& t) { pb[n] = t.data(); });
  CHECK(pa == pb);
  CHECK(a.param_count() == b.param_count());
  CHECK(a.param_count() > 0);

  cfg.seed = 24;
  auto c = Detector<float>::create(cfg);
  std::map<std::string, std::vector<float>> pc;
  c.visit_params([&](const std::string& n, Tensor<float>& t) { pc[n] = t.data(); });
  CHECK(pa != pc);
}

TEST_CASE("forward is bit-deterministic across repeats") {
  const ImagePair pair = test_pair();
  auto model = Detector<float>::create(ModelConfig::desk(29));
  auto first = model.forward(pair);
  for (int i = 0; i < 3; ++i) {
    auto again = model.forward(pair);
    CHECK(same_values(first.deltas, again.deltas));
    CHECK(same_values(first.scores, again.scores));
    CHECK(first.w_c == again.w_c);
  }
}

TEST_CASE("wrong input resolution is rejected with both sizes named") {
  auto model = Detector<float>::create(ModelConfig::desk());
  const ImagePair small = test_pair(9, 48);
  CHECK_THROWS_WITH_AS(model.forward(small), doctest::Contains("48"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(model.forward(small), doctest::Contains("96"), std::invalid_argument);
}

TEST_CASE("image_to_tensor scales to [0,1] and replicates single channels") {
  ImageU8 gray;
  gray.width = gray.height = 2;
  gray.channels = 1;
  gray.data = {0, 51, 102, 255};
  Tensor<float> t = image_to_tensor<float>(gray);
  CHECK(t.shape() == std::vector<int>{1, 3, 2, 2});
  for (int c = 0; c < 3; ++c) {
    CHECK(t.data()[c * 4 + 0] == 0.0f);
    CHECK(t.data()[c * 4 + 1] == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(t.data()[c * 4 + 3] == 1.0f);
  }
}

TEST_CASE("blend is the convex combination") {
  Tensor<float> a({2}, {1.0f, 4.0f});
  Tensor<float> b({2}, {3.0f, 0.0f});
  Tensor<float> w = Tensor<float>::scalar(0.25f);
  Tensor<float> y = blend(a, b, w);
  CHECK(y.data()[0] == doctest::Approx(0.25 * 1 + 0.75 * 3).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("the three-ratio box design cuts head MACs by at least 20 percent") {
  ModelConfig improved = ModelConfig::desk();
  ModelConfig original = improved;
  original.boxes.variant = BoxVariant::original_ssd;
  const double red =
      1.0 - static_cast<double>(head_mac_count(improved)) / static_cast<double>(head_mac_count(original));
  CHECK(red >= 0.20);

  // same story at the reference resolution
  ModelConfig ref;
  ref.pyramid = PyramidConfig::reference300();
  ref.boxes.level_extents = ref.pyramid.level_extents();
  ModelConfig ref_orig = ref;
  ref_orig.boxes.variant = BoxVariant::original_ssd;
  const double red_ref =
      1.0 - static_cast<double>(head_mac_count(ref)) / static_cast<double>(head_mac_count(ref_orig));
  CHECK(red_ref >= 0.20);
}

TEST_CASE("mac counter covers every strategy and scales with fusion extras") {
  ModelConfig cfg = ModelConfig::desk();
  const std::size_t late = model_mac_count(cfg);
  cfg.fwn = FwnMode::fixed_half;
  const std::size_t fixed = model_mac_count(cfg);
  CHECK(late > fixed);  // the fwn costs something
  cfg.fwn = FwnMode::full;
  cfg.strategy = Strategy::early;
  const std::size_t early = model_mac_count(cfg);
  CHECK(early < late);  // one stream instead of two plus fwn
  cfg.strategy = Strategy::middle;
  CHECK(model_mac_count(cfg) > early);
  cfg.stream = StreamMode::thermal;
  cfg.strategy = Strategy::late;
  CHECK(model_mac_count(cfg) < late);
}
