#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "itmn/checkpoint.hpp"

using namespace itmn;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.metadata["format_version"] = 1;
  c.metadata["note"] = "unit";
  c.tensors.push_back(detail::make_blob<float>("param:a", {2, 3}, {1, 2, 3, 4, 5, 6}));
  c.tensors.push_back(detail::make_blob<double>("param:b", {2}, {0.5, -0.5}));
  return c;
}

ModelConfig tiny_model_config() {
  PyramidConfig p;
  p.input_size = 32;
  p.stem = {{4, 2, 1, 3, 16}};
  p.levels = {{4, 2, 1, 3, 8},  {8, 1, 0, 3, 6}, {8, 1, 0, 3, 4},
              {8, 1, 0, 2, 3},  {8, 1, 0, 2, 2}, {8, 2, 0, 2, 1}};
  ModelConfig c;
  c.pyramid = p;
  c.boxes.level_extents = p.level_extents();
  return c;
}

}  // namespace

TEST_CASE("save, load, save again is byte-identical") {
  const fs::path dir = fs::temp_directory_path() / "itmn_ckpt";
  fs::create_directories(dir);
  const fs::path p1 = dir / "a.ckpt", p2 = dir / "b.ckpt";
  Checkpoint c = sample_checkpoint();
  save_checkpoint(c, p1.string());
  Checkpoint loaded = load_checkpoint(p1.string());
  save_checkpoint(loaded, p2.string());
  CHECK(slurp(p1) == slurp(p2));
  CHECK(loaded.metadata.at("note") == "unit");
  REQUIRE(loaded.tensors.size() == 2);
  CHECK(loaded.tensors[0].name == "param:a");
  CHECK(loaded.tensors[0].shape == std::vector<int>{2, 3});
  CHECK(detail::blob_values<float>(loaded.tensors[0]) == std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(detail::blob_values<double>(loaded.tensors[1]) == std::vector<double>{0.5, -0.5});
  fs::remove_all(dir);
}

TEST_CASE("container validation errors") {
  const fs::path dir = fs::temp_directory_path() / "itmn_ckpt_err";
  fs::create_directories(dir);
  const fs::path p = dir / "x.ckpt";
  save_checkpoint(sample_checkpoint(), p.string());

  // corrupt magic
  {
    auto bytes = slurp(p);
    bytes[0] = 'X';
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<char*>(bytes.data()), bytes.size());
    CHECK_THROWS_WITH_AS(load_checkpoint(p.string()), doctest::Contains("magic"), std::runtime_error);
  }
  // truncated payload
  {
    save_checkpoint(sample_checkpoint(), p.string());
    fs::resize_file(p, fs::file_size(p) - 5);
    CHECK_THROWS_AS(load_checkpoint(p.string()), std::runtime_error);
  }
  // missing file
  CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), std::runtime_error);
  // wrong dtype request
  Checkpoint c = sample_checkpoint();
  CHECK_THROWS_WITH_AS(detail::blob_values<double>(c.tensors[0]), doctest::Contains("dtype"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("detector checkpoint rejects a missing parameter") {
  auto model = Detector<float>::create(tiny_model_config());
  Checkpoint ckp = detector_to_checkpoint(model);
  ckp.tensors.erase(ckp.tensors.begin());  // drop the first parameter
  CHECK_THROWS_WITH_AS(detector_from_checkpoint<float>(ckp), doctest::Contains("missing parameter"),
                       std::runtime_error);
}

TEST_CASE("detector checkpoint rejects a shape mismatch") {
  auto model = Detector<float>::create(tiny_model_config());
  Checkpoint ckp = detector_to_checkpoint(model);
  ckp.tensors[0].shape[0] += 1;
  CHECK_THROWS_WITH_AS(detector_from_checkpoint<float>(ckp), doctest::Contains("shape mismatch"),
                       std::runtime_error);
}

TEST_CASE("detector round trip restores parameters and buffers exactly") {
  auto model = Detector<float>::create(tiny_model_config());
  // make the buffers non-trivial
  model.visit_buffers([](const std::string&, std::vector<float>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.01f * static_cast<float>(i + 1);
  });
  Checkpoint ckp = detector_to_checkpoint(model);
  auto back = detector_from_checkpoint<float>(ckp);
  bool all_equal = true;
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    back.visit_params([&](const std::string& n2, Tensor<float>& t2) {
      if (n2 == name && t2.data() != t.data()) all_equal = false;
    });
  });
  CHECK(all_equal);
  std::size_t buffers = 0;
  model.visit_buffers([&](const std::string& name, std::vector<float>& v) {
    back.visit_buffers([&](const std::string& n2, std::vector<float>& v2) {
      if (n2 == name) {
        ++buffers;
        if (v2 != v) all_equal = false;
      }
    });
  });
  CHECK(all_equal);
  CHECK(buffers > 0);
}

TEST_CASE("model config json round trip across all enum combinations") {
  for (Strategy strat : {Strategy::early, Strategy::middle, Strategy::late})
    for (StreamMode stream : {StreamMode::visual, StreamMode::thermal, StreamMode::dual})
      for (FwnMode fwn : {FwnMode::full, FwnMode::visual_only, FwnMode::thermal_only, FwnMode::fixed_half})
        for (BoxVariant variant : {BoxVariant::improved, BoxVariant::original_ssd}) {
          ModelConfig cfg = tiny_model_config();
          cfg.strategy = strat;
          cfg.stream = stream;
          cfg.fwn = fwn;
          cfg.boxes.variant = variant;
          cfg.middle_merge_levels = 2;
          cfg.seed = 77;
          ModelConfig back = model_config_from_json(model_config_to_json(cfg));
          CHECK(back.strategy == strat);
          CHECK(back.stream == stream);
          CHECK(back.fwn == fwn);
          CHECK(back.boxes.variant == variant);
          CHECK(back.middle_merge_levels == 2);
          CHECK(back.seed == 77);
          CHECK(back.pyramid.input_size == 32);
          CHECK(back.pyramid.level_extents() == cfg.pyramid.level_extents());
          CHECK(back.boxes.level_extents == cfg.boxes.level_extents);
          CHECK(back.num_classes == cfg.num_classes);
        }
}

TEST_CASE("unknown enum names are rejected") {
  nlohmann::json j = model_config_to_json(tiny_model_config());
  j["strategy"] = "sideways";
  CHECK_THROWS_AS(model_config_from_json(j), std::runtime_error);
}
