#pragma once

// Run configuration: one JSON file with data/model/train/quant/eval
// sections, validated against a strict schema (unknown keys are errors).

#include <stdexcept>
#include <string>

#include "itmn/eval.hpp"
#include "itmn/model.hpp"
#include "itmn/quant.hpp"
#include "itmn/synthdata.hpp"
#include "itmn/trainer.hpp"

namespace itmn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string path;  // dataset directory; empty means generate in-process
  int count = 200;
  std::uint64_t seed = 0;
  int resolution = 96;
  double day_fraction = 0.5;
};

struct EvalRunConfig {
  MrAveraging averaging = MrAveraging::log_mean;
  double conf_threshold = 0.01;
  double nms_iou = 0.45;
};

struct QuantRunConfig {
  RoundMode mode = RoundMode::half_even;
  int finetune_epochs = 5;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  QuantRunConfig quant;
  EvalRunConfig eval;
};

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_to_json_text(const RunConfig& cfg);  // the resolved copy written next to outputs

}  // namespace itmn
