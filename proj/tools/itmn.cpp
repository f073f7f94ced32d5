// Command-line front end: dataset generation, training, evaluation,
// quantization, and benchmarking.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "itmn/checkpoint.hpp"
#include "itmn/config.hpp"
#include "itmn/detect.hpp"
#include "itmn/eval.hpp"
#include "itmn/model.hpp"
#include "itmn/quant.hpp"
#include "itmn/synthdata.hpp"
#include "itmn/trainer.hpp"

namespace fs = std::filesystem;
using namespace itmn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << text;
}

Dataset load_or_generate(const DataConfig& dc) {
  if (!dc.path.empty()) {
    try {
      return read_dataset(dc.path);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  }
  GeneratorConfig gc;
  gc.resolution = dc.resolution;
  gc.day_fraction = dc.day_fraction;
  return generate_dataset(dc.count, dc.seed, gc);
}

int cmd_gen_data(const std::string& out, int count, std::uint64_t seed, int resolution, double day_fraction) {
  if (count <= 0) throw ConfigError("--count must be positive");
  GeneratorConfig gc;
  gc.resolution = resolution;
  gc.day_fraction = day_fraction;
  Dataset ds = generate_dataset(count, seed, gc);
  try {
    fs::create_directories(out);
    write_dataset(ds, out);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  std::cout << "wrote " << ds.pairs.size() << " pairs to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& resume_path) {
  RunConfig cfg = load_run_config(config_path);
  Dataset ds = load_or_generate(cfg.data);
  if (cfg.model.pyramid.input_size != ds.resolution)
    throw DataError("dataset resolution " + std::to_string(ds.resolution) + " does not match model input size " +
                    std::to_string(cfg.model.pyramid.input_size));

  DefaultBoxSet boxes = generate_default_boxes(cfg.model.boxes);
  Detector<float> model = Detector<float>::create(cfg.model);
  Trainer<float> trainer(cfg.train);
  int start_epoch = 0;
  if (!resume_path.empty()) {
    Checkpoint ckp = load_checkpoint(resume_path);
    model = detector_from_checkpoint<float>(ckp);
    trainer_from_checkpoint(ckp, trainer, &start_epoch);
  }

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "resolved_config.json", run_config_to_json_text(cfg));
  trainer.fit(model, ds, boxes, start_epoch);

  Checkpoint ckp = detector_to_checkpoint(model, &trainer, cfg.train.epochs);
  save_checkpoint(ckp, (fs::path(out_dir) / "model.ckpt").string());
  write_text(fs::path(out_dir) / "train_log.csv", train_log_to_csv(trainer.log));
  std::cout << "trained " << cfg.train.epochs - start_epoch << " epochs, checkpoint at " << out_dir
            << "/model.ckpt\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split, bool filter_temp,
             const std::string& curve_out, const std::string& averaging, double conf_threshold) {
  Dataset ds;
  try {
    ds = read_dataset(data_dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (filter_temp) ds = filter_scenario(ds, derive_filter(ds));
  if (ds.pairs.empty()) throw DataError("no samples left to evaluate");

  Checkpoint ckp = load_checkpoint(ckpt_path);
  const bool quantized = ckp.metadata.value("quantized", false);
  DetectConfig dc;
  dc.conf_threshold = conf_threshold;
  std::vector<ImageEval> images;
  if (quantized) {
    QuantizedDetector model = QuantizedDetector::from_checkpoint(ckp);
    DefaultBoxSet boxes = generate_default_boxes(model.cfg.boxes);
    images = evaluate_dataset_quantized(model, ds, boxes, QRunMode::integer, dc);
  } else {
    Detector<float> model = detector_from_checkpoint<float>(ckp);
    DefaultBoxSet boxes = generate_default_boxes(model.cfg.boxes);
    images = evaluate_dataset(model, ds, boxes, dc);
  }

  if (split == "day" || split == "night") {
    std::vector<ImageEval> kept;
    for (auto& im : images)
      if (im.day == (split == "day")) kept.push_back(std::move(im));
    images = std::move(kept);
    if (images.empty()) throw DataError("no images in split '" + split + "'");
  }

  const MrAveraging mode = averaging == "arith" ? MrAveraging::arith_mean : MrAveraging::log_mean;
  EvalReport report = evaluate_images(images, mode);
  std::cout << report.to_text();
  if (!curve_out.empty()) write_text(curve_out, curve_to_csv(report.curve_all));
  return 0;
}

int cmd_quantize(const std::string& ckpt_path, const std::string& calib_dir, const std::string& out_path,
                 int finetune_epochs, bool floor_mode, const std::string& config_path) {
  Dataset calib;
  try {
    calib = read_dataset(calib_dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  Checkpoint ckp = load_checkpoint(ckpt_path);
  Detector<float> model = detector_from_checkpoint<float>(ckp);
  DefaultBoxSet boxes = generate_default_boxes(model.cfg.boxes);

  QuantizeOptions opts;
  opts.mode = floor_mode ? RoundMode::floor_literal : RoundMode::half_even;
  opts.finetune_epochs = finetune_epochs;
  if (!config_path.empty()) {
    RunConfig rc = load_run_config(config_path);
    opts.finetune = rc.train;
  }
  QuantizedDetector q = quantize_model(model, calib, boxes, opts);
  save_checkpoint(q.to_checkpoint(), out_path);

  // weight payload ratio against the float model's parameter bytes
  std::size_t float_bytes = 0;
  model.visit_params([&](const std::string&, Tensor<float>& t) { float_bytes += t.numel() * sizeof(float); });
  const double ratio = static_cast<double>(q.quantized_payload_bytes()) / static_cast<double>(float_bytes);
  std::cout << "quantized payload: " << q.quantized_payload_bytes() << " bytes, float payload: " << float_bytes
            << " bytes, ratio: " << ratio << "\n";
  return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& data_dir, int repeat) {
  if (repeat < 3) throw ConfigError("--repeat must be at least 3");
  Dataset ds;
  try {
    ds = read_dataset(data_dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (ds.pairs.empty()) throw DataError("empty dataset");

  Checkpoint ckp = load_checkpoint(ckpt_path);
  const bool quantized = ckp.metadata.value("quantized", false);
  std::vector<double> samples;

  if (quantized) {
    QuantizedDetector model = QuantizedDetector::from_checkpoint(ckp);
    DefaultBoxSet boxes = generate_default_boxes(model.cfg.boxes);
    for (int r = 0; r < repeat; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& pair : ds.pairs) model.forward(pair, QRunMode::integer);
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double>(t1 - t0).count() / ds.pairs.size());
    }
    std::cout << "mode: quantized int8\n";
    std::cout << "multiply-accumulates per image: " << model_mac_count(model.cfg) << "\n";
    std::cout << "weight bytes: " << model.quantized_payload_bytes() << "\n";
  } else {
    Detector<float> model = detector_from_checkpoint<float>(ckp);
    DefaultBoxSet boxes = generate_default_boxes(model.cfg.boxes);
    model.training = false;
    for (int r = 0; r < repeat; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& pair : ds.pairs) model.forward(pair);
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double>(t1 - t0).count() / ds.pairs.size());
    }
    std::cout << "mode: float\n";
    std::cout << "multiply-accumulates per image: " << model_mac_count(model.cfg) << "\n";
    std::cout << "parameter count: " << model.param_count() << "\n";
    std::size_t bytes = 0;
    model.visit_params([&](const std::string&, Tensor<float>& t) { bytes += t.numel() * sizeof(float); });
    std::cout << "weight bytes: " << bytes << "\n";
  }

  std::cout << "raw seconds-per-image samples:\n";
  for (double s : samples) std::cout << "  " << s << "\n";
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  double mean = 0;
  for (double s : samples) mean += s;
  mean /= samples.size();
  const double median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                          : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  std::cout << "mean s/image: " << mean << "\nmedian s/image: " << median << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multispectral pedestrian detector toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
  std::string gen_out;
  int gen_count = 200, gen_res = 96;
  std::uint64_t gen_seed = 0;
  double gen_day = 0.5;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of image pairs");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--resolution", gen_res, "square image size");
  gen->add_option("--day-fraction", gen_day, "fraction of day scenes");

  auto* train = app.add_subcommand("train", "train a detector from a config file");
  std::string train_config, train_out, train_resume;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_split = "all", ev_curve, ev_avg = "log";
  bool ev_filter = false;
  double ev_conf = 0.01;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "all|day|night")->check(CLI::IsMember({"all", "day", "night"}));
  ev->add_flag("--filter-temp", ev_filter, "keep only cold low-light scenes");
  ev->add_option("--curve-out", ev_curve, "write miss-rate/FPPI curve CSV here");
  ev->add_option("--averaging", ev_avg, "log|arith")->check(CLI::IsMember({"log", "arith"}));
  ev->add_option("--conf-threshold", ev_conf, "detection confidence pre-filter");

  auto* qz = app.add_subcommand("quantize", "post-training int8 quantization");
  std::string qz_ckpt, qz_calib, qz_out, qz_config;
  int qz_ft = 0;
  bool qz_floor = false;
  qz->add_option("--checkpoint", qz_ckpt, "float checkpoint")->required();
  qz->add_option("--calib", qz_calib, "calibration dataset directory")->required();
  qz->add_option("--out", qz_out, "output quantized checkpoint")->required();
  qz->add_option("--finetune-epochs", qz_ft, "straight-through fine-tune epochs");
  qz->add_flag("--floor-mode", qz_floor, "use the literal floor rounding");
  qz->add_option("--config", qz_config, "run config supplying fine-tune hyperparameters");

  auto* bn = app.add_subcommand("bench", "timing and size report");
  std::string bn_ckpt, bn_data;
  int bn_repeat = 5;
  bn->add_option("--checkpoint", bn_ckpt, "model checkpoint")->required();
  bn->add_option("--data", bn_data, "dataset directory")->required();
  bn->add_option("--repeat", bn_repeat, "timing repetitions (>= 3)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_count, gen_seed, gen_res, gen_day);
    if (train->parsed()) return cmd_train(train_config, train_out, train_resume);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_filter, ev_curve, ev_avg, ev_conf);
    if (qz->parsed()) return cmd_quantize(qz_ckpt, qz_calib, qz_out, qz_ft, qz_floor, qz_config);
    if (bn->parsed()) return cmd_bench(bn_ckpt, bn_data, bn_repeat);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
