#include "itmn/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace itmn {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
void get_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, {"data", "model", "train", "quant", "eval"}, "");

  RunConfig cfg;
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, {"path", "count", "seed", "resolution", "day_fraction"}, "data");
    get_opt(d, "path", cfg.data.path);
    get_opt(d, "count", cfg.data.count);
    get_opt(d, "seed", cfg.data.seed);
    get_opt(d, "resolution", cfg.data.resolution);
    get_opt(d, "day_fraction", cfg.data.day_fraction);
    if (cfg.data.count <= 0) throw ConfigError("config: data.count must be positive");
    if (cfg.data.day_fraction < 0.0 || cfg.data.day_fraction > 1.0)
      throw ConfigError("config: data.day_fraction outside [0,1]");
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, {"strategy", "stream", "fwn", "box_variant", "input_size", "seed", "num_classes",
                   "middle_merge_levels"},
               "model");
    int input_size = 96;
    get_opt(m, "input_size", input_size);
    cfg.model.pyramid = PyramidConfig::desk(input_size);
    if (m.contains("strategy")) {
      const std::string s = m["strategy"].get<std::string>();
      if (s == "early") {
        cfg.model.strategy = Strategy::early;
      } else if (s == "middle") {
        cfg.model.strategy = Strategy::middle;
      } else if (s == "late") {
        cfg.model.strategy = Strategy::late;
      } else {
        throw ConfigError("config: model.strategy must be early|middle|late, got '" + s + "'");
      }
    }
    if (m.contains("stream")) {
      const std::string s = m["stream"].get<std::string>();
      if (s == "visual") {
        cfg.model.stream = StreamMode::visual;
      } else if (s == "thermal") {
        cfg.model.stream = StreamMode::thermal;
      } else if (s == "dual") {
        cfg.model.stream = StreamMode::dual;
      } else {
        throw ConfigError("config: model.stream must be visual|thermal|dual, got '" + s + "'");
      }
    }
    if (m.contains("fwn")) {
      const std::string s = m["fwn"].get<std::string>();
      if (s == "full") {
        cfg.model.fwn = FwnMode::full;
      } else if (s == "visual_only") {
        cfg.model.fwn = FwnMode::visual_only;
      } else if (s == "thermal_only") {
        cfg.model.fwn = FwnMode::thermal_only;
      } else if (s == "fixed_half") {
        cfg.model.fwn = FwnMode::fixed_half;
      } else {
        throw ConfigError("config: model.fwn must be full|visual_only|thermal_only|fixed_half, got '" + s + "'");
      }
    }
    if (m.contains("box_variant")) {
      const std::string s = m["box_variant"].get<std::string>();
      if (s == "improved") {
        cfg.model.boxes.variant = BoxVariant::improved;
      } else if (s == "original_ssd") {
        cfg.model.boxes.variant = BoxVariant::original_ssd;
      } else {
        throw ConfigError("config: model.box_variant must be improved|original_ssd, got '" + s + "'");
      }
    }
    get_opt(m, "seed", cfg.model.seed);
    get_opt(m, "num_classes", cfg.model.num_classes);
    get_opt(m, "middle_merge_levels", cfg.model.middle_merge_levels);
  }
  cfg.model.boxes.level_extents = cfg.model.pyramid.level_extents();
  try {
    cfg.model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, {"base_lr", "epochs", "micro_batch", "accumulation_steps", "momentum", "seed", "augment",
                   "gamma", "alpha"},
               "train");
    get_opt(t, "base_lr", cfg.train.base_lr);
    get_opt(t, "epochs", cfg.train.epochs);
    get_opt(t, "micro_batch", cfg.train.micro_batch);
    get_opt(t, "accumulation_steps", cfg.train.accumulation_steps);
    get_opt(t, "momentum", cfg.train.momentum);
    get_opt(t, "seed", cfg.train.seed);
    get_opt(t, "augment", cfg.train.augment);
    get_opt(t, "gamma", cfg.train.loss.gamma);
    get_opt(t, "alpha", cfg.train.loss.alpha);
    if (cfg.train.epochs <= 0) throw ConfigError("config: train.epochs must be positive");
    if (cfg.train.micro_batch <= 0 || cfg.train.accumulation_steps <= 0)
      throw ConfigError("config: train.micro_batch and train.accumulation_steps must be positive");
    if (cfg.train.base_lr <= 0) throw ConfigError("config: train.base_lr must be positive");
  }

  if (j.contains("quant")) {
    const json& q = j["quant"];
    check_keys(q, {"round_mode", "finetune_epochs"}, "quant");
    if (q.contains("round_mode")) {
      const std::string s = q["round_mode"].get<std::string>();
      if (s == "half_even") {
        cfg.quant.mode = RoundMode::half_even;
      } else if (s == "floor_literal") {
        cfg.quant.mode = RoundMode::floor_literal;
      } else {
        throw ConfigError("config: quant.round_mode must be half_even|floor_literal, got '" + s + "'");
      }
    }
    get_opt(q, "finetune_epochs", cfg.quant.finetune_epochs);
    if (cfg.quant.finetune_epochs < 0) throw ConfigError("config: quant.finetune_epochs must be >= 0");
  }

  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, {"averaging", "conf_threshold", "nms_iou"}, "eval");
    if (e.contains("averaging")) {
      const std::string s = e["averaging"].get<std::string>();
      if (s == "log") {
        cfg.eval.averaging = MrAveraging::log_mean;
      } else if (s == "arith") {
        cfg.eval.averaging = MrAveraging::arith_mean;
      } else {
        throw ConfigError("config: eval.averaging must be log|arith, got '" + s + "'");
      }
    }
    get_opt(e, "conf_threshold", cfg.eval.conf_threshold);
    get_opt(e, "nms_iou", cfg.eval.nms_iou);
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return run_config_from_json_text(text);
}

std::string run_config_to_json_text(const RunConfig& cfg) {
  json j;
  j["data"]["path"] = cfg.data.path;
  j["data"]["count"] = cfg.data.count;
  j["data"]["seed"] = cfg.data.seed;
  j["data"]["resolution"] = cfg.data.resolution;
  j["data"]["day_fraction"] = cfg.data.day_fraction;
  j["model"]["input_size"] = cfg.model.pyramid.input_size;
  j["model"]["strategy"] = cfg.model.strategy == Strategy::early    ? "early"
                           : cfg.model.strategy == Strategy::middle ? "middle"
                                                                    : "late";
  j["model"]["stream"] = cfg.model.stream == StreamMode::visual    ? "visual"
                         : cfg.model.stream == StreamMode::thermal ? "thermal"
                                                                   : "dual";
  j["model"]["fwn"] = cfg.model.fwn == FwnMode::full          ? "full"
                      : cfg.model.fwn == FwnMode::visual_only ? "visual_only"
                      : cfg.model.fwn == FwnMode::thermal_only ? "thermal_only"
                                                               : "fixed_half";
  j["model"]["box_variant"] = cfg.model.boxes.variant == BoxVariant::improved ? "improved" : "original_ssd";
  j["model"]["seed"] = cfg.model.seed;
  j["model"]["num_classes"] = cfg.model.num_classes;
  j["model"]["middle_merge_levels"] = cfg.model.middle_merge_levels;
  j["train"]["base_lr"] = cfg.train.base_lr;
  j["train"]["epochs"] = cfg.train.epochs;
  j["train"]["micro_batch"] = cfg.train.micro_batch;
  j["train"]["accumulation_steps"] = cfg.train.accumulation_steps;
  j["train"]["momentum"] = cfg.train.momentum;
  j["train"]["seed"] = cfg.train.seed;
  j["train"]["augment"] = cfg.train.augment;
  j["train"]["gamma"] = cfg.train.loss.gamma;
  j["train"]["alpha"] = cfg.train.loss.alpha;
  j["quant"]["round_mode"] = cfg.quant.mode == RoundMode::half_even ? "half_even" : "floor_literal";
  j["quant"]["finetune_epochs"] = cfg.quant.finetune_epochs;
  j["eval"]["averaging"] = cfg.eval.averaging == MrAveraging::log_mean ? "log" : "arith";
  j["eval"]["conf_threshold"] = cfg.eval.conf_threshold;
  j["eval"]["nms_iou"] = cfg.eval.nms_iou;
  return j.dump(2) + "\n";
}

}  // namespace itmn
