#include "itmn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace itmn {

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::early: return "early";
    case Strategy::middle: return "middle";
    default: return "late";
  }
}
const char* stream_name(StreamMode s) {
  switch (s) {
    case StreamMode::visual: return "visual";
    case StreamMode::thermal: return "thermal";
    default: return "dual";
  }
}
const char* fwn_name(FwnMode f) {
  switch (f) {
    case FwnMode::full: return "full";
    case FwnMode::visual_only: return "visual_only";
    case FwnMode::thermal_only: return "thermal_only";
    default: return "fixed_half";
  }
}

Strategy strategy_from(const std::string& s) {
  if (s == "early") return Strategy::early;
  if (s == "middle") return Strategy::middle;
  if (s == "late") return Strategy::late;
  throw std::runtime_error("checkpoint: unknown fusion strategy '" + s + "'");
}
StreamMode stream_from(const std::string& s) {
  if (s == "visual") return StreamMode::visual;
  if (s == "thermal") return StreamMode::thermal;
  if (s == "dual") return StreamMode::dual;
  throw std::runtime_error("checkpoint: unknown stream mode '" + s + "'");
}
FwnMode fwn_from(const std::string& s) {
  if (s == "full") return FwnMode::full;
  if (s == "visual_only") return FwnMode::visual_only;
  if (s == "thermal_only") return FwnMode::thermal_only;
  if (s == "fixed_half") return FwnMode::fixed_half;
  throw std::runtime_error("checkpoint: unknown fusion weight mode '" + s + "'");
}

nlohmann::json stage_to_json(const StageSpec& s) {
  return {{"out_channels", s.out_channels}, {"stride", s.stride}, {"pad", s.pad},
          {"kernel", s.kernel},             {"expect_out", s.expect_out}};
}
StageSpec stage_from_json(const nlohmann::json& j) {
  StageSpec s;
  s.out_channels = j.at("out_channels").get<int>();
  s.stride = j.at("stride").get<int>();
  s.pad = j.at("pad").get<int>();
  s.kernel = j.at("kernel").get<int>();
  s.expect_out = j.at("expect_out").get<int>();
  return s;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["pyramid"]["input_size"] = cfg.pyramid.input_size;
  j["pyramid"]["stem"] = nlohmann::json::array();
  for (const auto& s : cfg.pyramid.stem) j["pyramid"]["stem"].push_back(stage_to_json(s));
  j["pyramid"]["levels"] = nlohmann::json::array();
  for (const auto& s : cfg.pyramid.levels) j["pyramid"]["levels"].push_back(stage_to_json(s));
  j["strategy"] = strategy_name(cfg.strategy);
  j["stream"] = stream_name(cfg.stream);
  j["fwn"] = fwn_name(cfg.fwn);
  j["boxes"]["s_min"] = cfg.boxes.s_min;
  j["boxes"]["s_max"] = cfg.boxes.s_max;
  j["boxes"]["aspect_ratios"] = cfg.boxes.aspect_ratios;
  j["boxes"]["level_extents"] = cfg.boxes.level_extents;
  j["boxes"]["variant"] = cfg.boxes.variant == BoxVariant::improved ? "improved" : "original_ssd";
  j["boxes"]["variance_center"] = cfg.boxes.variance_center;
  j["boxes"]["variance_size"] = cfg.boxes.variance_size;
  j["num_classes"] = cfg.num_classes;
  j["middle_merge_levels"] = cfg.middle_merge_levels;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.pyramid.input_size = j.at("pyramid").at("input_size").get<int>();
  cfg.pyramid.stem.clear();
  for (const auto& s : j.at("pyramid").at("stem")) cfg.pyramid.stem.push_back(stage_from_json(s));
  cfg.pyramid.levels.clear();
  for (const auto& s : j.at("pyramid").at("levels")) cfg.pyramid.levels.push_back(stage_from_json(s));
  cfg.strategy = strategy_from(j.at("strategy").get<std::string>());
  cfg.stream = stream_from(j.at("stream").get<std::string>());
  cfg.fwn = fwn_from(j.at("fwn").get<std::string>());
  const auto& b = j.at("boxes");
  cfg.boxes.s_min = b.at("s_min").get<double>();
  cfg.boxes.s_max = b.at("s_max").get<double>();
  cfg.boxes.aspect_ratios = b.at("aspect_ratios").get<std::vector<double>>();
  cfg.boxes.level_extents = b.at("level_extents").get<std::vector<int>>();
  const std::string variant = b.at("variant").get<std::string>();
  if (variant == "improved") {
    cfg.boxes.variant = BoxVariant::improved;
  } else if (variant == "original_ssd") {
    cfg.boxes.variant = BoxVariant::original_ssd;
  } else {
    throw std::runtime_error("checkpoint: unknown box variant '" + variant + "'");
  }
  cfg.boxes.variance_center = b.at("variance_center").get<double>();
  cfg.boxes.variance_size = b.at("variance_size").get<double>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.middle_merge_levels = j.at("middle_merge_levels").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void save_checkpoint(const Checkpoint& ckp, const std::string& path) {
  nlohmann::json header;
  header["metadata"] = ckp.metadata;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckp.tensors) {
    header["tensors"].push_back({{"name", t.name},
                                 {"shape", t.shape},
                                 {"dtype", t.dtype},
                                 {"offset", offset},
                                 {"length", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const std::string hs = header.dump();

  std::string out;
  out.append(kCheckpointMagic, 8);
  put_u64_le(out, hs.size());
  out.append(hs);
  for (const auto& t : ckp.tensors) out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() < 16) throw std::runtime_error("checkpoint: '" + path + "' truncated at byte " +
                                                std::to_string(raw.size()));
  if (std::memcmp(raw.data(), kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' has wrong magic");
  const std::uint64_t hlen = get_u64_le(raw.data() + 8);
  if (16 + hlen > raw.size())
    throw std::runtime_error("checkpoint: '" + path + "' header length " + std::to_string(hlen) +
                             " exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: '" + path + "' header is not valid JSON: " + e.what());
  }

  Checkpoint ckp;
  ckp.metadata = header.at("metadata");
  const std::size_t payload_base = 16 + hlen;
  for (const auto& tj : header.at("tensors")) {
    TensorBlob b;
    b.name = tj.at("name").get<std::string>();
    b.shape = tj.at("shape").get<std::vector<int>>();
    b.dtype = tj.at("dtype").get<std::string>();
    const std::uint64_t off = tj.at("offset").get<std::uint64_t>();
    const std::uint64_t len = tj.at("length").get<std::uint64_t>();
    if (payload_base + off + len > raw.size())
      throw std::runtime_error("checkpoint: tensor '" + b.name + "' payload at offset " + std::to_string(off) +
                               " runs past end of file");
    b.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(payload_base + off),
                   raw.begin() + static_cast<std::ptrdiff_t>(payload_base + off + len));
    ckp.tensors.push_back(std::move(b));
  }
  return ckp;
}

}  // namespace itmn
