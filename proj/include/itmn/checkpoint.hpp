#pragma once

// Checkpoint container: 8-byte magic, little-endian uint64 header length,
// JSON header describing an ordered list of tensor records, then the raw
// tensor payloads. Loading and re-saving a container reproduces it byte for
// byte, which the resume and determinism tests rely on.

#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "itmn/model.hpp"
#include "itmn/trainer.hpp"

namespace itmn {

inline constexpr char kCheckpointMagic[9] = "ITMNCKP1";

struct TensorBlob {
  std::string name;
  std::vector<int> shape;
  std::string dtype;  // "f32", "f64", or "i8"
  std::vector<std::uint8_t> bytes;
};

struct Checkpoint {
  nlohmann::json metadata;
  std::vector<TensorBlob> tensors;

  const TensorBlob* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const Checkpoint& ckp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

namespace detail {

template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}

template <typename T>
TensorBlob make_blob(const std::string& name, const std::vector<int>& shape, const std::vector<T>& data) {
  TensorBlob b;
  b.name = name;
  b.shape = shape;
  b.dtype = dtype_name<T>();
  b.bytes.resize(data.size() * sizeof(T));
  std::memcpy(b.bytes.data(), data.data(), b.bytes.size());
  return b;
}

template <typename T>
std::vector<T> blob_values(const TensorBlob& b) {
  if (b.dtype != dtype_name<T>())
    throw std::runtime_error("checkpoint: tensor '" + b.name + "' has dtype " + b.dtype + ", expected " +
                             dtype_name<T>());
  std::vector<T> v(b.bytes.size() / sizeof(T));
  std::memcpy(v.data(), b.bytes.data(), b.bytes.size());
  return v;
}

}  // namespace detail

template <typename T>
Checkpoint detector_to_checkpoint(Detector<T>& model, const Trainer<T>* trainer = nullptr, int next_epoch = 0) {
  Checkpoint ckp;
  ckp.metadata["format_version"] = 1;
  ckp.metadata["model"] = model_config_to_json(model.cfg);
  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    ckp.tensors.push_back(detail::make_blob<T>("param:" + name, t.shape(), t.data()));
  });
  model.visit_buffers([&](const std::string& name, std::vector<T>& v) {
    ckp.tensors.push_back(detail::make_blob<T>("buffer:" + name, {static_cast<int>(v.size())}, v));
  });
  if (trainer) {
    ckp.metadata["trainer"]["next_epoch"] = next_epoch;
    ckp.metadata["trainer"]["momentum"] = trainer->cfg.momentum;
    if (trainer->cfg.momentum != 0.0)
      for (const auto& [name, v] : trainer->velocity)
        ckp.tensors.push_back(detail::make_blob<T>("velocity:" + name, {static_cast<int>(v.size())}, v));
  }
  return ckp;
}

template <typename T>
Detector<T> detector_from_checkpoint(const Checkpoint& ckp) {
  ModelConfig cfg = model_config_from_json(ckp.metadata.at("model"));
  Detector<T> model = Detector<T>::create(cfg);
  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    const TensorBlob* b = ckp.find("param:" + name);
    if (!b) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (b->shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " + shape_str(b->shape) +
                               ", model expects " + shape_str(t.shape()));
    t.data() = detail::blob_values<T>(*b);
  });
  model.visit_buffers([&](const std::string& name, std::vector<T>& v) {
    const TensorBlob* b = ckp.find("buffer:" + name);
    if (!b) throw std::runtime_error("checkpoint: missing buffer '" + name + "'");
    v = detail::blob_values<T>(*b);
  });
  return model;
}

template <typename T>
void trainer_from_checkpoint(const Checkpoint& ckp, Trainer<T>& trainer, int* next_epoch) {
  if (!ckp.metadata.contains("trainer")) throw std::runtime_error("checkpoint: no trainer state present");
  *next_epoch = ckp.metadata["trainer"]["next_epoch"].get<int>();
  trainer.velocity.clear();
  for (const auto& b : ckp.tensors)
    if (b.name.rfind("velocity:", 0) == 0) trainer.velocity[b.name.substr(9)] = detail::blob_values<T>(b);
}

}  // namespace itmn
