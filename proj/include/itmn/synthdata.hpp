#pragma once

// Deterministic synthetic paired visual/thermal scene generator with
// controllable illumination (lambda) and temperature (tau), plus the scene
// measures, augmentation, and dataset file I/O. Scenes are built so that
// the visual channel is informative in bright conditions and the thermal
// channel in cold conditions.

#include <cstdint>
#include <string>
#include <vector>

#include "itmn/anchors.hpp"
#include "itmn/rng.hpp"

namespace itmn {

struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> data;  // row-major, interleaved channels

  std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

struct SceneParams {
  std::uint64_t seed = 0;
  double lambda = 1.0;  // illumination, 0 = night, 1 = bright day
  double tau = 0.0;     // temperature, 0 = cold, 1 = hot
  int pedestrian_count = 1;
  bool day() const { return lambda >= 0.5; }
};

struct ImagePair {
  ImageU8 visual;   // 3-channel
  ImageU8 thermal;  // 1-channel
  std::vector<Box> gts;  // normalized person boxes
  SceneParams params;
};

struct GeneratorConfig {
  int resolution = 96;
  double day_fraction = 0.5;
  // thermal background intensity = thermal_base + thermal_gain * tau;
  // defaults calibrated (including typical pedestrian coverage) so day
  // batches average ~1.73x night batches
  double thermal_base = 0.20;
  double thermal_gain = 0.76;
  double pedestrian_thermal = 0.80;  // fixed body intensity
};

struct Dataset {
  std::vector<ImagePair> pairs;
  int resolution = 0;
  std::uint64_t seed = 0;
};

struct ScenarioFilter {
  double t_ill;  // keep illuminance strictly below
  double t_tem;  // keep temperature strictly above
};

SceneParams sample_scene_params(Rng& rng, double day_fraction);
ImagePair generate_scene(const SceneParams& params, const GeneratorConfig& cfg);
Dataset generate_dataset(int count, std::uint64_t seed, const GeneratorConfig& cfg);

// Explicit augmentation parameters so the identity transform is expressible.
struct AugmentParams {
  double crop_scale = 1.0;   // in (0, 1]
  double crop_x = 0.0;       // normalized top-left of the crop window
  double crop_y = 0.0;
  bool mirror = false;
  double saturation = 1.0;   // visual-only multiplier on chroma
};

AugmentParams identity_augment();
AugmentParams sample_augment(Rng& rng);
ImagePair augment_with(const ImagePair& pair, const AugmentParams& p);
// Draws parameters from the seed; retries the crop up to 5 times when it
// eliminates all boxes, then accepts the empty result.
ImagePair augment(const ImagePair& pair, std::uint64_t seed);

// Sum of the CIELAB L channel over the visual image (sRGB, D65).
double illuminance_measure(const ImageU8& visual);
// Sum of the thermal channel values.
double temperature_measure(const ImageU8& thermal);
// L of a single sRGB pixel, exposed for the conversion oracle tests.
double lab_l_of_rgb(std::uint8_t r, std::uint8_t g, std::uint8_t b);

ScenarioFilter derive_filter(const Dataset& ds);  // thresholds at dataset means
Dataset filter_scenario(const Dataset& ds, const ScenarioFilter& f);

void write_dataset(const Dataset& ds, const std::string& directory);
Dataset read_dataset(const std::string& directory);

}  // namespace itmn
