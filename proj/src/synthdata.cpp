#include "itmn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace itmn {

namespace {

constexpr const char* kGeneratorVersion = "1";

std::uint8_t to_u8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

struct Pedestrian {
  double cx, cy, w, h;
  double value;     // clothing luminance in visual
  double tint[3];
};

double bilerp(double c00, double c10, double c01, double c11, double fx, double fy) {
  const double a = c00 + (c10 - c00) * fx;
  const double b = c01 + (c11 - c01) * fx;
  return a + (b - a) * fy;
}

ImageU8 resize_bilinear(const ImageU8& src, int out_w, int out_h) {
  if (src.width == out_w && src.height == out_h) return src;
  ImageU8 dst;
  dst.width = out_w;
  dst.height = out_h;
  dst.channels = src.channels;
  dst.data.resize(static_cast<std::size_t>(out_w) * out_h * src.channels);
  for (int y = 0; y < out_h; ++y) {
    const double sy = (y + 0.5) * src.height / out_h - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double sx = (x + 0.5) * src.width / out_w - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      for (int c = 0; c < src.channels; ++c) {
        const double v = bilerp(src.at(x0, y0, c), src.at(x1, y0, c), src.at(x0, y1, c), src.at(x1, y1, c), fx, fy);
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return dst;
}

}  // namespace

SceneParams sample_scene_params(Rng& rng, double day_fraction) {
  SceneParams p;
  p.seed = rng.next_u64();
  const bool day = rng.uniform() < day_fraction;
  p.lambda = day ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);
  p.tau = day ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);
  p.pedestrian_count = static_cast<int>(rng.uniform_int(5)) + 1;
  return p;
}

ImagePair generate_scene(const SceneParams& params, const GeneratorConfig& cfg) {
  Rng rng(params.seed);
  const int res = cfg.resolution;

  // scene-level draws first, in a fixed order
  double corners[4];
  for (double& c : corners) c = rng.uniform();
  double tint[3];
  for (double& t : tint) t = rng.uniform(0.8, 1.0);

  std::vector<Pedestrian> peds(static_cast<std::size_t>(params.pedestrian_count));
  for (auto& p : peds) {
    p.h = rng.uniform(0.25, 0.55);
    p.w = p.h * rng.uniform(0.35, 0.45);
    p.cx = rng.uniform(p.w / 2, 1.0 - p.w / 2);
    p.cy = rng.uniform(p.h / 2, 1.0 - p.h / 2);
    p.value = rng.bernoulli(0.5) ? rng.uniform(0.0, 0.25) : rng.uniform(0.75, 1.0);
    for (double& t : p.tint) t = rng.uniform(0.7, 1.0);
  }

  ImagePair pair;
  pair.params = params;
  pair.visual.width = pair.visual.height = res;
  pair.visual.channels = 3;
  pair.visual.data.resize(static_cast<std::size_t>(res) * res * 3);
  pair.thermal.width = pair.thermal.height = res;
  pair.thermal.channels = 1;
  pair.thermal.data.resize(static_cast<std::size_t>(res) * res);

  const double lambda = params.lambda;
  const double vis_noise = 0.02 + 0.22 * (1.0 - lambda);
  const double th_bg = cfg.thermal_base + cfg.thermal_gain * params.tau;

  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double nx = (x + 0.5) / res, ny = (y + 0.5) / res;
      const Pedestrian* hit = nullptr;
      for (const auto& p : peds) {
        const double dx = (nx - p.cx) / (p.w / 2), dy = (ny - p.cy) / (p.h / 2);
        if (dx * dx + dy * dy <= 1.0) hit = &p;  // later pedestrians draw on top
      }
      const double texture = rng.uniform();
      const double noise = (rng.uniform() - 0.5) * 2.0 * vis_noise;
      const double bg = 0.30 + 0.40 * bilerp(corners[0], corners[1], corners[2], corners[3], nx, ny) + 0.20 * texture;
      for (int c = 0; c < 3; ++c) {
        const double base = hit ? hit->value * hit->tint[c] : bg * tint[c];
        pair.visual.at(x, y, c) = to_u8(lambda * base + noise);
      }
      const double th_noise = (rng.uniform() - 0.5) * 0.04;
      pair.thermal.at(x, y, 0) = to_u8((hit ? cfg.pedestrian_thermal : th_bg) + th_noise);
    }

  for (const auto& p : peds)
    pair.gts.push_back({p.cx - p.w / 2, p.cy - p.h / 2, p.cx + p.w / 2, p.cy + p.h / 2});
  return pair;
}

Dataset generate_dataset(int count, std::uint64_t seed, const GeneratorConfig& cfg) {
  Dataset ds;
  ds.resolution = cfg.resolution;
  ds.seed = seed;
  Rng rng = Rng::child(seed, /*purpose=*/1);
  ds.pairs.reserve(count);
  for (int i = 0; i < count; ++i) {
    SceneParams p = sample_scene_params(rng, cfg.day_fraction);
    ds.pairs.push_back(generate_scene(p, cfg));
  }
  return ds;
}

AugmentParams identity_augment() { return AugmentParams{}; }

AugmentParams sample_augment(Rng& rng) {
  AugmentParams p;
  p.crop_scale = rng.uniform(0.7, 1.0);
  p.crop_x = rng.uniform();
  p.crop_y = rng.uniform();
  p.mirror = rng.bernoulli(0.5);
  p.saturation = rng.uniform(0.7, 1.3);
  return p;
}

ImagePair augment_with(const ImagePair& pair, const AugmentParams& p) {
  const int res = pair.visual.width;
  const int cw = std::max(8, static_cast<int>(std::lround(p.crop_scale * res)));
  const int ox = static_cast<int>(std::lround(p.crop_x * (res - cw)));
  const int oy = static_cast<int>(std::lround(p.crop_y * (res - cw)));

  ImagePair out;
  out.params = pair.params;

  auto crop_image = [&](const ImageU8& src) {
    if (cw == res) return src;
    ImageU8 dst;
    dst.width = dst.height = cw;
    dst.channels = src.channels;
    dst.data.resize(static_cast<std::size_t>(cw) * cw * src.channels);
    for (int y = 0; y < cw; ++y)
      for (int x = 0; x < cw; ++x)
        for (int c = 0; c < src.channels; ++c) dst.at(x, y, c) = src.at(x + ox, y + oy, c);
    return dst;
  };
  out.visual = crop_image(pair.visual);
  out.thermal = crop_image(pair.thermal);

  for (const Box& b : pair.gts) {
    if (cw == res && ox == 0 && oy == 0) {  // identity window, keep boxes bit-exact
      out.gts.push_back(b);
      continue;
    }
    Box nb;
    nb.x1 = (b.x1 * res - ox) / cw;
    nb.y1 = (b.y1 * res - oy) / cw;
    nb.x2 = (b.x2 * res - ox) / cw;
    nb.y2 = (b.y2 * res - oy) / cw;
    nb.x1 = std::clamp(nb.x1, 0.0, 1.0);
    nb.y1 = std::clamp(nb.y1, 0.0, 1.0);
    nb.x2 = std::clamp(nb.x2, 0.0, 1.0);
    nb.y2 = std::clamp(nb.y2, 0.0, 1.0);
    if (nb.area() < 0.01) continue;  // degenerate after clipping
    out.gts.push_back(nb);
  }

  if (p.mirror) {
    auto flip = [](ImageU8& im) {
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width / 2; ++x)
          for (int c = 0; c < im.channels; ++c) std::swap(im.at(x, y, c), im.at(im.width - 1 - x, y, c));
    };
    flip(out.visual);
    flip(out.thermal);
    for (Box& b : out.gts) {
      const double x1 = 1.0 - b.x2, x2 = 1.0 - b.x1;
      b.x1 = x1;
      b.x2 = x2;
    }
  }

  // saturation jitter on the visual stream only; thermal has no chroma
  if (p.saturation != 1.0) {
    for (int y = 0; y < out.visual.height; ++y)
      for (int x = 0; x < out.visual.width; ++x) {
        const double gray =
            (out.visual.at(x, y, 0) + out.visual.at(x, y, 1) + out.visual.at(x, y, 2)) / 3.0;
        for (int c = 0; c < 3; ++c) {
          const double v = gray + p.saturation * (out.visual.at(x, y, c) - gray);
          out.visual.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }
  }

  out.visual = resize_bilinear(out.visual, res, res);
  out.thermal = resize_bilinear(out.thermal, res, res);
  return out;
}

ImagePair augment(const ImagePair& pair, std::uint64_t seed) {
  Rng rng = Rng::child(seed, /*purpose=*/2);
  for (int attempt = 0; attempt < 5; ++attempt) {
    ImagePair out = augment_with(pair, sample_augment(rng));
    if (out.gts.empty() && !pair.gts.empty() && attempt < 4) continue;
    return out;
  }
  return pair;  // unreachable
}

double lab_l_of_rgb(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  auto lin = [](std::uint8_t v) {
    const double c = v / 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  // sRGB D65 luminance row
  const double y = 0.212671 * lin(r) + 0.715160 * lin(g) + 0.072169 * lin(b);
  const double f = y > 0.008856 ? std::cbrt(y) : 7.787 * y + 16.0 / 116.0;
  return 116.0 * f - 16.0;
}

double illuminance_measure(const ImageU8& visual) {
  double sum = 0.0;
  for (int y = 0; y < visual.height; ++y)
    for (int x = 0; x < visual.width; ++x)
      sum += lab_l_of_rgb(visual.at(x, y, 0), visual.at(x, y, 1), visual.at(x, y, 2));
  return sum;
}

double temperature_measure(const ImageU8& thermal) {
  double sum = 0.0;
  for (std::uint8_t v : thermal.data) sum += v;
  return sum;
}

ScenarioFilter derive_filter(const Dataset& ds) {
  double ill = 0.0, tem = 0.0;
  for (const auto& p : ds.pairs) {
    ill += illuminance_measure(p.visual);
    tem += temperature_measure(p.thermal);
  }
  const double n = static_cast<double>(ds.pairs.size());
  return {ill / n, tem / n};
}

Dataset filter_scenario(const Dataset& ds, const ScenarioFilter& f) {
  Dataset out;
  out.resolution = ds.resolution;
  out.seed = ds.seed;
  for (const auto& p : ds.pairs)
    if (illuminance_measure(p.visual) < f.t_ill && temperature_measure(p.thermal) > f.t_tem) out.pairs.push_back(p);
  return out;
}

namespace {

void write_pnm(const ImageU8& im, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << (im.channels == 3 ? "P6" : "P5") << "\n" << im.width << " " << im.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(im.data.data()), static_cast<std::streamsize>(im.data.size()));
}

ImageU8 read_pnm(const std::string& path, int expect_channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("missing image file " + path);
  std::string magic;
  int w, h, maxval;
  f >> magic >> w >> h >> maxval;
  const int channels = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
  if (channels == 0 || channels != expect_channels || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("malformed image header in " + path + " at byte offset " + std::to_string(f.tellg()));
  f.get();  // single whitespace after maxval
  ImageU8 im;
  im.width = w;
  im.height = h;
  im.channels = channels;
  im.data.resize(static_cast<std::size_t>(w) * h * channels);
  f.read(reinterpret_cast<char*>(im.data.data()), static_cast<std::streamsize>(im.data.size()));
  if (f.gcount() != static_cast<std::streamsize>(im.data.size()))
    throw std::runtime_error("truncated image payload in " + path + " at byte offset " + std::to_string(f.tellg()));
  return im;
}

std::string sample_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& directory) {
  fs::create_directories(directory);
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto& p = ds.pairs[i];
    const std::string stem = directory + "/" + sample_name(static_cast<int>(i));
    write_pnm(p.visual, stem + "_visual.ppm");
    write_pnm(p.thermal, stem + "_thermal.pgm");
    json meta;
    meta["boxes"] = json::array();
    for (const auto& b : p.gts) meta["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
    meta["lambda"] = p.params.lambda;
    meta["tau"] = p.params.tau;
    meta["tag"] = p.params.day() ? "day" : "night";
    meta["seed"] = p.params.seed;
    meta["pedestrian_count"] = p.params.pedestrian_count;
    std::ofstream mf(stem + "_meta.json");
    mf << meta.dump(2) << "\n";
  }
  json manifest;
  manifest["count"] = ds.pairs.size();
  manifest["resolution"] = ds.resolution;
  manifest["generator_version"] = kGeneratorVersion;
  manifest["seed"] = ds.seed;
  std::ofstream mf(directory + "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::string& directory) {
  std::ifstream mf(directory + "/manifest.json");
  if (!mf) throw std::runtime_error("missing manifest.json in " + directory);
  json manifest = json::parse(mf);
  Dataset ds;
  ds.resolution = manifest.at("resolution").get<int>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  const int count = manifest.at("count").get<int>();
  for (int i = 0; i < count; ++i) {
    const std::string stem = directory + "/" + sample_name(i);
    ImagePair p;
    p.visual = read_pnm(stem + "_visual.ppm", 3);
    p.thermal = read_pnm(stem + "_thermal.pgm", 1);
    std::ifstream jf(stem + "_meta.json");
    if (!jf) throw std::runtime_error("missing annotation sidecar for sample " + sample_name(i));
    json meta = json::parse(jf);
    for (const auto& b : meta.at("boxes")) p.gts.push_back({b[0], b[1], b[2], b[3]});
    p.params.lambda = meta.at("lambda").get<double>();
    p.params.tau = meta.at("tau").get<double>();
    p.params.seed = meta.at("seed").get<std::uint64_t>();
    p.params.pedestrian_count = meta.at("pedestrian_count").get<int>();
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace itmn
