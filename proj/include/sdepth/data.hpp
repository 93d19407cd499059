#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "geometry.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace sdepth {

template <typename T>
struct StereoSample {
  Tensor<T> left, right;  // (1, 3, H, W), intensities in [0,1]
  Tensor<T> gt;           // (1, 1, H, W), meters (depth) or pixels (disparity)
  // 1 = pixel is photoconsistent across views (visible in both, and its
  // two warp taps land on the same surface). Generator product; not
  // persisted with datasets.
  std::vector<uint8_t> occlusion_mask;
  CameraRig rig;
  OutputMode mode = OutputMode::Depth;
};

// A fronto-parallel textured rectangle. Spans are inclusive and live in
// left-view column/row coordinates; the right view sees the same rectangle
// shifted left by its disparity.
struct SceneLayer {
  double z = 1.0;                            // depth, m
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;     // inclusive span, left view
  std::array<double, 3> tone{0.5, 0.5, 0.5};
  uint64_t tex_seed = 0;
};

namespace detail {

inline double lattice_value(uint64_t seed, int64_t gx, int64_t gy) {
  const uint64_t h = splitmix64(
      splitmix64(splitmix64(seed) ^ static_cast<uint64_t>(gx)) ^
      static_cast<uint64_t>(gy));
  return static_cast<double>(h >> 48) / 65536.0;
}

// Smoothstep-interpolated value noise in [0,1). Built from hashing and
// rational arithmetic only, so results are identical across platforms.
inline double value_noise(uint64_t seed, double x, double y, int spacing) {
  const double s = static_cast<double>(spacing);
  const double fx = std::floor(x / s), fy = std::floor(y / s);
  const int64_t gx = static_cast<int64_t>(fx), gy = static_cast<int64_t>(fy);
  const double tx = x / s - fx, ty = y / s - fy;
  const double ux = tx * tx * (3.0 - 2.0 * tx);
  const double uy = ty * ty * (3.0 - 2.0 * ty);
  const double v00 = lattice_value(seed, gx, gy);
  const double v10 = lattice_value(seed, gx + 1, gy);
  const double v01 = lattice_value(seed, gx, gy + 1);
  const double v11 = lattice_value(seed, gx + 1, gy + 1);
  const double a = v00 + (v10 - v00) * ux;
  const double b = v01 + (v11 - v01) * ux;
  return a + (b - a) * uy;
}

// Texture detail: octaves of value noise around zero. The base amplitude
// and spacing are chosen so the curvature along a row keeps one-pixel
// linear interpolation within the stereo photoconsistency budget.
constexpr double kTextureAmp = 0.30;

inline double texture_detail(uint64_t seed, double x, double y, int octaves,
                             int spacing) {
  double out = 0;
  double amp = kTextureAmp;
  int sp = spacing;
  for (int k = 0; k < octaves; ++k) {
    out += amp * (value_noise(mix_seed(seed, 0x7e47, k), x, y, sp) - 0.5);
    amp *= 0.5;
    sp /= 2;
  }
  return out;
}

inline double layer_color(const SceneLayer& layer, int channel, double x,
                          double y, int octaves, int spacing) {
  const double v = layer.tone[static_cast<size_t>(channel)] +
                   texture_detail(layer.tex_seed, x, y, octaves, spacing);
  return std::clamp(v, 0.0, 1.0);
}

// Index of the nearest layer covering left-view point (x, y); -1 if none.
// Equal depths keep the earliest layer in the list.
inline int nearest_left(const std::vector<SceneLayer>& layers, double x,
                        double y) {
  int best = -1;
  for (size_t i = 0; i < layers.size(); ++i) {
    const SceneLayer& l = layers[i];
    if (x < l.x0 || x > l.x1 || y < l.y0 || y > l.y1) continue;
    if (best < 0 || l.z < layers[static_cast<size_t>(best)].z)
      best = static_cast<int>(i);
  }
  return best;
}

// Same for a right-view column: layer spans shift left by their disparity.
inline int nearest_right(const std::vector<SceneLayer>& layers, double fb,
                         double xr, double y) {
  int best = -1;
  for (size_t i = 0; i < layers.size(); ++i) {
    const SceneLayer& l = layers[i];
    const double d = fb / l.z;
    if (xr < l.x0 - d || xr > l.x1 - d || y < l.y0 || y > l.y1) continue;
    if (best < 0 || l.z < layers[static_cast<size_t>(best)].z)
      best = static_cast<int>(i);
  }
  return best;
}

}  // namespace detail

// Renders a layered scene into a stereo pair with exact ground truth.
// Texture is evaluated in world coordinates, so corresponding pixels carry
// the same surface value up to row-interpolation curvature; the occlusion
// mask marks exactly the pixels whose warp taps see the pixel's own surface.
template <typename T>
StereoSample<T> render_scene(const std::vector<SceneLayer>& layers, int64_t h,
                             int64_t w, const CameraRig& rig, OutputMode mode,
                             int tex_octaves = 2, int tex_spacing = 16) {
  rig.validate();
  if (h < 1 || w < 1) throw ConfigError("render_scene: empty extents");
  if (layers.empty()) throw DataError("render_scene: no layers");
  if (tex_octaves < 1 || tex_octaves > 3)
    throw ConfigError("render_scene: texture octaves must be in [1,3]");
  if (tex_spacing < 4 || (tex_spacing & (tex_spacing - 1)) != 0)
    throw ConfigError("render_scene: texture spacing must be a power of two >= 4");
  for (const auto& l : layers)
    if (!(l.z >= rig.z_min && l.z <= rig.z_max))
      throw ConfigError("render_scene: layer depth outside rig range");

  const double fb = rig.fB();
  StereoSample<T> sample;
  sample.rig = rig;
  sample.mode = mode;
  sample.left = Tensor<T>(Shape{1, 3, h, w});
  sample.right = Tensor<T>(Shape{1, 3, h, w});
  sample.gt = Tensor<T>(Shape{1, 1, h, w});
  sample.occlusion_mask.assign(static_cast<size_t>(h * w), 0);

  auto& lv = sample.left.values_mut();
  auto& rv = sample.right.values_mut();
  auto& gv = sample.gt.values_mut();
  const int64_t plane = h * w;

  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double xd = static_cast<double>(x), yd = static_cast<double>(y);
      const int li = detail::nearest_left(layers, xd, yd);
      if (li < 0) throw DataError("render_scene: left view not fully covered");
      const SceneLayer& L = layers[static_cast<size_t>(li)];
      for (int c = 0; c < 3; ++c)
        lv[static_cast<size_t>(c * plane + y * w + x)] = static_cast<T>(
            detail::layer_color(L, c, xd, yd, tex_octaves, tex_spacing));
      gv[static_cast<size_t>(y * w + x)] =
          static_cast<T>(mode == OutputMode::Depth ? L.z : fb / L.z);

      const int ri = detail::nearest_right(layers, fb, xd, yd);
      if (ri < 0)
        throw DataError("render_scene: right view not fully covered");
      const SceneLayer& R = layers[static_cast<size_t>(ri)];
      const double dr = fb / R.z;
      for (int c = 0; c < 3; ++c)
        rv[static_cast<size_t>(c * plane + y * w + x)] =
            static_cast<T>(detail::layer_color(R, c, xd + dr, yd, tex_octaves,
                                               tex_spacing));
    }

  // Mask mirrors the warp's tap rule: x0 = min(floor(xr), W-2); an exact
  // integer offset uses one tap, otherwise two.
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double yd = static_cast<double>(y);
      const int li =
          detail::nearest_left(layers, static_cast<double>(x), yd);
      const SceneLayer& L = layers[static_cast<size_t>(li)];
      const double xr = static_cast<double>(x) - fb / L.z;
      if (!(xr >= 0.0 && xr <= static_cast<double>(w - 1))) continue;
      int64_t t0 = static_cast<int64_t>(xr);
      if (t0 > w - 2) t0 = w - 2 >= 0 ? w - 2 : 0;
      const double frac = xr - static_cast<double>(t0);
      bool ok;
      if (frac == 0.0)
        ok = detail::nearest_right(layers, fb, static_cast<double>(t0), yd) == li;
      else if (frac == 1.0)
        ok = detail::nearest_right(layers, fb, static_cast<double>(t0 + 1), yd) == li;
      else
        ok = detail::nearest_right(layers, fb, static_cast<double>(t0), yd) == li &&
             detail::nearest_right(layers, fb, static_cast<double>(t0 + 1), yd) == li;
      sample.occlusion_mask[static_cast<size_t>(y * w + x)] = ok;
    }
  return sample;
}

struct SceneConfig {
  uint64_t seed = 1;
  int64_t height = 64, width = 64;
  int layer_count = 3;  // rectangles in front of the backdrop
  double z_near = 2.0, z_far = 14.0;
  int tex_octaves = 2;
  int tex_spacing = 16;

  void validate() const {
    if (height < 1 || width < 1)
      throw ConfigError("scene: extents must be >= 1");
    if (layer_count < 0) throw ConfigError("scene: layer count must be >= 0");
    if (!(z_near > 0 && z_near <= z_far))
      throw ConfigError("scene: need 0 < z_near <= z_far");
    if (tex_octaves < 1 || tex_octaves > 3)
      throw ConfigError("scene: texture octaves must be in [1,3]");
    if (tex_spacing < 4 || (tex_spacing & (tex_spacing - 1)) != 0)
      throw ConfigError("scene: texture spacing must be a power of two >= 4");
  }
};

// Random rectangles over a backdrop at z_far. All randomness flows from the
// seed in a fixed draw order, so a given (config, rig, mode) always yields
// the same sample, bit for bit.
template <typename T>
StereoSample<T> generate_scene(const SceneConfig& cfg, const CameraRig& rig,
                               OutputMode mode) {
  cfg.validate();
  rig.validate();
  if (!(cfg.z_near >= rig.z_min && cfg.z_far <= rig.z_max))
    throw ConfigError("scene: depth range outside rig range");
  Rng rng(mix_seed(cfg.seed, 0x5CE11E));
  std::vector<SceneLayer> layers;
  layers.reserve(static_cast<size_t>(cfg.layer_count) + 1);

  SceneLayer backdrop;
  backdrop.z = cfg.z_far;
  backdrop.x0 = -1e6;
  backdrop.y0 = -1e6;
  backdrop.x1 = 1e6;
  backdrop.y1 = 1e6;
  for (int c = 0; c < 3; ++c) backdrop.tone[c] = rng.uniform(0.35, 0.65);
  backdrop.tex_seed = rng.bits();
  layers.push_back(backdrop);

  const double wd = static_cast<double>(cfg.width);
  const double hd = static_cast<double>(cfg.height);
  for (int k = 0; k < cfg.layer_count; ++k) {
    SceneLayer l;
    l.z = rng.uniform(cfg.z_near, cfg.z_far);
    const double rw = std::floor(rng.uniform(0.2, 0.55) * wd);
    const double rh = std::floor(rng.uniform(0.2, 0.55) * hd);
    l.x0 = std::floor(rng.uniform(-0.1, 0.9) * wd);
    l.y0 = std::floor(rng.uniform(-0.1, 0.9) * hd);
    l.x1 = l.x0 + rw;
    l.y1 = l.y0 + rh;
    for (int c = 0; c < 3; ++c) l.tone[c] = rng.uniform(0.35, 0.65);
    l.tex_seed = rng.bits();
    layers.push_back(l);
  }
  return render_scene<T>(layers, cfg.height, cfg.width, rig, mode,
                         cfg.tex_octaves, cfg.tex_spacing);
}

// Seeded shuffle, then the first floor(ratio * n) samples train and the
// rest validate.
template <typename T>
std::pair<std::vector<StereoSample<T>>, std::vector<StereoSample<T>>>
split_dataset(std::vector<StereoSample<T>> samples, double ratio,
              uint64_t seed) {
  if (samples.empty()) throw DataError("split_dataset: empty dataset");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("split_dataset: ratio must be in (0,1)");
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5B117));
  rng.shuffle(order.begin(), order.end());
  const size_t n_train = static_cast<size_t>(
      std::floor(ratio * static_cast<double>(samples.size())));
  std::pair<std::vector<StereoSample<T>>, std::vector<StereoSample<T>>> out;
  for (size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? out.first : out.second;
    dst.push_back(std::move(samples[order[i]]));
  }
  return out;
}

// ---- PFM (grayscale float maps) --------------------------------------------

struct PfmImage {
  int64_t height = 0, width = 0;
  std::vector<float> values;  // row-major, top row first
};

// "Pf" header, rows stored bottom-to-top, scale -1.0 marking little-endian
// payload.
inline std::vector<uint8_t> pfm_encode(const PfmImage& img) {
  if (static_cast<int64_t>(img.values.size()) != img.height * img.width)
    throw ShapeError("pfm_encode: value count does not match extents");
  if (img.height < 1 || img.width < 1)
    throw ShapeError("pfm_encode: empty image");
  char header[64];
  const int n = std::snprintf(header, sizeof header, "Pf\n%lld %lld\n-1.0\n",
                              static_cast<long long>(img.width),
                              static_cast<long long>(img.height));
  std::vector<uint8_t> out(header, header + n);
  out.reserve(out.size() + img.values.size() * 4);
  for (int64_t y = img.height - 1; y >= 0; --y) {
    const float* row = img.values.data() + y * img.width;
    for (int64_t x = 0; x < img.width; ++x) {
      uint32_t bits;
      std::memcpy(&bits, &row[x], 4);
      out.push_back(static_cast<uint8_t>(bits));
      out.push_back(static_cast<uint8_t>(bits >> 8));
      out.push_back(static_cast<uint8_t>(bits >> 16));
      out.push_back(static_cast<uint8_t>(bits >> 24));
    }
  }
  return out;
}

namespace detail {

struct ByteReader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  int peek() const {
    return pos < bytes.size() ? static_cast<int>(bytes[pos]) : -1;
  }
  int get() { return pos < bytes.size() ? static_cast<int>(bytes[pos++]) : -1; }

  void skip_space() {
    while (pos < bytes.size()) {
      const int c = peek();
      if (c == '#') {  // comment until end of line
        while (pos < bytes.size() && get() != '\n') {
        }
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
  }

  int64_t read_int(const char* what) {
    skip_space();
    bool any = false;
    int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(peek())) {
      v = v * 10 + (get() - '0');
      any = true;
    }
    if (!any)
      throw FormatError(std::string("expected integer for ") + what);
    return v;
  }

  std::string read_token() {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(peek()))
      t += static_cast<char>(get());
    return t;
  }
};

}  // namespace detail

inline PfmImage pfm_decode(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r{bytes};
  const std::string magic = r.read_token();
  if (magic == "PF")
    throw FormatError("pfm_decode: color PFM is not supported");
  if (magic != "Pf")
    throw FormatError("pfm_decode: bad magic '" + magic + "'");
  PfmImage img;
  img.width = r.read_int("width");
  img.height = r.read_int("height");
  const std::string scale_tok = r.read_token();
  double scale = 0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw FormatError("pfm_decode: bad scale '" + scale_tok + "'");
  }
  if (scale == 0) throw FormatError("pfm_decode: zero scale");
  if (r.get() < 0) throw FormatError("pfm_decode: truncated header");
  if (img.width < 1 || img.height < 1)
    throw FormatError("pfm_decode: empty image");
  const size_t need = static_cast<size_t>(img.width * img.height) * 4;
  if (bytes.size() - r.pos < need)
    throw FormatError("pfm_decode: truncated payload");
  const bool little = scale < 0;
  img.values.resize(static_cast<size_t>(img.width * img.height));
  const uint8_t* p = bytes.data() + r.pos;
  for (int64_t y = img.height - 1; y >= 0; --y) {
    float* row = img.values.data() + y * img.width;
    for (int64_t x = 0; x < img.width; ++x, p += 4) {
      const uint32_t bits =
          little ? (static_cast<uint32_t>(p[0]) |
                    (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) |
                    (static_cast<uint32_t>(p[3]) << 24))
                 : (static_cast<uint32_t>(p[3]) |
                    (static_cast<uint32_t>(p[2]) << 8) |
                    (static_cast<uint32_t>(p[1]) << 16) |
                    (static_cast<uint32_t>(p[0]) << 24));
      std::memcpy(&row[x], &bits, 4);
    }
  }
  return img;
}

// ---- PPM (8-bit color images) ----------------------------------------------

// P6 with maxval 255. Values in [0,1] quantize to round(v * 255).
template <typename T>
std::vector<uint8_t> ppm_encode(const Tensor<T>& image) {
  const Shape s = image.shape;
  if (s.n != 1 || s.c != 3)
    throw ShapeError("ppm_encode: expected shape (1,3,H,W)");
  if (s.h < 1 || s.w < 1) throw ShapeError("ppm_encode: empty image");
  char header[64];
  const int n = std::snprintf(header, sizeof header, "P6\n%lld %lld\n255\n",
                              static_cast<long long>(s.w),
                              static_cast<long long>(s.h));
  std::vector<uint8_t> out(header, header + n);
  out.reserve(out.size() + static_cast<size_t>(s.h * s.w * 3));
  const auto& v = image.values();
  const int64_t plane = s.h * s.w;
  for (int64_t i = 0; i < plane; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const double x = static_cast<double>(v[static_cast<size_t>(c * plane + i)]);
      const long q = std::lround(std::clamp(x, 0.0, 1.0) * 255.0);
      out.push_back(static_cast<uint8_t>(q));
    }
  return out;
}

template <typename T>
Tensor<T> ppm_decode(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r{bytes};
  const std::string magic = r.read_token();
  if (magic != "P6")
    throw FormatError("ppm_decode: bad magic '" + magic + "'");
  const int64_t w = r.read_int("width");
  const int64_t h = r.read_int("height");
  const int64_t maxval = r.read_int("maxval");
  if (maxval != 255)
    throw FormatError("ppm_decode: only maxval 255 is supported");
  if (r.get() < 0) throw FormatError("ppm_decode: truncated header");
  if (w < 1 || h < 1) throw FormatError("ppm_decode: empty image");
  const size_t need = static_cast<size_t>(w * h * 3);
  if (bytes.size() - r.pos < need)
    throw FormatError("ppm_decode: truncated payload");
  Tensor<T> img(Shape{1, 3, h, w});
  auto& v = img.values_mut();
  const int64_t plane = h * w;
  const uint8_t* p = bytes.data() + r.pos;
  for (int64_t i = 0; i < plane; ++i)
    for (int64_t c = 0; c < 3; ++c)
      v[static_cast<size_t>(c * plane + i)] =
          static_cast<T>(*p++ / 255.0);
  return img;
}

// ---- dataset layout ---------------------------------------------------------

inline std::vector<uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_binary_file(const std::string& path,
                              const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write: " + path);
}

inline std::string sample_file_name(int64_t index, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04lld_%s", static_cast<long long>(index),
                suffix);
  return buf;
}

inline void save_rig(const std::string& path, const CameraRig& rig,
                     OutputMode mode) {
  KeyValueFile kv;
  kv.set_double("f", rig.f);
  kv.set_double("B", rig.B);
  kv.set_double("z_min", rig.z_min);
  kv.set_double("z_max", rig.z_max);
  kv.set("mode", to_string(mode));
  kv.save(path);
}

inline std::pair<CameraRig, OutputMode> load_rig(const std::string& path) {
  const KeyValueFile kv = KeyValueFile::load(path);
  CameraRig rig;
  rig.f = kv.get_double("f");
  rig.B = kv.get_double("B");
  rig.z_min = kv.get_double("z_min");
  rig.z_max = kv.get_double("z_max");
  rig.validate();
  return {rig, output_mode_from_string(kv.get("mode"))};
}

// NNNN_left.ppm / NNNN_right.ppm / NNNN_gt.pfm plus one rig.cfg. All samples
// must share a rig and mode.
template <typename T>
void save_dataset(const std::string& dir,
                  const std::vector<StereoSample<T>>& samples) {
  if (samples.empty()) throw DataError("save_dataset: empty dataset");
  std::filesystem::create_directories(dir);
  const CameraRig& rig = samples[0].rig;
  const OutputMode mode = samples[0].mode;
  for (const auto& s : samples) {
    if (s.rig.f != rig.f || s.rig.B != rig.B || s.rig.z_min != rig.z_min ||
        s.rig.z_max != rig.z_max || s.mode != mode)
      throw DataError("save_dataset: samples disagree on rig or mode");
  }
  save_rig(dir + "/rig.cfg", rig, mode);
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const int64_t idx = static_cast<int64_t>(i);
    write_binary_file(dir + "/" + sample_file_name(idx, "left.ppm"),
                      ppm_encode(s.left));
    write_binary_file(dir + "/" + sample_file_name(idx, "right.ppm"),
                      ppm_encode(s.right));
    PfmImage gt{s.gt.shape.h, s.gt.shape.w,
                std::vector<float>(s.gt.values().begin(), s.gt.values().end())};
    write_binary_file(dir + "/" + sample_file_name(idx, "gt.pfm"),
                      pfm_encode(gt));
  }
}

template <typename T>
std::vector<StereoSample<T>> load_dataset(const std::string& dir) {
  const auto [rig, mode] = load_rig(dir + "/rig.cfg");
  std::vector<StereoSample<T>> samples;
  for (int64_t i = 0;; ++i) {
    const std::string left_path =
        dir + "/" + sample_file_name(i, "left.ppm");
    if (!std::filesystem::exists(left_path)) break;
    StereoSample<T> s;
    s.rig = rig;
    s.mode = mode;
    s.left = ppm_decode<T>(read_binary_file(left_path));
    s.right = ppm_decode<T>(
        read_binary_file(dir + "/" + sample_file_name(i, "right.ppm")));
    const PfmImage gt = pfm_decode(
        read_binary_file(dir + "/" + sample_file_name(i, "gt.pfm")));
    if (gt.height != s.left.shape.h || gt.width != s.left.shape.w)
      throw FormatError("load_dataset: ground truth extents differ from images");
    if (!(s.right.shape == s.left.shape))
      throw FormatError("load_dataset: right view extents differ from left");
    std::vector<T> gv(gt.values.begin(), gt.values.end());
    s.gt = Tensor<T>(Shape{1, 1, gt.height, gt.width}, std::move(gv));
    // Persisted datasets carry no mask; mark everything usable.
    s.occlusion_mask.assign(static_cast<size_t>(gt.height * gt.width), 1);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DataError("load_dataset: no samples in " + dir);
  return samples;
}

}  // namespace sdepth
