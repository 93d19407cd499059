#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace sdepth {

// What the network regresses: normalized inverted depth or normalized
// disparity. The two differ only in how maps are scaled into [0,1].
enum class OutputMode { Depth, Disparity };

inline const char* to_string(OutputMode m) {
  return m == OutputMode::Depth ? "depth" : "disparity";
}

inline OutputMode output_mode_from_string(const std::string& s) {
  if (s == "depth") return OutputMode::Depth;
  if (s == "disparity") return OutputMode::Disparity;
  throw ConfigError("unknown output mode: " + s);
}

// Rectified stereo rig. Depth and disparity are linked by z = f*B/d.
struct CameraRig {
  double f = 128.0;     // focal length, px
  double B = 0.25;      // baseline, m
  double z_min = 0.16;  // nearest representable depth, m
  double z_max = 16.0;  // farthest representable depth, m

  double fB() const { return f * B; }
  double d_max() const { return f * B / z_min; }
  double d_min() const { return f * B / z_max; }

  void validate() const {
    if (!(f > 0)) throw ConfigError("rig: f must be > 0");
    if (!(B > 0)) throw ConfigError("rig: B must be > 0");
    if (!(z_min > 0)) throw ConfigError("rig: z_min must be > 0");
    if (!(z_min < z_max)) throw ConfigError("rig: z_min must be < z_max");
  }
};

// Rig with the conventional z_min of z_max/100.
inline CameraRig make_rig(double f, double B, double z_max) {
  CameraRig rig{f, B, z_max / 100.0, z_max};
  rig.validate();
  return rig;
}

// Which stage of the depth pipeline a map's values live in. Conversions
// check the tag so raw meters never silently mix with [0,1] encodings.
enum class DepthState { RawZ, Normalized, Adjusted, Predicted, Recovered };

inline const char* to_string(DepthState s) {
  switch (s) {
    case DepthState::RawZ: return "raw_z";
    case DepthState::Normalized: return "normalized";
    case DepthState::Adjusted: return "adjusted";
    case DepthState::Predicted: return "predicted";
    case DepthState::Recovered: return "recovered";
  }
  return "?";
}

template <typename T>
struct DepthMap {
  int64_t height = 0, width = 0;
  std::vector<T> values;
  DepthState state = DepthState::RawZ;

  void validate() const {
    if (static_cast<int64_t>(values.size()) != height * width)
      throw ShapeError("depth map: value count does not match extents");
  }
};

template <typename T>
struct DisparityMap {
  int64_t height = 0, width = 0;
  std::vector<T> values;

  void validate() const {
    if (static_cast<int64_t>(values.size()) != height * width)
      throw ShapeError("disparity map: value count does not match extents");
  }
};

namespace detail {

template <typename T>
void expect_state(const DepthMap<T>& m, DepthState a) {
  if (m.state != a)
    throw ContractError(std::string("depth map in state ") +
                        to_string(m.state) + ", expected " + to_string(a));
}

template <typename T>
void expect_state(const DepthMap<T>& m, DepthState a, DepthState b) {
  if (m.state != a && m.state != b)
    throw ContractError(std::string("depth map in state ") +
                        to_string(m.state) + ", expected " + to_string(a) +
                        " or " + to_string(b));
}

}  // namespace detail

// z -> d = f*B/z, clamping depth into the rig's representable range first.
template <typename T>
DisparityMap<T> depth_to_disparity(const DepthMap<T>& z, const CameraRig& rig) {
  rig.validate();
  z.validate();
  detail::expect_state(z, DepthState::RawZ);
  DisparityMap<T> d{z.height, z.width, std::vector<T>(z.values.size())};
  const double fb = rig.fB();
  for (size_t i = 0; i < z.values.size(); ++i) {
    const double zi =
        std::clamp(static_cast<double>(z.values[i]), rig.z_min, rig.z_max);
    d.values[i] = static_cast<T>(fb / zi);
  }
  return d;
}

// d -> z = f*B/d, clamping disparity into [d_min, d_max] first.
template <typename T>
DepthMap<T> disparity_to_depth(const DisparityMap<T>& d, const CameraRig& rig) {
  rig.validate();
  d.validate();
  DepthMap<T> z{d.height, d.width, std::vector<T>(d.values.size()),
                DepthState::RawZ};
  const double fb = rig.fB();
  for (size_t i = 0; i < d.values.size(); ++i) {
    const double di =
        std::clamp(static_cast<double>(d.values[i]), rig.d_min(), rig.d_max());
    z.values[i] = static_cast<T>(fb / di);
  }
  return z;
}

// z -> 1 - z/z_max, so near surfaces sit close to 1.
template <typename T>
DepthMap<T> normalize_depth(const DepthMap<T>& z, const CameraRig& rig) {
  rig.validate();
  z.validate();
  detail::expect_state(z, DepthState::RawZ);
  DepthMap<T> out{z.height, z.width, std::vector<T>(z.values.size()),
                  DepthState::Normalized};
  for (size_t i = 0; i < z.values.size(); ++i) {
    const double zi =
        std::clamp(static_cast<double>(z.values[i]), rig.z_min, rig.z_max);
    out.values[i] = static_cast<T>(1.0 - zi / rig.z_max);
  }
  return out;
}

// Normalized or recovered map back to meters.
template <typename T>
DepthMap<T> denormalize_depth(const DepthMap<T>& zn, const CameraRig& rig) {
  rig.validate();
  zn.validate();
  detail::expect_state(zn, DepthState::Normalized, DepthState::Recovered);
  DepthMap<T> out{zn.height, zn.width, std::vector<T>(zn.values.size()),
                  DepthState::RawZ};
  for (size_t i = 0; i < zn.values.size(); ++i) {
    const double z = (1.0 - static_cast<double>(zn.values[i])) * rig.z_max;
    out.values[i] = static_cast<T>(std::clamp(z, rig.z_min, rig.z_max));
  }
  return out;
}

// Exponent for the depth adjustment x = z^p. p = 1 is the identity;
// p > 1 stretches resolution near 1 (near surfaces).
struct AdjustmentParams {
  double p = 1.0;

  void validate() const {
    if (!(p >= 1.0))
      throw ConfigError("adjustment: p must be >= 1, got " +
                        std::to_string(p));
  }
};

// Normalized map -> adjusted map, elementwise x = v^p.
template <typename T>
DepthMap<T> adjust_depth(const DepthMap<T>& zn, const AdjustmentParams& adj) {
  adj.validate();
  zn.validate();
  detail::expect_state(zn, DepthState::Normalized);
  DepthMap<T> out{zn.height, zn.width, std::vector<T>(zn.values.size()),
                  DepthState::Adjusted};
  for (size_t i = 0; i < zn.values.size(); ++i)
    out.values[i] =
        static_cast<T>(std::pow(static_cast<double>(zn.values[i]), adj.p));
  return out;
}

// Adjusted (or predicted) map -> recovered normalized map, v^(1/p).
template <typename T>
DepthMap<T> invert_adjust(const DepthMap<T>& x, const AdjustmentParams& adj) {
  adj.validate();
  x.validate();
  detail::expect_state(x, DepthState::Adjusted, DepthState::Predicted);
  DepthMap<T> out{x.height, x.width, std::vector<T>(x.values.size()),
                  DepthState::Recovered};
  for (size_t i = 0; i < x.values.size(); ++i)
    out.values[i] = static_cast<T>(
        std::pow(static_cast<double>(x.values[i]), 1.0 / adj.p));
  return out;
}

// Picks the exponent whose adjusted histogram is flattest: grid over
// [1, 4] in steps of 0.05, score = sum of squared deviations of bin counts
// from the uniform count. Ties keep the smallest p.
inline AdjustmentParams fit_exponent(const std::vector<double>& samples,
                                     int bins = 32) {
  if (samples.empty()) throw DataError("fit_exponent: empty sample set");
  if (bins < 8) throw ConfigError("fit_exponent: need at least 8 bins");
  const double target = static_cast<double>(samples.size()) / bins;
  double best_p = 1.0;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<int64_t> hist(static_cast<size_t>(bins));
  for (int k = 0; k <= 60; ++k) {
    const double p = 1.0 + 0.05 * k;
    std::fill(hist.begin(), hist.end(), 0);
    for (const double s : samples) {
      const double v = std::pow(std::clamp(s, 0.0, 1.0), p);
      const int bin = std::min(bins - 1, static_cast<int>(v * bins));
      ++hist[static_cast<size_t>(bin)];
    }
    double score = 0;
    for (const int64_t h : hist) {
      const double dev = static_cast<double>(h) - target;
      score += dev * dev;
    }
    if (score < best_score) {
      best_score = score;
      best_p = p;
    }
  }
  return AdjustmentParams{best_p};
}

// ---- row sampling and warping ----------------------------------------------

template <typename T>
struct RowSample {
  T value = T(0);
  bool valid = false;  // false marks an out-of-bounds tap
};

// Linear interpolation along a row at fractional column x. Exact at integer
// columns; invalid outside [0, W-1].
template <typename T>
RowSample<T> sample_row(const Tensor<T>& image, int64_t channel, int64_t row,
                        double x) {
  const Shape s = image.shape;
  if (channel < 0 || channel >= s.c || row < 0 || row >= s.h)
    throw ContractError("sample_row: channel or row out of range");
  if (!(x >= 0.0 && x <= static_cast<double>(s.w - 1))) return {T(0), false};
  const int64_t x0 = std::min(static_cast<int64_t>(x), s.w - 2 >= 0 ? s.w - 2 : 0);
  const double t = x - static_cast<double>(x0);
  const T a = image.at(0, channel, row, x0);
  if (t == 0.0) return {a, true};
  const T b = image.at(0, channel, row, std::min(x0 + 1, s.w - 1));
  return {static_cast<T>((1.0 - t) * a + t * b), true};
}

namespace detail {

// Shared horizontal warp: out(i) = right(i - d(i)) with row-wise linear
// interpolation. Exact copies at integral offsets; mask marks in-bounds taps.
template <typename T>
void warp_rows(const T* right, const T* disp, int64_t n_count, int64_t c_count,
               int64_t h, int64_t w, T* out, uint8_t* mask) {
  const int64_t plane = h * w;
  for (int64_t n = 0; n < n_count; ++n)
    for (int64_t j = 0; j < h; ++j) {
      const T* drow = disp + (n * h + j) * w;
      uint8_t* mrow = mask + (n * h + j) * w;
      for (int64_t i = 0; i < w; ++i) {
        const double x =
            static_cast<double>(i) - static_cast<double>(drow[i]);
        if (!(x >= 0.0 && x <= static_cast<double>(w - 1))) {
          mrow[i] = 0;
          for (int64_t c = 0; c < c_count; ++c)
            out[(n * c_count + c) * plane + j * w + i] = T(0);
          continue;
        }
        mrow[i] = 1;
        int64_t x0 = static_cast<int64_t>(x);
        if (x0 > w - 2) x0 = w - 2 >= 0 ? w - 2 : 0;
        const double t = x - static_cast<double>(x0);
        for (int64_t c = 0; c < c_count; ++c) {
          const T* rrow = right + (n * c_count + c) * plane + j * w;
          T v;
          if (t == 0.0)
            v = rrow[x0];
          else if (t == 1.0)
            v = rrow[x0 + 1];
          else
            v = static_cast<T>((1.0 - t) * rrow[x0] + t * rrow[x0 + 1]);
          out[(n * c_count + c) * plane + j * w + i] = v;
        }
      }
    }
}

}  // namespace detail

// Reconstructs the left view by sampling the right view at i - d(i).
// Differentiable with respect to the disparity (and the right image); the
// disparity derivative of a sampled value is -(right[x0+1] - right[x0]).
template <typename T>
Tensor<T> reconstruct_left(Graph<T>& g, const Tensor<T>& right,
                           const Tensor<T>& disparity,
                           std::vector<uint8_t>* mask_out = nullptr) {
  const Shape rs = right.shape;
  const Shape ds = disparity.shape;
  if (ds.c != 1 || ds.n != rs.n || ds.h != rs.h || ds.w != rs.w)
    throw ShapeError("reconstruct_left: disparity shape " + ds.str() +
                     " does not match image " + rs.str());
  const int ir = g.use(right);
  const int id = g.use(disparity);
  const auto& rv = g.saved(ir);
  const auto& dv = g.saved(id);
  std::vector<T> out(rv.size());
  auto mask = std::make_shared<std::vector<uint8_t>>(
      static_cast<size_t>(rs.n * rs.h * rs.w));
  detail::warp_rows(rv.data(), dv.data(), rs.n, rs.c, rs.h, rs.w, out.data(),
                    mask->data());
  if (mask_out) *mask_out = *mask;
  return g.record(
      "reconstruct_left", {ir, id}, rs, std::move(out),
      [ir, id, rs, mask](Graph<T>& g, int self) {
        const auto& go = g.gradient(self);
        const auto& rv = g.saved(ir);
        const auto& dv = g.saved(id);
        auto* gr = g.grad_if(ir);
        auto* gd = g.grad_if(id);
        if (!gr && !gd) return;
        const int64_t plane = rs.h * rs.w;
        for (int64_t n = 0; n < rs.n; ++n)
          for (int64_t j = 0; j < rs.h; ++j)
            for (int64_t i = 0; i < rs.w; ++i) {
              if (!(*mask)[(n * rs.h + j) * rs.w + i]) continue;
              const double x = static_cast<double>(i) -
                               static_cast<double>(
                                   dv[(n * rs.h + j) * rs.w + i]);
              int64_t x0 = static_cast<int64_t>(x);
              if (x0 > rs.w - 2) x0 = rs.w - 2 >= 0 ? rs.w - 2 : 0;
              const double t = x - static_cast<double>(x0);
              double dacc = 0;
              for (int64_t c = 0; c < rs.c; ++c) {
                const T* rrow = rv.data() + (n * rs.c + c) * plane + j * rs.w;
                const T gup = go[(n * rs.c + c) * plane + j * rs.w + i];
                if (gr) {
                  T* grow = gr->data() + (n * rs.c + c) * plane + j * rs.w;
                  grow[x0] += static_cast<T>((1.0 - t) * gup);
                  if (rs.w > 1) grow[x0 + 1] += static_cast<T>(t * gup);
                }
                if (gd && rs.w > 1)
                  dacc += static_cast<double>(gup) *
                          (static_cast<double>(rrow[x0 + 1]) -
                           static_cast<double>(rrow[x0]));
              }
              // d(out)/d(disparity) = -d(out)/dx.
              if (gd)
                (*gd)[(n * rs.h + j) * rs.w + i] -= static_cast<T>(dacc);
            }
      });
}

// Non-recording variant for evaluation paths.
template <typename T>
std::pair<Tensor<T>, std::vector<uint8_t>> reconstruct_left(
    const Tensor<T>& right, const DisparityMap<T>& disparity) {
  disparity.validate();
  const Shape rs = right.shape;
  if (rs.n != 1 || disparity.height != rs.h || disparity.width != rs.w)
    throw ShapeError("reconstruct_left: disparity extents do not match image");
  std::vector<T> out(right.values().size());
  std::vector<uint8_t> mask(static_cast<size_t>(rs.h * rs.w));
  detail::warp_rows(right.values().data(), disparity.values.data(), 1, rs.c,
                    rs.h, rs.w, out.data(), mask.data());
  return {Tensor<T>(rs, std::move(out)), std::move(mask)};
}

template <typename T>
struct SynthesizedView {
  Tensor<T> image;             // same shape as the source view
  std::vector<uint8_t> holes;  // 1 = no source pixel landed here
};

// Forward-splats the left view into right-view geometry: every left pixel
// lands at round(i - d). Collisions keep the nearest surface (smallest z);
// equal depths keep the first writer in scan order. Unfilled columns stay
// zero and are reported as holes.
template <typename T>
SynthesizedView<T> synthesize_right(const Tensor<T>& left,
                                    const DisparityMap<T>& disparity,
                                    const DepthMap<T>& depth) {
  disparity.validate();
  depth.validate();
  detail::expect_state(depth, DepthState::RawZ);
  const Shape s = left.shape;
  if (s.n != 1 || disparity.height != s.h || disparity.width != s.w ||
      depth.height != s.h || depth.width != s.w)
    throw ShapeError("synthesize_right: extents do not match image");
  SynthesizedView<T> view{Tensor<T>(s),
                          std::vector<uint8_t>(
                              static_cast<size_t>(s.h * s.w), 1)};
  auto& out = view.image.values_mut();
  const auto& lv = left.values();
  const int64_t plane = s.h * s.w;
  std::vector<double> zbest(static_cast<size_t>(s.w));
  for (int64_t j = 0; j < s.h; ++j) {
    std::fill(zbest.begin(), zbest.end(),
              std::numeric_limits<double>::infinity());
    for (int64_t i = 0; i < s.w; ++i) {
      const double d =
          static_cast<double>(disparity.values[static_cast<size_t>(j * s.w + i)]);
      const int64_t tx = std::llround(static_cast<double>(i) - d);
      if (tx < 0 || tx >= s.w) continue;
      const double z =
          static_cast<double>(depth.values[static_cast<size_t>(j * s.w + i)]);
      if (z >= zbest[static_cast<size_t>(tx)]) continue;
      zbest[static_cast<size_t>(tx)] = z;
      view.holes[static_cast<size_t>(j * s.w + tx)] = 0;
      for (int64_t c = 0; c < s.c; ++c)
        out[static_cast<size_t>(c * plane + j * s.w + tx)] =
            lv[static_cast<size_t>(c * plane + j * s.w + i)];
    }
  }
  return view;
}

// ---- tensor adapters and target preparation --------------------------------

template <typename T>
DepthMap<T> depth_map_from_tensor(const Tensor<T>& t, DepthState state) {
  if (t.shape.n != 1 || t.shape.c != 1)
    throw ShapeError("depth_map_from_tensor: expected shape (1,1,H,W)");
  return DepthMap<T>{t.shape.h, t.shape.w, t.values(), state};
}

template <typename T>
DisparityMap<T> disparity_map_from_tensor(const Tensor<T>& t) {
  if (t.shape.n != 1 || t.shape.c != 1)
    throw ShapeError("disparity_map_from_tensor: expected shape (1,1,H,W)");
  return DisparityMap<T>{t.shape.h, t.shape.w, t.values()};
}

template <typename T>
Tensor<T> tensor_from_depth_map(const DepthMap<T>& m) {
  m.validate();
  return Tensor<T>(Shape{1, 1, m.height, m.width}, m.values);
}

// Ground truth in raw units -> network target in [0,1]: normalize for the
// active mode, then apply the adjustment exponent.
template <typename T>
Tensor<T> make_training_target(const Tensor<T>& gt_raw, const CameraRig& rig,
                               OutputMode mode, const AdjustmentParams& adj) {
  rig.validate();
  adj.validate();
  std::vector<T> out(gt_raw.values().size());
  const auto& gv = gt_raw.values();
  if (mode == OutputMode::Depth) {
    for (size_t i = 0; i < gv.size(); ++i) {
      const double z =
          std::clamp(static_cast<double>(gv[i]), rig.z_min, rig.z_max);
      out[i] = static_cast<T>(std::pow(1.0 - z / rig.z_max, adj.p));
    }
  } else {
    const double dmax = rig.d_max();
    for (size_t i = 0; i < gv.size(); ++i) {
      const double d = std::clamp(static_cast<double>(gv[i]), 0.0, dmax);
      out[i] = static_cast<T>(std::pow(d / dmax, adj.p));
    }
  }
  return Tensor<T>(gt_raw.shape, std::move(out));
}

// Network output in [0,1] -> raw units (meters or pixels), inverting the
// adjustment first.
template <typename T>
Tensor<T> prediction_to_raw(const Tensor<T>& pred, const CameraRig& rig,
                            OutputMode mode, const AdjustmentParams& adj) {
  rig.validate();
  adj.validate();
  std::vector<T> out(pred.values().size());
  const auto& pv = pred.values();
  const double inv_p = 1.0 / adj.p;
  if (mode == OutputMode::Depth) {
    for (size_t i = 0; i < pv.size(); ++i) {
      const double v = std::pow(
          std::clamp(static_cast<double>(pv[i]), 0.0, 1.0), inv_p);
      out[i] = static_cast<T>(
          std::clamp((1.0 - v) * rig.z_max, rig.z_min, rig.z_max));
    }
  } else {
    const double dmax = rig.d_max();
    for (size_t i = 0; i < pv.size(); ++i) {
      const double v = std::pow(
          std::clamp(static_cast<double>(pv[i]), 0.0, 1.0), inv_p);
      out[i] = static_cast<T>(v * dmax);
    }
  }
  return Tensor<T>(pred.shape, std::move(out));
}

}  // namespace sdepth
