#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "tensor.hpp"

namespace sdepth {

struct LossConfig {
  double alpha_z = 1.0;  // prediction term weight
  double alpha_p = 1.0;  // projection term weight
  bool enable_projection = true;

  void validate() const {
    if (alpha_z < 0 || alpha_p < 0)
      throw ConfigError("loss: weights must be >= 0");
    if (alpha_z + alpha_p <= 0)
      throw ConfigError("loss: at least one weight must be positive");
  }
};

struct LossBreakdown {
  double total = 0;
  double prediction = 0;  // mean squared prediction error
  double projection = 0;  // mean squared reprojection error
  int64_t n_z = 0;        // pixels in the prediction term
  int64_t n_p = 0;        // valid pixels in the projection term
  int node = -1;          // graph node of the total, for backward()
};

// Mean squared error between the network output and the adjusted target.
template <typename T>
Tensor<T> prediction_loss(Graph<T>& g, const Tensor<T>& pred,
                          const Tensor<T>& target) {
  if (!(pred.shape == target.shape))
    throw ShapeError("prediction_loss: shape mismatch " + pred.shape.str() +
                     " vs " + target.shape.str());
  Tensor<T> diff = sub(g, pred, target);
  return mean(g, mul(g, diff, diff));
}

// Right-to-left reprojection error. The prediction is decoded into a
// disparity map (inverting the adjustment, then the mode's normalization),
// the right view is warped by it, and the result is compared against the
// left view over valid pixels. Returns the scalar loss and the valid-pixel
// count N_p, which is treated as a constant in the backward pass.
template <typename T>
std::pair<Tensor<T>, int64_t> projection_loss(Graph<T>& g,
                                              const Tensor<T>& pred,
                                              const Tensor<T>& left,
                                              const Tensor<T>& right,
                                              const CameraRig& rig,
                                              OutputMode mode,
                                              const AdjustmentParams& adj) {
  rig.validate();
  adj.validate();
  const Shape ps = pred.shape;
  const Shape ls = left.shape;
  if (ps.c != 1 || ps.n != ls.n || ps.h != ls.h || ps.w != ls.w)
    throw ShapeError("projection_loss: prediction shape " + ps.str() +
                     " does not match images " + ls.str());
  if (!(left.shape == right.shape))
    throw ShapeError("projection_loss: left and right shapes differ");

  Tensor<T> v = adj.p == 1.0
                    ? pred
                    : pow_scalar(g, pred, static_cast<T>(1.0 / adj.p));
  Tensor<T> disparity;
  if (mode == OutputMode::Depth) {
    Tensor<T> z = scale_shift(g, v, static_cast<T>(-rig.z_max),
                              static_cast<T>(rig.z_max));
    z = clamp(g, z, static_cast<T>(rig.z_min), static_cast<T>(rig.z_max));
    disparity = reciprocal_scale(g, z, static_cast<T>(rig.fB()));
  } else {
    disparity = scale_shift(g, v, static_cast<T>(rig.d_max()), T(0));
  }

  std::vector<uint8_t> mask;
  Tensor<T> warped = reconstruct_left(g, right, disparity, &mask);
  int64_t n_p = 0;
  for (const uint8_t b : mask) n_p += b;
  if (n_p == 0)
    throw DegenerateError("projection_loss: no valid pixels to compare");

  Tensor<T> diff = sub(g, warped, left);
  Tensor<T> sq = mul(g, diff, diff);
  // Replicate the per-pixel mask across channels; squared errors are
  // averaged over channels via the denominator.
  const int64_t plane = ls.h * ls.w;
  std::vector<uint8_t> cmask(static_cast<size_t>(ls.count()));
  for (int64_t n = 0; n < ls.n; ++n)
    for (int64_t c = 0; c < ls.c; ++c)
      for (int64_t i = 0; i < plane; ++i)
        cmask[static_cast<size_t>((n * ls.c + c) * plane + i)] =
            mask[static_cast<size_t>(n * plane + i)];
  Tensor<T> loss = masked_mean(g, sq, std::move(cmask), n_p * ls.c);
  return {loss, n_p};
}

// Weighted combination; the breakdown's total is the recorded node's value,
// so total == alpha_z * prediction + alpha_p * projection holds exactly in
// T arithmetic.
template <typename T>
LossBreakdown total_loss(Graph<T>& g, const Tensor<T>& pred,
                         const Tensor<T>& target, const Tensor<T>& left,
                         const Tensor<T>& right, const CameraRig& rig,
                         OutputMode mode, const AdjustmentParams& adj,
                         const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown b;
  Tensor<T> lp = prediction_loss(g, pred, target);
  b.prediction = static_cast<double>(lp.values()[0]);
  b.n_z = target.size();
  Tensor<T> total = scale_shift(g, lp, static_cast<T>(cfg.alpha_z), T(0));
  if (cfg.enable_projection) {
    auto [lproj, n_p] = projection_loss(g, pred, left, right, rig, mode, adj);
    b.projection = static_cast<double>(lproj.values()[0]);
    b.n_p = n_p;
    total = add(g, total,
                scale_shift(g, lproj, static_cast<T>(cfg.alpha_p), T(0)));
  }
  b.total = static_cast<double>(total.values()[0]);
  b.node = total.node;
  return b;
}

}  // namespace sdepth
