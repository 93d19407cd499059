#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "sdepth/geometry.hpp"
#include "sdepth/gradcheck.hpp"
#include "sdepth/rng.hpp"

using namespace sdepth;

namespace {

Tensor<double> random_image(Shape s, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (auto& v : t.values_mut()) v = rng.uniform();
  return t;
}

}  // namespace

TEST(Rig, DerivedQuantitiesAndValidation) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  EXPECT_DOUBLE_EQ(rig.fB(), 32.0);
  EXPECT_DOUBLE_EQ(rig.z_min, 0.16);
  EXPECT_DOUBLE_EQ(rig.d_max(), 200.0);
  EXPECT_DOUBLE_EQ(rig.d_min(), 2.0);
  EXPECT_THROW(make_rig(0.0, 0.25, 16.0), ConfigError);
  EXPECT_THROW(make_rig(128.0, -1.0, 16.0), ConfigError);
  CameraRig bad = rig;
  bad.z_min = 20.0;  // above z_max
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Conversions, DepthDisparityRoundTrip) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  Rng rng(5);
  DepthMap<double> z{1, 1000, {}, DepthState::RawZ};
  for (int i = 0; i < 1000; ++i)
    z.values.push_back(rng.uniform(rig.z_min, rig.z_max));
  const DisparityMap<double> d = depth_to_disparity(z, rig);
  const DepthMap<double> back = disparity_to_depth(d, rig);
  for (size_t i = 0; i < z.values.size(); ++i) {
    EXPECT_NEAR(back.values[i], z.values[i], 1e-12 * z.values[i]);
    EXPECT_NEAR(d.values[i], rig.fB() / z.values[i], 1e-12);
  }
}

TEST(Conversions, OutOfRangeDepthIsClamped) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  const DepthMap<double> z{1, 2, {0.01, 100.0}, DepthState::RawZ};
  const DisparityMap<double> d = depth_to_disparity(z, rig);
  EXPECT_DOUBLE_EQ(d.values[0], rig.d_max());
  EXPECT_DOUBLE_EQ(d.values[1], rig.d_min());
}

TEST(Conversions, NormalizeRoundTripAndOrientation) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  DepthMap<double> z{1, 3, {0.16, 8.0, 16.0}, DepthState::RawZ};
  const DepthMap<double> n = normalize_depth(z, rig);
  EXPECT_EQ(n.state, DepthState::Normalized);
  // Near surfaces map close to 1, far surfaces to 0.
  EXPECT_NEAR(n.values[0], 0.99, 1e-12);
  EXPECT_NEAR(n.values[1], 0.5, 1e-12);
  EXPECT_NEAR(n.values[2], 0.0, 1e-12);
  const DepthMap<double> back = denormalize_depth(n, rig);
  for (size_t i = 0; i < z.values.size(); ++i)
    EXPECT_NEAR(back.values[i], z.values[i], 1e-12);
}

TEST(Adjustment, RoundTripAcrossExponents) {
  Rng rng(6);
  DepthMap<double> n{1, 10000, {}, DepthState::Normalized};
  for (int i = 0; i < 10000; ++i) n.values.push_back(rng.uniform());
  for (const double p : {1.0, 1.5, 2.0, 3.0}) {
    const AdjustmentParams adj{p};
    const DepthMap<double> x = adjust_depth(n, adj);
    EXPECT_EQ(x.state, DepthState::Adjusted);
    const DepthMap<double> back = invert_adjust(x, adj);
    EXPECT_EQ(back.state, DepthState::Recovered);
    for (size_t i = 0; i < n.values.size(); ++i)
      ASSERT_NEAR(back.values[i], n.values[i], 1e-12) << "p=" << p;
  }
}

TEST(Adjustment, StretchesResolutionNearOneAbovePredictedThreshold) {
  // d(v^p)/dv = p*v^(p-1) crosses 1 at v = (1/p)^(1/(p-1)): values above the
  // threshold get spread apart (finer resolution after inversion), values
  // below get squeezed.
  for (const double p : {1.5, 2.0, 3.0}) {
    const AdjustmentParams adj{p};
    const double threshold = std::pow(1.0 / p, 1.0 / (p - 1.0));
    const double h = 1e-6;
    for (int k = 0; k < 1000; ++k) {
      const double v = (k + 0.5) / 1000.0;
      if (std::fabs(v - threshold) < 1e-3) continue;
      DepthMap<double> probe{1, 2, {v - h, v + h}, DepthState::Normalized};
      const DepthMap<double> out = adjust_depth(probe, adj);
      const double slope = (out.values[1] - out.values[0]) / (2 * h);
      ASSERT_NEAR(slope, p * std::pow(v, p - 1.0), 1e-6 * std::max(1.0, slope))
          << "p=" << p << " v=" << v;
      ASSERT_EQ(slope > 1.0, v > threshold) << "p=" << p << " v=" << v;
    }
  }
}

TEST(Adjustment, IdentityWhenPIsOne) {
  DepthMap<double> n{1, 3, {0.1, 0.5, 0.9}, DepthState::Normalized};
  const DepthMap<double> x = adjust_depth(n, AdjustmentParams{1.0});
  EXPECT_EQ(x.values, n.values);
}

TEST(Adjustment, RejectsExponentBelowOne) {
  EXPECT_THROW(AdjustmentParams{0.5}.validate(), ConfigError);
  DepthMap<double> n{1, 1, {0.5}, DepthState::Normalized};
  EXPECT_THROW(adjust_depth(n, AdjustmentParams{0.99}), ConfigError);
}

TEST(PipelineStates, WrongStageIsRejected) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  DepthMap<double> raw{1, 1, {4.0}, DepthState::RawZ};
  DepthMap<double> norm{1, 1, {0.5}, DepthState::Normalized};
  DepthMap<double> adj{1, 1, {0.25}, DepthState::Adjusted};
  EXPECT_THROW(normalize_depth(norm, rig), ContractError);
  EXPECT_THROW(depth_to_disparity(norm, rig), ContractError);
  EXPECT_THROW(adjust_depth(raw, AdjustmentParams{1.5}), ContractError);
  EXPECT_THROW(adjust_depth(adj, AdjustmentParams{1.5}), ContractError);
  EXPECT_THROW(invert_adjust(norm, AdjustmentParams{1.5}), ContractError);
  EXPECT_THROW(denormalize_depth(adj, rig), ContractError);
  DepthMap<double> short_map{2, 2, {1.0}, DepthState::RawZ};
  EXPECT_THROW(short_map.validate(), ShapeError);
}

TEST(FitExponent, UniformSamplesKeepIdentity) {
  Rng rng(77);
  std::vector<double> samples;
  for (int i = 0; i < 20000; ++i) samples.push_back(rng.uniform());
  EXPECT_DOUBLE_EQ(fit_exponent(samples).p, 1.0);
}

TEST(FitExponent, RecoversKnownShapingExponents) {
  // If u is uniform and v = u^(1/q), then v^q is uniform again, so the
  // flattening exponent of v-shaped samples must come out as q.
  {
    Rng rng(42);
    std::vector<double> s;
    for (int i = 0; i < 20000; ++i) s.push_back(std::sqrt(rng.uniform()));
    EXPECT_DOUBLE_EQ(fit_exponent(s).p, 2.0);
  }
  {
    Rng rng(43);
    std::vector<double> s;
    for (int i = 0; i < 20000; ++i)
      s.push_back(std::pow(rng.uniform(), 2.0 / 3.0));
    EXPECT_DOUBLE_EQ(fit_exponent(s).p, 1.5);
  }
}

TEST(FitExponent, MatchesIndependentScorerOnNearHeavyMixture) {
  Rng rng(1234);
  std::vector<double> samples;
  for (int i = 0; i < 4500; ++i) samples.push_back(rng.uniform(0.8, 1.0));
  for (int i = 0; i < 500; ++i) samples.push_back(rng.uniform(0.0, 1.0));

  // Test-side scoring, written from the definition.
  const int bins = 32;
  double best_p = 0, best_score = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 60; ++k) {
    const double p = 1.0 + 0.05 * k;
    std::vector<double> hist(bins, 0.0);
    for (const double s : samples) {
      const int b = std::min(bins - 1,
                             static_cast<int>(std::pow(s, p) * bins));
      hist[b] += 1.0;
    }
    double score = 0;
    for (const double h : hist) {
      const double dev = h - static_cast<double>(samples.size()) / bins;
      score += dev * dev;
    }
    if (score < best_score) {
      best_score = score;
      best_p = p;
    }
  }
  const double got = fit_exponent(samples).p;
  EXPECT_DOUBLE_EQ(got, best_p);
  EXPECT_DOUBLE_EQ(got, 3.9000000000000004);  // frozen
  EXPECT_GT(got, 1.0);
}

TEST(FitExponent, DegenerateInputs) {
  EXPECT_THROW(fit_exponent({}), DataError);
  EXPECT_THROW(fit_exponent({0.5}, 4), ConfigError);
  // All-equal samples score identically for every p; ties keep the smallest.
  EXPECT_DOUBLE_EQ(fit_exponent(std::vector<double>(100, 0.7)).p, 1.0);
}

TEST(SampleRow, ExactAtIntegersLerpBetween) {
  const Tensor<double> img(Shape{1, 2, 2, 4},
                           {1, 2, 3, 4, 5, 6, 7, 8,      // channel 0
                            10, 20, 30, 40, 50, 60, 70, 80});
  const auto a = sample_row(img, 0, 1, 2.0);
  EXPECT_TRUE(a.valid);
  EXPECT_DOUBLE_EQ(a.value, 7.0);
  const auto b = sample_row(img, 1, 0, 1.5);
  EXPECT_TRUE(b.valid);
  EXPECT_DOUBLE_EQ(b.value, 25.0);
  const auto c = sample_row(img, 0, 0, 3.0);  // last column, exact
  EXPECT_TRUE(c.valid);
  EXPECT_DOUBLE_EQ(c.value, 4.0);
  EXPECT_FALSE(sample_row(img, 0, 0, -0.001).valid);
  EXPECT_FALSE(sample_row(img, 0, 0, 3.001).valid);
  EXPECT_THROW(sample_row(img, 2, 0, 1.0), ContractError);
  EXPECT_THROW(sample_row(img, 0, 2, 1.0), ContractError);
}

TEST(Warp, ZeroDisparityIsBitExact) {
  const Tensor<double> right = random_image(Shape{1, 3, 4, 7}, 9);
  const Tensor<double> disp(Shape{1, 1, 4, 7});
  Graph<double> g;
  std::vector<uint8_t> mask;
  const Tensor<double> out = reconstruct_left(g, right, disp, &mask);
  EXPECT_EQ(out.values(), right.values());
  for (const uint8_t m : mask) EXPECT_EQ(m, 1);

  // Non-recording overload must agree.
  const DisparityMap<double> dm{4, 7, std::vector<double>(28, 0.0)};
  const auto [out2, mask2] = reconstruct_left(right, dm);
  EXPECT_EQ(out2.values(), right.values());
}

TEST(Warp, IntegerShiftCopiesColumns) {
  const Tensor<double> right = random_image(Shape{1, 2, 3, 6}, 10);
  const Tensor<double> disp(Shape{1, 1, 3, 6}, std::vector<double>(18, 2.0));
  Graph<double> g;
  std::vector<uint8_t> mask;
  const Tensor<double> out = reconstruct_left(g, right, disp, &mask);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t i = 0; i < 6; ++i) {
        if (i < 2) {
          EXPECT_EQ(mask[static_cast<size_t>(j * 6 + i)], 0);
          EXPECT_EQ(out.at(0, c, j, i), 0.0);
        } else {
          EXPECT_EQ(mask[static_cast<size_t>(j * 6 + i)], 1);
          EXPECT_EQ(out.at(0, c, j, i), right.at(0, c, j, i - 2));
        }
      }
}

TEST(Warp, FractionalShiftInterpolates) {
  const Tensor<double> right = random_image(Shape{1, 1, 1, 5}, 11);
  const Tensor<double> disp(Shape{1, 1, 1, 5}, std::vector<double>(5, 0.25));
  Graph<double> g;
  const Tensor<double> out = reconstruct_left(g, right, disp, nullptr);
  for (int64_t i = 1; i < 5; ++i) {
    const double want = 0.25 * right.at(0, 0, 0, i - 1) +
                        0.75 * right.at(0, 0, 0, i);
    EXPECT_NEAR(out.at(0, 0, 0, i), want, 1e-15);
  }
  EXPECT_EQ(out.at(0, 0, 0, 0), 0.0);  // taps at -0.25
}

TEST(Warp, RejectsMismatchedShapes) {
  Graph<double> g;
  const Tensor<double> right = random_image(Shape{1, 3, 4, 4}, 12);
  const Tensor<double> disp(Shape{1, 1, 4, 5});
  EXPECT_THROW(reconstruct_left(g, right, disp, nullptr), ShapeError);
  const Tensor<double> disp2(Shape{1, 2, 4, 4});
  EXPECT_THROW(reconstruct_left(g, right, disp2, nullptr), ShapeError);
}

TEST(Warp, GradCheckAwayFromKinks) {
  // The warp is piecewise linear in the disparity with kinks at integer
  // sample positions; keep every tap at least 0.2 px from an integer so the
  // probes stay on one linear piece.
  const int64_t w = 8, h = 3;
  const Tensor<double> right = random_image(Shape{1, 2, h, w}, 13);
  Tensor<double> disp(Shape{1, 1, h, w});
  {
    auto& dv = disp.values_mut();
    for (int64_t j = 0; j < h; ++j)
      for (int64_t i = 0; i < w; ++i)
        dv[static_cast<size_t>(j * w + i)] = 0.3 + 0.05 * ((i + j) % 5);
  }
  const double err = grad_check(
      [](Graph<double>& g, std::vector<Tensor<double>>& in) {
        return reconstruct_left(g, in[0], in[1], nullptr);
      },
      {right, disp});
  EXPECT_LT(err, 1e-4);
}

TEST(Warp, DisparityGradientMatchesImageSlope) {
  // One pixel, hand-checkable: out = (1-t)*r[1] + t*r[2] with t = x - 1,
  // x = 3 - d, so d(out)/dd = -(r[2] - r[1]).
  const Tensor<double> right(Shape{1, 1, 1, 4}, {1.0, 5.0, 2.0, 8.0});
  Tensor<double> disp(Shape{1, 1, 1, 4}, {0.0, 0.0, 0.0, 1.6});
  disp.requires_grad = true;
  Graph<double> g;
  const Tensor<double> bdisp = g.leaf(disp);
  const Tensor<double> out = reconstruct_left(g, right, bdisp, nullptr);
  const Tensor<double> loss = weighted_sum(g, out, {0, 0, 0, 1.0});
  g.backward(loss.node);
  EXPECT_DOUBLE_EQ(g.gradient(bdisp.node)[3], -(2.0 - 5.0));
}

TEST(Synthesize, SplatsHolesAndOcclusions) {
  const Tensor<double> left(Shape{1, 1, 1, 4}, {10, 20, 30, 40});
  const DisparityMap<double> disp{1, 4, {2, 2, 0, 0}};
  const DepthMap<double> depth{1, 4, {1, 1, 5, 5}, DepthState::RawZ};
  // Pixels 0 and 1 land at columns -2 and -1 and are dropped; pixels 2 and 3
  // stay in place. Columns 0 and 1 never receive a source pixel.
  const SynthesizedView<double> view = synthesize_right(left, disp, depth);
  EXPECT_EQ(view.image.values(), (std::vector<double>{0, 0, 30, 40}));
  EXPECT_EQ(view.holes, (std::vector<uint8_t>{1, 1, 0, 0}));
}

TEST(Synthesize, NearerSurfaceWinsCollisions) {
  const Tensor<double> left(Shape{1, 1, 1, 4}, {10, 20, 30, 40});
  {
    const DisparityMap<double> disp{1, 4, {0, 1, 0, 0}};
    const DepthMap<double> depth{1, 4, {3, 1, 5, 5}, DepthState::RawZ};
    const SynthesizedView<double> v = synthesize_right(left, disp, depth);
    EXPECT_DOUBLE_EQ(v.image.values()[0], 20.0);  // nearer pixel 1 wins
    EXPECT_EQ(v.holes[1], 1);
  }
  {
    const DisparityMap<double> disp{1, 4, {0, 1, 0, 0}};
    const DepthMap<double> depth{1, 4, {2, 2, 5, 5}, DepthState::RawZ};
    const SynthesizedView<double> v = synthesize_right(left, disp, depth);
    EXPECT_DOUBLE_EQ(v.image.values()[0], 10.0);  // tie keeps first writer
  }
}

TEST(Synthesize, RoundsToNearestColumn) {
  const Tensor<double> left(Shape{1, 1, 1, 4}, {10, 20, 30, 40});
  const DisparityMap<double> disp{1, 4, {0, 0.4, 1.6, 0}};
  const DepthMap<double> depth{1, 4, {1, 1, 1, 2}, DepthState::RawZ};
  const SynthesizedView<double> v = synthesize_right(left, disp, depth);
  // Pixel 1 lands at round(0.6) = 1; pixel 2 at round(0.4) = 0, where it
  // ties pixel 0 on depth and loses to the first writer.
  EXPECT_EQ(v.image.values(), (std::vector<double>{10, 20, 0, 40}));
  EXPECT_EQ(v.holes, (std::vector<uint8_t>{0, 0, 1, 0}));
}

TEST(Synthesize, RequiresRawDepth) {
  const Tensor<double> left(Shape{1, 1, 1, 2}, {1, 2});
  const DisparityMap<double> disp{1, 2, {0, 0}};
  const DepthMap<double> depth{1, 2, {0.5, 0.5}, DepthState::Normalized};
  EXPECT_THROW(synthesize_right(left, disp, depth), ContractError);
}

TEST(Targets, DepthModeRoundTrip) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  const AdjustmentParams adj{1.5};
  Rng rng(14);
  Tensor<double> gt(Shape{1, 1, 4, 4});
  for (auto& v : gt.values_mut()) v = rng.uniform(rig.z_min, rig.z_max);
  const Tensor<double> target =
      make_training_target(gt, rig, OutputMode::Depth, adj);
  for (const double v : target.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const Tensor<double> back =
      prediction_to_raw(target, rig, OutputMode::Depth, adj);
  for (size_t i = 0; i < gt.values().size(); ++i)
    EXPECT_NEAR(back.values()[i], gt.values()[i], 1e-9);
}

TEST(Targets, DisparityModeRoundTrip) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  const AdjustmentParams adj{2.0};
  Rng rng(15);
  Tensor<double> gt(Shape{1, 1, 3, 5});
  for (auto& v : gt.values_mut()) v = rng.uniform(rig.d_min(), rig.d_max());
  const Tensor<double> target =
      make_training_target(gt, rig, OutputMode::Disparity, adj);
  const Tensor<double> back =
      prediction_to_raw(target, rig, OutputMode::Disparity, adj);
  for (size_t i = 0; i < gt.values().size(); ++i)
    EXPECT_NEAR(back.values()[i], gt.values()[i], 1e-9);
}

TEST(Targets, AdjustmentExponentOneIsPlainNormalization) {
  const CameraRig rig = make_rig(128.0, 0.25, 16.0);
  const Tensor<double> gt(Shape{1, 1, 1, 3}, {0.16, 8.0, 16.0});
  const Tensor<double> t =
      make_training_target(gt, rig, OutputMode::Depth, AdjustmentParams{1.0});
  EXPECT_NEAR(t.values()[0], 0.99, 1e-12);
  EXPECT_NEAR(t.values()[1], 0.5, 1e-12);
  EXPECT_NEAR(t.values()[2], 0.0, 1e-12);
}

TEST(Adapters, TensorMapConversions) {
  const Tensor<double> t(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const DepthMap<double> m = depth_map_from_tensor(t, DepthState::RawZ);
  EXPECT_EQ(m.height, 2);
  EXPECT_EQ(m.values, t.values());
  const Tensor<double> back = tensor_from_depth_map(m);
  EXPECT_EQ(back.values(), t.values());
  const Tensor<double> multi(Shape{1, 2, 2, 2});
  EXPECT_THROW(depth_map_from_tensor(multi, DepthState::RawZ), ShapeError);
  EXPECT_THROW(disparity_map_from_tensor(multi), ShapeError);
}

TEST(OutputModes, StringRoundTrip) {
  EXPECT_EQ(output_mode_from_string("depth"), OutputMode::Depth);
  EXPECT_EQ(output_mode_from_string("disparity"), OutputMode::Disparity);
  EXPECT_STREQ(to_string(OutputMode::Depth), "depth");
  EXPECT_THROW(output_mode_from_string("parallax"), ConfigError);
}
