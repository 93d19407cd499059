#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "data.hpp"
#include "geometry.hpp"
#include "model.hpp"

namespace sdepth {

// Mean absolute difference between two equally sized value sets, in
// whatever units the inputs carry.
template <typename T>
double end_point_error(const std::vector<T>& pred, const std::vector<T>& gt) {
  if (pred.size() != gt.size())
    throw ShapeError("end_point_error: size mismatch");
  if (pred.empty()) throw ShapeError("end_point_error: empty input");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    acc += std::fabs(static_cast<double>(pred[i]) -
                     static_cast<double>(gt[i]));
  return acc / static_cast<double>(pred.size());
}

// Depth errors are reported in centimeters, disparity errors in pixels.
inline double epe_report_scale(OutputMode mode) {
  return mode == OutputMode::Depth ? 100.0 : 1.0;
}

// Mean absolute error of a synthesized view against a reference, on the
// 0-255 intensity scale, averaged over channels and non-hole pixels.
template <typename T>
double mae_right_view(const Tensor<T>& synthesized, const Tensor<T>& reference,
                      const std::vector<uint8_t>& holes) {
  if (!(synthesized.shape == reference.shape))
    throw ShapeError("mae_right_view: shape mismatch");
  const Shape s = synthesized.shape;
  if (s.n != 1) throw ShapeError("mae_right_view: expected a single image");
  if (holes.size() != static_cast<size_t>(s.h * s.w))
    throw ShapeError("mae_right_view: hole mask length mismatch");
  const int64_t plane = s.h * s.w;
  const auto& a = synthesized.values();
  const auto& b = reference.values();
  double acc = 0;
  int64_t count = 0;
  for (int64_t i = 0; i < plane; ++i) {
    if (holes[static_cast<size_t>(i)]) continue;
    double pix = 0;
    for (int64_t c = 0; c < s.c; ++c)
      pix += std::fabs(static_cast<double>(a[static_cast<size_t>(c * plane + i)]) -
                       static_cast<double>(b[static_cast<size_t>(c * plane + i)]));
    acc += pix / static_cast<double>(s.c);
    ++count;
  }
  if (count == 0)
    throw DegenerateError("mae_right_view: every pixel is a hole");
  return acc / static_cast<double>(count) * 255.0;
}

struct SampleEval {
  std::string id;
  double epe = 0;  // report units: cm (depth) or px (disparity)
  double mae_right = 0;
  double hole_fraction = 0;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  double epe = 0;
  double mae_right = 0;
  double hole_fraction = 0;
};

// Full evaluation pass: per-sample end-point error against ground truth and
// reconstruction quality of the synthesized right view.
template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<StereoSample<T>>& samples,
                    const AdjustmentParams& adj) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  adj.validate();
  EvalReport report;
  const OutputMode mode = model.config.output_mode;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.mode != mode)
      throw ConfigError("evaluate: sample mode does not match model");
    Graph<T> g;
    const Tensor<T> pred = forward(g, model, s.left, s.right, Mode::Eval);
    const Tensor<T> raw = prediction_to_raw(pred, s.rig, mode, adj);

    SampleEval se;
    se.id = sample_file_name(static_cast<int64_t>(i), "");
    se.id.pop_back();  // drop the trailing separator
    se.epe = end_point_error(raw.values(), s.gt.values()) *
             epe_report_scale(mode);

    DisparityMap<T> dhat;
    DepthMap<T> zhat;
    if (mode == OutputMode::Depth) {
      zhat = depth_map_from_tensor(raw, DepthState::RawZ);
      dhat = depth_to_disparity(zhat, s.rig);
    } else {
      dhat = disparity_map_from_tensor(raw);
      zhat = disparity_to_depth(dhat, s.rig);
    }
    const SynthesizedView<T> view = synthesize_right(s.left, dhat, zhat);
    try {
      se.mae_right = mae_right_view(view.image, s.right, view.holes);
    } catch (const DegenerateError&) {
      // The model pushed every pixel out of view; keep the sample visible
      // in the report instead of failing the whole evaluation.
      se.mae_right = std::numeric_limits<double>::quiet_NaN();
    }
    double holes = 0;
    for (const uint8_t h : view.holes) holes += h;
    se.hole_fraction = holes / static_cast<double>(view.holes.size());

    report.epe += se.epe;
    report.hole_fraction += se.hole_fraction;
    report.samples.push_back(std::move(se));
  }
  const double n = static_cast<double>(report.samples.size());
  report.epe /= n;
  report.hole_fraction /= n;
  double mae = 0;
  int64_t mae_count = 0;
  for (const auto& s : report.samples)
    if (std::isfinite(s.mae_right)) {
      mae += s.mae_right;
      ++mae_count;
    }
  report.mae_right = mae_count > 0
                         ? mae / static_cast<double>(mae_count)
                         : std::numeric_limits<double>::quiet_NaN();
  return report;
}

// Line-delimited records: one per sample, then a summary line.
inline std::string format_eval_report(const EvalReport& report) {
  char buf[256];
  std::string out;
  for (const auto& s : report.samples) {
    std::snprintf(buf, sizeof buf,
                  "sample %s epe %.6f mae_right %.6f hole_fraction %.6f\n",
                  s.id.c_str(), s.epe, s.mae_right, s.hole_fraction);
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "summary count %zu epe %.6f mae_right %.6f hole_fraction %.6f\n",
                report.samples.size(), report.epe, report.mae_right,
                report.hole_fraction);
  out += buf;
  return out;
}

}  // namespace sdepth
