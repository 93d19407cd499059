// Acceptance harness: checks the pipeline end to end and prints one
// [PASS]/[FAIL] line per criterion. Exits nonzero if any criterion fails.
//
// Covered, in order:
//   C1  gradient suite over every differentiable op and both loss chains
//   C2  conv2d against a brute-force summation oracle
//   C3  adjustment algebra: roundtrip identity and the stretch threshold
//   C4  warping identities: zero-disparity, GT reconstruction, hole bands
//   C5  overfit run on eight 64x64 pairs with the default model
//   C6  depth-adjustment ablation (median final validation loss, 5 seeds)
//   C7  projection-loss ablation (median best validation EPE, 5 seeds)
//   C8  exponent fitting against precomputed grid-search results
//   C9  PFM/PPM/checkpoint roundtrips and forward-pass stability
//   C10 byte-identical CLI reruns (gen-data, train, eval)
//   C11 eval-mode forward latency at 256x256 (recorded, no target)
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdepth/sdepth.hpp"

namespace fs = std::filesystem;
using namespace sdepth;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& what, bool pass,
            const std::string& detail) {
  std::printf("[%s] C%d: %s (%s)\n", pass ? "PASS" : "FAIL", idx, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Tensor<double> random_tensor(const Shape& s, uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (auto& v : t.values_mut()) v = rng.uniform(lo, hi);
  return t;
}

CameraRig desk_rig() { return CameraRig{128.0, 0.25, 2.0, 16.0}; }

std::vector<StereoSample<double>> make_scenes(int n, const CameraRig& rig,
                                              OutputMode mode, int64_t hw,
                                              uint64_t seed0, double z_near,
                                              double z_far, int tex_spacing,
                                              int layers) {
  std::vector<StereoSample<double>> out;
  for (int i = 0; i < n; ++i) {
    SceneConfig sc;
    sc.seed = seed0 + static_cast<uint64_t>(i);
    sc.height = hw;
    sc.width = hw;
    sc.layer_count = layers;
    sc.z_near = z_near;
    sc.z_far = z_far;
    sc.tex_spacing = tex_spacing;
    out.push_back(generate_scene<double>(sc, rig, mode));
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- C1 ---------------------------------------------------------------------

void check_gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = gradient_suite(1, 5);
  double worst = 0;
  std::string worst_name = "-";
  int64_t checks = 0;
  for (const auto& e : entries) {
    checks += e.checked;
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-4 && secs < 120.0;
  report(1, "gradient suite below 1e-4 across ops and loss chains", pass,
         fmt("%zu ops, %lld checks, worst %s at %.3e, %.1f s",
             entries.size(), static_cast<long long>(checks),
             worst_name.c_str(), worst, secs));
}

// ---- C2 ---------------------------------------------------------------------

// Literal definition of dilated convolution; out-of-bounds taps read zero.
Tensor<double> conv_oracle(const Tensor<double>& in, const Tensor<double>& k,
                           const std::optional<Tensor<double>>& bias,
                           int stride, int dil, Padding pad) {
  const Shape is = in.shape, ks = k.shape;
  const int64_t oh =
      (is.h + pad.top + pad.bottom - (dil * (ks.h - 1) + 1)) / stride + 1;
  const int64_t ow =
      (is.w + pad.left + pad.right - (dil * (ks.w - 1) + 1)) / stride + 1;
  Tensor<double> out(Shape{is.n, ks.n, oh, ow});
  auto& ov = out.values_mut();
  for (int64_t n = 0; n < is.n; ++n)
    for (int64_t oc = 0; oc < ks.n; ++oc)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? bias->at(0, oc, 0, 0) : 0.0;
          for (int64_t ic = 0; ic < is.c; ++ic)
            for (int64_t ky = 0; ky < ks.h; ++ky)
              for (int64_t kx = 0; kx < ks.w; ++kx) {
                const int64_t iy = oy * stride + ky * dil - pad.top;
                const int64_t ix = ox * stride + kx * dil - pad.left;
                if (iy < 0 || iy >= is.h || ix < 0 || ix >= is.w) continue;
                acc += in.at(n, ic, iy, ix) * k.at(oc, ic, ky, kx);
              }
          ov[static_cast<size_t>(out.index(n, oc, oy, ox))] = acc;
        }
  return out;
}

void check_conv_oracle() {
  Rng rng(0xACC2);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int dil = 1 + trial % 4;  // every dilation appears
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int64_t kh = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t kw = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t ic = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t oc = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t n = 1 + static_cast<int64_t>(rng.below(2));
    const int64_t h = dil * (kh - 1) + 1 + static_cast<int64_t>(rng.below(8));
    const int64_t w = dil * (kw - 1) + 1 + static_cast<int64_t>(rng.below(8));
    Padding pad{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)),
                static_cast<int>(rng.below(4)),
                static_cast<int>(rng.below(4))};

    ConvSpec<double> spec;
    spec.kernel = random_tensor(Shape{oc, ic, kh, kw}, 7100 + trial);
    if (rng.below(2))
      spec.bias = random_tensor(Shape{1, oc, 1, 1}, 7200 + trial);
    spec.stride = stride;
    spec.dilation = dil;
    spec.padding = pad;
    const Tensor<double> in = random_tensor(Shape{n, ic, h, w}, 7300 + trial);

    Graph<double> g;
    const Tensor<double> got = conv2d(g, in, spec);
    const Tensor<double> want =
        conv_oracle(in, spec.kernel, spec.bias, stride, dil, pad);
    if (!(got.shape == want.shape)) {
      report(2, "conv2d matches the brute-force summation", false,
             fmt("trial %d shape %s vs %s", trial, got.shape.str().c_str(),
                 want.shape.str().c_str()));
      return;
    }
    for (size_t i = 0; i < want.values().size(); ++i)
      worst = std::max(worst,
                       std::abs(got.values()[i] - want.values()[i]));
  }
  report(2, "conv2d matches the brute-force summation", worst <= 1e-10,
         fmt("50 configs, dilations 1-4, max abs diff %.3e", worst));
}

// ---- C3 ---------------------------------------------------------------------

void check_adjustment_algebra() {
  double worst = 0;
  for (const double p : {1.0, 1.5, 2.0, 3.0}) {
    Rng rng(31);
    DepthMap<double> m{100, 100, std::vector<double>(10000),
                       DepthState::Normalized};
    for (auto& v : m.values) v = rng.uniform();
    const AdjustmentParams adj{p};
    const DepthMap<double> back = invert_adjust(adjust_depth(m, adj), adj);
    for (size_t i = 0; i < m.values.size(); ++i)
      worst = std::max(worst, std::abs(back.values[i] - m.values[i]));
  }

  bool stretch_ok = true;
  for (const double p : {1.5, 2.0, 3.0}) {
    const double threshold = std::pow(1.0 / p, 1.0 / (p - 1.0));
    for (int k = 0; k < 1000; ++k) {
      const double z = (k + 0.5) / 1000.0;
      const bool stretched = p * std::pow(z, p - 1.0) > 1.0;
      if (stretched != (z > threshold)) stretch_ok = false;
    }
  }
  report(3, "adjustment inverts exactly and stretches above (1/p)^(1/(p-1))",
         worst <= 1e-12 && stretch_ok,
         fmt("roundtrip max err %.3e over 4x10^4 values, stretch grid %s",
             worst, stretch_ok ? "consistent" : "inconsistent"));
}

// ---- C4 ---------------------------------------------------------------------

void check_warping_identities() {
  // Zero disparity copies the source exactly.
  const Tensor<double> img = random_tensor(Shape{1, 3, 9, 13}, 404, 0.0, 1.0);
  const DisparityMap<double> zero{9, 13, std::vector<double>(9 * 13, 0.0)};
  const auto [plain, mask] = reconstruct_left(img, zero);
  bool zero_exact = plain.values() == img.values() &&
                    std::all_of(mask.begin(), mask.end(),
                                [](uint8_t m) { return m == 1; });
  {
    Graph<double> g;
    const Tensor<double> rec =
        reconstruct_left(g, img, Tensor<double>(Shape{1, 1, 9, 13},
                                                std::vector<double>(117, 0.0)));
    zero_exact = zero_exact && rec.values() == img.values();
  }

  // Ground-truth warp photoconsistency across generated scenes, both modes.
  const CameraRig rig = desk_rig();
  double err_sum = 0;
  int64_t err_n = 0;
  for (int i = 0; i < 20; ++i) {
    const OutputMode mode = i < 10 ? OutputMode::Depth : OutputMode::Disparity;
    SceneConfig sc;
    sc.seed = 500 + static_cast<uint64_t>(i);
    sc.height = 32;
    sc.width = 32;
    sc.layer_count = 3;
    sc.tex_spacing = 8;
    const StereoSample<double> s = generate_scene<double>(sc, rig, mode);

    DisparityMap<double> disp;
    if (mode == OutputMode::Depth) {
      DepthMap<double> z = depth_map_from_tensor(s.gt, DepthState::RawZ);
      disp = depth_to_disparity(z, rig);
    } else {
      disp = disparity_map_from_tensor(s.gt);
    }
    const auto [recon, exist] = reconstruct_left(s.right, disp);
    const int64_t plane = 32 * 32;
    for (int64_t px = 0; px < plane; ++px) {
      if (!s.occlusion_mask[static_cast<size_t>(px)]) continue;
      for (int64_t c = 0; c < 3; ++c) {
        err_sum += std::abs(recon.values()[static_cast<size_t>(c * plane + px)] -
                            s.left.values()[static_cast<size_t>(c * plane + px)]);
        ++err_n;
      }
    }
  }
  const double warp_mae = err_sum / static_cast<double>(err_n);

  // Hole band width behind a single rectangle: exactly d_fg - d_bg, plus a
  // d_bg-wide frame band at the right edge.
  bool holes_exact = true;
  const int64_t W = 48, H = 8;
  const int64_t a = 20, b = 36;  // rectangle columns [a, b)
  for (const auto& [d_bg, d_fg] :
       std::vector<std::pair<int64_t, int64_t>>{{2, 8}, {3, 5}, {2, 16}, {4, 12}}) {
    const Tensor<double> left = random_tensor(Shape{1, 3, H, W}, 600 + d_fg,
                                              0.0, 1.0);
    DisparityMap<double> disp{H, W, std::vector<double>(H * W)};
    DepthMap<double> depth{H, W, std::vector<double>(H * W),
                           DepthState::RawZ};
    for (int64_t j = 0; j < H; ++j)
      for (int64_t i = 0; i < W; ++i) {
        const bool fg = i >= a && i < b;
        const double d = static_cast<double>(fg ? d_fg : d_bg);
        disp.values[static_cast<size_t>(j * W + i)] = d;
        depth.values[static_cast<size_t>(j * W + i)] = rig.fB() / d;
      }
    const SynthesizedView<double> view = synthesize_right(left, disp, depth);
    for (int64_t j = 0; j < H && holes_exact; ++j)
      for (int64_t i = 0; i < W; ++i) {
        const bool in_band = i >= b - d_fg && i < b - d_bg;
        const bool at_edge = i >= W - d_bg;
        const bool expect_hole = in_band || at_edge;
        if (view.holes[static_cast<size_t>(j * W + i)] != (expect_hole ? 1 : 0)) {
          holes_exact = false;
          break;
        }
      }
  }

  report(4, "warp identities: zero-d copy, GT photoconsistency, hole bands",
         zero_exact && warp_mae < 2.0 / 255.0 && holes_exact,
         fmt("zero-d %s, GT warp MAE %.5f (< %.5f), hole bands %s",
             zero_exact ? "bit-exact" : "DIFFERS", warp_mae, 2.0 / 255.0,
             holes_exact ? "exact" : "WRONG"));
}

// ---- C5 ---------------------------------------------------------------------

void check_overfit() {
  const auto t0 = Clock::now();
  const CameraRig rig = desk_rig();
  auto samples =
      make_scenes(8, rig, OutputMode::Depth, 64, 100, 2.0, 14.0, 16, 3);
  auto [tr, va] = split_dataset(samples, 0.9, 42);

  ModelConfig mc;  // stock configuration, dropout included
  Model<double> model = build_model<double>(mc, 7);

  TrainConfig tc;
  tc.iterations = 2000;
  tc.batch_size = 4;
  tc.seed = 5;
  tc.lr = 1e-3;
  tc.loss.alpha_z = 1.0;
  tc.loss.alpha_p = 1.0;
  tc.loss.enable_projection = true;
  tc.adjustment.p = 1.5;
  tc.eval_every = 10;
  tc.stop_train_epe = 0.045;

  const TrainHistory h = train(model, tr, va, tc);
  double min_epe = std::numeric_limits<double>::infinity();
  for (const auto& pt : h.points) min_epe = std::min(min_epe, pt.train_epe);
  const double val_first = h.points.front().val_total;   // iteration 10
  const double val_last = h.points.back().val_total;
  const double secs = seconds_since(t0);
  const bool pass = min_epe < 0.05 && val_last < val_first && secs < 900.0;
  report(5, "default model overfits 8 pairs and validation loss decreases",
         pass,
         fmt("train EPE %.4f (< 0.05) by iter %lld, val loss %.4f -> %.4f, "
             "%.0f s",
             min_epe, static_cast<long long>(h.final_iteration), val_first,
             val_last, secs));
}

// ---- C6 / C7 ----------------------------------------------------------------

struct AblationResult {
  double final_val_total = 0;
  double best_val_epe = 0;
};

// One toy training run on near-object-heavy scenes: rectangles spread over
// the full rig range with the backdrop at z_max, so occlusion biases the
// visible pixels toward the camera.
AblationResult ablation_run(uint64_t seed, double p, double alpha_p) {
  const CameraRig rig = desk_rig();
  auto samples = make_scenes(10, rig, OutputMode::Depth, 32,
                             mix_seed(seed, 0xDA7A), 2.0, 16.0, 8, 5);
  auto [tr, va] = split_dataset(samples, 0.7, mix_seed(seed, 0x5011));

  ModelConfig mc;
  mc.base_channels = 8;
  mc.growth = 8;
  mc.dilation_set = {1, 2};
  mc.downscale = 4;
  mc.dropout_rate = 0.0;
  Model<double> model = build_model<double>(mc, mix_seed(seed, 0xB11D));

  TrainConfig tc;
  tc.iterations = 1200;
  tc.batch_size = 2;
  tc.seed = seed;
  tc.lr = 3e-3;
  tc.loss.alpha_z = 1.0;
  tc.loss.alpha_p = alpha_p;
  tc.loss.enable_projection = alpha_p > 0;
  tc.adjustment.p = p;
  tc.eval_every = 100;

  const TrainHistory h = train(model, tr, va, tc);
  AblationResult r;
  r.final_val_total = h.points.back().val_total;
  r.best_val_epe = std::numeric_limits<double>::infinity();
  for (const auto& pt : h.points)
    r.best_val_epe = std::min(r.best_val_epe, pt.val_epe);
  return r;
}

void check_adjustment_ablation() {
  const auto t0 = Clock::now();
  std::vector<double> base, adjusted;
  for (uint64_t s = 1; s <= 5; ++s) {
    base.push_back(ablation_run(s, 1.0, 1.0).final_val_total);
    adjusted.push_back(ablation_run(s, 1.5, 1.0).final_val_total);
  }
  const double m1 = median(base), m15 = median(adjusted);
  report(6, "depth adjustment: median final val loss p=1.5 <= p=1.0",
         m15 <= m1,
         fmt("5 seeds, median %.6f (p=1.5) vs %.6f (p=1.0), %.0f s", m15, m1,
             seconds_since(t0)));
}

void check_projection_ablation() {
  const auto t0 = Clock::now();
  std::vector<double> without, with;
  for (uint64_t s = 1; s <= 5; ++s) {
    without.push_back(ablation_run(s, 1.5, 0.0).best_val_epe);
    with.push_back(ablation_run(s, 1.5, 1.0).best_val_epe);
  }
  const double m0 = median(without), m1 = median(with);
  report(7, "projection loss: median best val EPE alpha_p=1 <= alpha_p=0",
         m1 <= m0,
         fmt("5 seeds, median %.5f (alpha_p=1) vs %.5f (alpha_p=0), %.0f s",
             m1, m0, seconds_since(t0)));
}

// ---- C8 ---------------------------------------------------------------------

void check_exponent_fitting() {
  Rng uniform_rng(77);
  std::vector<double> uniform;
  for (int i = 0; i < 20000; ++i) uniform.push_back(uniform_rng.uniform());
  const double p_uniform = fit_exponent(uniform).p;

  Rng mix_rng(1234);
  std::vector<double> mixture;
  for (int i = 0; i < 4500; ++i) mixture.push_back(mix_rng.uniform(0.8, 1.0));
  for (int i = 0; i < 500; ++i) mixture.push_back(mix_rng.uniform(0.0, 1.0));
  const double p_mix = fit_exponent(mixture).p;
  const double expected_mix = 3.9000000000000004;  // precomputed grid search

  report(8, "exponent fit: uniform keeps p=1, near-heavy mixture matches",
         p_uniform == 1.0 && p_mix == expected_mix,
         fmt("uniform p=%.17g, mixture p=%.17g (expected %.17g)", p_uniform,
             p_mix, expected_mix));
}

// ---- C9 ---------------------------------------------------------------------

void check_roundtrips() {
  // PFM: float payload in, identical bytes and values out.
  PfmImage pfm{6, 5, std::vector<float>(30)};
  Rng rng(88);
  for (auto& v : pfm.values) v = static_cast<float>(rng.uniform(-4.0, 9.0));
  const auto pfm_bytes = pfm_encode(pfm);
  const PfmImage pfm_back = pfm_decode(pfm_bytes);
  const bool pfm_ok = pfm_back.height == pfm.height &&
                      pfm_back.width == pfm.width &&
                      pfm_back.values == pfm.values &&
                      pfm_encode(pfm_back) == pfm_bytes;

  // PPM: values on the 1/255 grid survive encode/decode unchanged.
  Tensor<double> img(Shape{1, 3, 4, 7});
  for (size_t i = 0; i < img.values().size(); ++i)
    img.values_mut()[i] = static_cast<double>(rng.below(256)) / 255.0;
  const auto ppm_bytes = ppm_encode(img);
  const Tensor<double> img_back = ppm_decode<double>(ppm_bytes);
  const bool ppm_ok =
      img_back.values() == img.values() && ppm_encode(img_back) == ppm_bytes;

  // Checkpoint: byte-stable re-encode and bit-identical eval forward.
  const CameraRig rig = desk_rig();
  auto scenes = make_scenes(2, rig, OutputMode::Depth, 16, 300, 2.0, 14.0, 8, 2);
  std::vector<StereoSample<double>> tr{scenes[0]}, va{scenes[1]};
  ModelConfig mc;
  mc.base_channels = 4;
  mc.growth = 4;
  mc.dilation_set = {1, 2};
  mc.downscale = 4;
  Model<double> model = build_model<double>(mc, 11);
  TrainConfig tc;
  tc.iterations = 3;
  tc.batch_size = 1;
  tc.seed = 2;
  tc.lr = 1e-3;
  tc.adjustment.p = 1.3;
  tc.eval_every = 3;
  AdamState<double> adam;
  train(model, tr, va, tc, &adam);

  const auto bytes = encode_checkpoint(model, tc.adjustment, &adam, 3);
  LoadedCheckpoint<double> lc = decode_checkpoint<double>(bytes);
  const bool ckpt_ok =
      encode_checkpoint(lc.model, lc.adjustment, &lc.adam, lc.iteration) ==
      bytes;

  Graph<double> g1, g2;
  const auto before = forward(g1, model, va[0].left, va[0].right, Mode::Eval);
  const auto after =
      forward(g2, lc.model, va[0].left, va[0].right, Mode::Eval);
  const bool fwd_ok = before.values() == after.values();

  report(9, "PFM, PPM, and checkpoint roundtrips are bit-exact",
         pfm_ok && ppm_ok && ckpt_ok && fwd_ok,
         fmt("pfm %s, ppm %s, checkpoint %s, eval forward %s",
             pfm_ok ? "ok" : "BAD", ppm_ok ? "ok" : "BAD",
             ckpt_ok ? "ok" : "BAD", fwd_ok ? "identical" : "DIFFERS"));
}

// ---- C10 --------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(SDEPTH_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_bytes(const fs::path& x, const fs::path& y) {
  return fs::exists(x) && fs::exists(y) &&
         read_binary_file(x.string()) == read_binary_file(y.string());
}

void check_cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "sdepth_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string ds = (root / "ds").string();
  const std::string ds2 = (root / "ds2").string();
  const std::string run = (root / "run").string();
  const std::string ev = (root / "ev").string();
  const std::string ev2 = (root / "ev2").string();

  bool gen_ok = run_cli("gen-data --out " + ds +
                        " --seed 9 --count 3 --size 16") == 0 &&
                run_cli("gen-data --out " + ds2 +
                        " --seed 9 --count 3 --size 16") == 0;
  for (int i = 0; i < 3 && gen_ok; ++i)
    for (const char* sfx : {"left.ppm", "right.ppm", "gt.pfm"})
      gen_ok = gen_ok && same_bytes(fs::path(ds) / sample_file_name(i, sfx),
                                    fs::path(ds2) / sample_file_name(i, sfx));
  gen_ok = gen_ok && same_bytes(fs::path(ds) / "rig.cfg",
                                fs::path(ds2) / "rig.cfg");

  const std::string train_cmd =
      "train " + ds + " --out " + run +
      " --seed 3 --iterations 6 --eval-every 3 --batch 2";
  bool train_ok = run_cli(train_cmd) == 0;
  std::vector<uint8_t> hist, ckpt, cfg;
  if (train_ok) {
    hist = read_binary_file(run + "/history.csv");
    ckpt = read_binary_file(run + "/model.ckpt");
    cfg = read_binary_file(run + "/run.cfg");
    fs::remove_all(run);
    train_ok = run_cli(train_cmd) == 0 &&
               read_binary_file(run + "/history.csv") == hist &&
               read_binary_file(run + "/model.ckpt") == ckpt &&
               read_binary_file(run + "/run.cfg") == cfg;
  }

  const bool eval_ok =
      run_cli("eval " + ds + " --checkpoint " + run + "/model.ckpt --out " +
              ev) == 0 &&
      run_cli("eval " + ds + " --checkpoint " + run + "/model.ckpt --out " +
              ev2) == 0 &&
      same_bytes(fs::path(ev) / "report.txt", fs::path(ev2) / "report.txt");

  report(10, "CLI reruns are byte-identical (gen-data, train, eval)",
         gen_ok && train_ok && eval_ok,
         fmt("gen-data %s, train %s, eval %s", gen_ok ? "ok" : "BAD",
             train_ok ? "ok" : "BAD", eval_ok ? "ok" : "BAD"));
  fs::remove_all(root);
}

// ---- C11 --------------------------------------------------------------------

void check_bench() {
  ModelConfig mc;
  Model<double> model = build_model<double>(mc, 1);
  const Tensor<double> left = random_tensor(Shape{1, 3, 256, 256}, 1, 0.0, 1.0);
  const Tensor<double> right =
      random_tensor(Shape{1, 3, 256, 256}, 2, 0.0, 1.0);
  {
    Graph<double> g;  // warm-up pass
    forward(g, model, left, right, Mode::Eval);
  }
  const int reps = 3;
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) {
    Graph<double> g;
    forward(g, model, left, right, Mode::Eval);
  }
  const double ms = seconds_since(t0) * 1000.0 / reps;
  report(11, "eval-mode forward latency at 256x256 recorded", true,
         fmt("%.1f ms per pair, %d reps, double precision, one core", ms,
             reps));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  struct Step {
    void (*fn)();
    int idx;
    const char* what;
  };
  const Step steps[] = {
      {check_gradient_suite, 1, "gradient suite"},
      {check_conv_oracle, 2, "conv oracle"},
      {check_adjustment_algebra, 3, "adjustment algebra"},
      {check_warping_identities, 4, "warping identities"},
      {check_overfit, 5, "overfit run"},
      {check_adjustment_ablation, 6, "adjustment ablation"},
      {check_projection_ablation, 7, "projection ablation"},
      {check_exponent_fitting, 8, "exponent fitting"},
      {check_roundtrips, 9, "roundtrips"},
      {check_cli_determinism, 10, "CLI determinism"},
      {check_bench, 11, "bench"},
  };
  for (const Step& s : steps) {
    try {
      s.fn();
    } catch (const std::exception& e) {
      report(s.idx, s.what, false, fmt("exception: %s", e.what()));
    }
  }
  std::printf("%d of 11 criteria passed in %.0f s\n", 11 - g_failures,
              seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
