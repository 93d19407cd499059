// Command-line front end: dataset generation, training, evaluation, view
// synthesis, gradient verification, and benchmarking.
//
// Settings resolve as flags > config file > defaults. Every subcommand that
// writes artifacts echoes its fully resolved settings to run.cfg inside the
// output directory; feeding that file back through --config reproduces the
// run byte for byte.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sdepth/sdepth.hpp"

namespace {

using namespace sdepth;

struct Options {
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string warm_start;
  std::string mode = "depth";
  std::string p = "1";  // adjustment exponent, or "auto" to fit from data
  uint64_t seed = 1;
  int64_t count = 10;
  int64_t size = 64;
  int64_t layers = 3;
  int64_t iterations = 2000;
  int64_t batch = 4;
  int64_t eval_every = 50;
  int64_t index = -1;  // synthesize: sample index, -1 = every sample
  double split = 0.9;
  double lr = 1e-3;
  double alpha_z = 1.0;
  double alpha_p = 1.0;
  double z_near = 2.0;
  double z_far = 14.0;
};

// The generator's camera. Fixed so datasets from different runs agree on
// normalization; scenes choose their depth span within this range.
CameraRig default_rig() { return CameraRig{128.0, 0.25, 2.0, 16.0}; }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool parse_strict_double(const std::string& s, double& v) {
  size_t pos = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

void write_text(const std::string& path, const std::string& text) {
  write_binary_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

// One settable value: its flag (for "was it given"), how to read it from a
// config file, and how to print it into run.cfg.
struct Binding {
  CLI::Option* opt = nullptr;
  std::function<void(const KeyValueFile&, const std::string&)> from_cfg;
  std::function<std::string()> to_str;
};

using Bindings = std::vector<std::pair<std::string, Binding>>;

std::string resolved_config_text(const std::string& sub, const Bindings& b) {
  KeyValueFile kv;
  for (const auto& [key, binding] : b) kv.set(key, binding.to_str());
  return "# sdepth " + sub + "\n" + kv.serialize();
}

// ---- subcommand bodies -------------------------------------------------------

int run_gen_data(Options& o, const std::string& cfg_text) {
  const CameraRig rig = default_rig();
  const OutputMode mode = output_mode_from_string(o.mode);
  std::vector<StereoSample<double>> samples;
  samples.reserve(static_cast<size_t>(o.count));
  for (int64_t i = 0; i < o.count; ++i) {
    SceneConfig sc;
    sc.seed = o.seed + static_cast<uint64_t>(i);
    sc.height = o.size;
    sc.width = o.size;
    sc.layer_count = static_cast<int>(o.layers);
    sc.z_near = o.z_near;
    sc.z_far = o.z_far;
    samples.push_back(generate_scene<double>(sc, rig, mode));
  }
  save_dataset(o.out, samples);
  write_text(o.out + "/run.cfg", cfg_text);
  std::printf("wrote %lld %s samples (%lldx%lld) to %s\n",
              static_cast<long long>(o.count), o.mode.c_str(),
              static_cast<long long>(o.size), static_cast<long long>(o.size),
              o.out.c_str());
  return 0;
}

int run_train(Options& o, const Bindings& bindings) {
  auto samples = load_dataset<double>(o.data);
  const CameraRig rig = samples[0].rig;
  const OutputMode mode = samples[0].mode;
  auto [train_set, val_set] =
      split_dataset(std::move(samples), o.split, mix_seed(o.seed, 0x5917));

  double p = 1.0;
  if (o.p == "auto") {
    // Fit the exponent to the training split's normalized ground truth, and
    // freeze the numeric result into the resolved config.
    std::vector<double> normalized;
    const AdjustmentParams identity{1.0};
    for (const auto& s : train_set) {
      const Tensor<double> t = make_training_target(s.gt, rig, mode, identity);
      normalized.insert(normalized.end(), t.values().begin(),
                        t.values().end());
    }
    p = fit_exponent(normalized).p;
    o.p = fmt_double(p);
    std::printf("fitted adjustment exponent p = %s\n", o.p.c_str());
  } else {
    parse_strict_double(o.p, p);  // pre-validated
  }
  if (o.checkpoint.empty()) o.checkpoint = o.out + "/model.ckpt";

  std::filesystem::create_directories(o.out);
  write_text(o.out + "/run.cfg", resolved_config_text("train", bindings));

  ModelConfig mc;
  mc.output_mode = mode;
  Model<double> model = build_model<double>(mc, mix_seed(o.seed, 0xB11D));

  TrainConfig tc;
  tc.iterations = o.iterations;
  tc.batch_size = o.batch;
  tc.seed = o.seed;
  tc.lr = o.lr;
  tc.eval_every = o.eval_every;
  tc.loss.alpha_z = o.alpha_z;
  tc.loss.alpha_p = o.alpha_p;
  tc.loss.enable_projection = o.alpha_p > 0;
  tc.adjustment.p = p;
  tc.checkpoint_path = o.checkpoint;
  tc.warm_start = o.warm_start;

  const TrainHistory history = train(model, train_set, val_set, tc);

  std::string csv =
      "iteration,train_total,train_prediction,train_projection,train_epe,"
      "val_total,val_epe,val_epe_report,val_mae\n";
  for (const EvalPoint& pt : history.points) {
    csv += std::to_string(pt.iteration) + "," + fmt_double(pt.train_total) +
           "," + fmt_double(pt.train_prediction) + "," +
           fmt_double(pt.train_projection) + "," + fmt_double(pt.train_epe) +
           "," + fmt_double(pt.val_total) + "," + fmt_double(pt.val_epe) +
           "," + fmt_double(pt.val_epe_report) + "," +
           fmt_double(pt.val_mae) + "\n";
  }
  write_text(o.out + "/history.csv", csv);

  for (const EvalPoint& pt : history.points)
    std::printf(
        "iter %6lld  train %.6f  train_epe %.6f  val %.6f  val_epe %.6f  "
        "val_mae %.2f\n",
        static_cast<long long>(pt.iteration), pt.train_total, pt.train_epe,
        pt.val_total, pt.val_epe, pt.val_mae);
  std::printf("finished at iteration %lld (%lld skipped batches)\n",
              static_cast<long long>(history.final_iteration),
              static_cast<long long>(history.skipped_batches));
  std::printf("best-validation checkpoint: %s\n", o.checkpoint.c_str());
  return 0;
}

int run_eval(Options& o, const std::string& cfg_text) {
  auto samples = load_dataset<double>(o.data);
  LoadedCheckpoint<double> loaded = load_checkpoint<double>(o.checkpoint);
  const EvalReport report =
      evaluate(loaded.model, samples, loaded.adjustment);
  const std::string text = format_eval_report(report);
  std::filesystem::create_directories(o.out);
  write_text(o.out + "/report.txt", text);
  write_text(o.out + "/run.cfg", cfg_text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

int run_synthesize(Options& o, const std::string& cfg_text) {
  auto samples = load_dataset<double>(o.data);
  LoadedCheckpoint<double> loaded = load_checkpoint<double>(o.checkpoint);
  const OutputMode mode = loaded.model.config.output_mode;
  if (o.index >= static_cast<int64_t>(samples.size()))
    throw DataError("synthesize: index " + std::to_string(o.index) +
                    " out of range, dataset has " +
                    std::to_string(samples.size()) + " samples");

  std::filesystem::create_directories(o.out);
  int64_t first = o.index < 0 ? 0 : o.index;
  int64_t last = o.index < 0 ? static_cast<int64_t>(samples.size()) - 1
                             : o.index;
  for (int64_t i = first; i <= last; ++i) {
    const auto& s = samples[static_cast<size_t>(i)];
    if (s.mode != mode)
      throw ConfigError("synthesize: dataset mode does not match checkpoint");
    Graph<double> g;
    const Tensor<double> pred =
        forward(g, loaded.model, s.left, s.right, Mode::Eval);
    const Tensor<double> raw =
        prediction_to_raw(pred, s.rig, mode, loaded.adjustment);
    DisparityMap<double> dhat;
    DepthMap<double> zhat;
    if (mode == OutputMode::Depth) {
      zhat = depth_map_from_tensor(raw, DepthState::RawZ);
      dhat = depth_to_disparity(zhat, s.rig);
    } else {
      dhat = disparity_map_from_tensor(raw);
      zhat = disparity_to_depth(dhat, s.rig);
    }
    const SynthesizedView<double> view = synthesize_right(s.left, dhat, zhat);
    write_binary_file(o.out + "/" + sample_file_name(i, "view.ppm"),
                      ppm_encode(view.image));
    Tensor<double> holes(Shape{1, 3, s.left.shape.h, s.left.shape.w});
    auto& hv = holes.values_mut();
    const size_t plane = view.holes.size();
    for (size_t c = 0; c < 3; ++c)
      for (size_t k = 0; k < plane; ++k)
        hv[c * plane + k] = view.holes[k] ? 1.0 : 0.0;
    write_binary_file(o.out + "/" + sample_file_name(i, "holes.ppm"),
                      ppm_encode(holes));
  }
  write_text(o.out + "/run.cfg", cfg_text);
  std::printf("wrote %lld synthesized views to %s\n",
              static_cast<long long>(last - first + 1), o.out.c_str());
  return 0;
}

int run_grad_check(const Options& o) {
  std::printf("grad-check: seed %llu, 5 seeds per op, threshold 1e-4\n",
              static_cast<unsigned long long>(o.seed));
  const auto entries = gradient_suite(o.seed, 5);
  double worst = 0;
  std::string worst_name;
  for (const auto& e : entries) {
    std::printf("%-22s max rel error %.3e  (%lld checks)\n", e.name.c_str(),
                e.max_rel_error, static_cast<long long>(e.checked));
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  if (worst >= 1e-4) {
    std::printf("FAIL: %s at %.3e exceeds 1e-4\n", worst_name.c_str(), worst);
    return 1;
  }
  std::printf("OK: all %zu ops below 1e-4 (worst %s at %.3e)\n",
              entries.size(), worst_name.c_str(), worst);
  return 0;
}

int run_bench(const Options& o) {
  std::printf("bench: size %lld, count %lld, seed %llu\n",
              static_cast<long long>(o.size), static_cast<long long>(o.count),
              static_cast<unsigned long long>(o.seed));
  ModelConfig mc;
  Model<double> model = build_model<double>(mc, mix_seed(o.seed, 0xB37C));
  Rng rng(mix_seed(o.seed, 0x1347));
  const Shape img{1, 3, o.size, o.size};
  std::vector<double> lv(static_cast<size_t>(img.count()));
  std::vector<double> rv(lv.size());
  for (auto& v : lv) v = rng.uniform();
  for (auto& v : rv) v = rng.uniform();
  const Tensor<double> left(img, std::move(lv));
  const Tensor<double> right(img, std::move(rv));

  {
    Graph<double> g;  // warm-up pass, excluded from timing
    forward(g, model, left, right, Mode::Eval);
  }
  double total_ms = 0;
  for (int64_t i = 0; i < o.count; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Graph<double> g;
    forward(g, model, left, right, Mode::Eval);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    total_ms += ms;
    std::printf("pair %lld: %.1f ms\n", static_cast<long long>(i), ms);
  }
  std::printf("mean eval-mode forward latency at %lldx%lld: %.1f ms/pair\n",
              static_cast<long long>(o.size), static_cast<long long>(o.size),
              total_ms / static_cast<double>(o.count));
  return 0;
}

// Cheap flag-domain checks; anything that fails here is a usage error.
std::string usage_problem(const std::string& sub, const Options& o) {
  if (sub == "gen-data" || sub == "train" || sub == "eval" ||
      sub == "synthesize") {
    if (o.out.empty()) return "an output directory is required (--out)";
  }
  if (sub == "train" || sub == "eval" || sub == "synthesize") {
    if (o.data.empty()) return "a dataset directory is required";
  }
  if (sub == "eval" || sub == "synthesize") {
    if (o.checkpoint.empty()) return "a checkpoint is required (--checkpoint)";
  }
  if (sub == "gen-data") {
    if (o.count < 1) return "--count must be >= 1";
    if (o.size < 1) return "--size must be >= 1";
    if (o.mode != "depth" && o.mode != "disparity")
      return "--mode must be 'depth' or 'disparity'";
    if (o.layers < 0) return "--layers must be >= 0";
    if (!(o.z_near > 0 && o.z_near <= o.z_far))
      return "need 0 < --z-near <= --z-far";
  }
  if (sub == "train") {
    if (o.iterations < 1) return "--iterations must be >= 1";
    if (o.batch < 1) return "--batch must be >= 1";
    if (o.eval_every < 1) return "--eval-every must be >= 1";
    if (o.lr < 0) return "--lr must be >= 0";
    if (!(o.split > 0 && o.split < 1)) return "--split must be in (0,1)";
    if (o.alpha_z < 0 || o.alpha_p < 0) return "loss weights must be >= 0";
    if (o.alpha_z + o.alpha_p <= 0)
      return "at least one loss weight must be positive";
    double p = 0;
    if (o.p != "auto" && (!parse_strict_double(o.p, p) || p < 1))
      return "--p must be a number >= 1, or 'auto'";
  }
  if (sub == "synthesize" && o.index < -1) return "--index must be >= 0";
  if (sub == "bench") {
    if (o.count < 1) return "--count must be >= 1";
    if (o.size < 8 || o.size % 8 != 0)
      return "--size must be a positive multiple of 8";
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale stereo depth estimation for view synthesis"};
  app.require_subcommand(1);

  Options o;
  std::string config_path;
  std::map<CLI::App*, Bindings> regs;

  auto bind_str = [&](CLI::App* sub, const std::string& flag,
                      const std::string& key, std::string& var,
                      const std::string& desc) {
    Binding b;
    b.opt = sub->add_option(flag, var, desc);
    b.from_cfg = [&var](const KeyValueFile& kv, const std::string& k) {
      var = kv.get(k);
    };
    b.to_str = [&var] { return var; };
    regs[sub].emplace_back(key, std::move(b));
  };
  auto bind_int = [&](CLI::App* sub, const std::string& flag,
                      const std::string& key, int64_t& var,
                      const std::string& desc) {
    Binding b;
    b.opt = sub->add_option(flag, var, desc);
    b.from_cfg = [&var](const KeyValueFile& kv, const std::string& k) {
      var = kv.get_int(k);
    };
    b.to_str = [&var] { return std::to_string(var); };
    regs[sub].emplace_back(key, std::move(b));
  };
  auto bind_seed = [&](CLI::App* sub) {
    Binding b;
    b.opt = sub->add_option("--seed", o.seed, "random seed");
    b.from_cfg = [&](const KeyValueFile& kv, const std::string& k) {
      o.seed = static_cast<uint64_t>(kv.get_int(k));
    };
    b.to_str = [&] { return std::to_string(o.seed); };
    regs[sub].emplace_back("seed", std::move(b));
  };
  auto bind_double = [&](CLI::App* sub, const std::string& flag,
                         const std::string& key, double& var,
                         const std::string& desc) {
    Binding b;
    b.opt = sub->add_option(flag, var, desc);
    b.from_cfg = [&var](const KeyValueFile& kv, const std::string& k) {
      var = kv.get_double(k);
    };
    b.to_str = [&var] { return fmt_double(var); };
    regs[sub].emplace_back(key, std::move(b));
  };
  auto bind_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "key = value file supplying defaults for any flag");
  };

  CLI::App* gen = app.add_subcommand(
      "gen-data", "generate a synthetic rectified stereo dataset");
  bind_config(gen);
  bind_str(gen, "--out", "out", o.out, "output dataset directory");
  bind_seed(gen);
  bind_int(gen, "--count", "count", o.count, "number of stereo pairs");
  bind_int(gen, "--size", "size", o.size, "image height and width");
  bind_str(gen, "--mode", "mode", o.mode,
           "ground-truth kind: depth or disparity");
  bind_int(gen, "--layers", "layers", o.layers,
           "rectangles in front of the backdrop");
  bind_double(gen, "--z-near", "z_near", o.z_near, "nearest scene depth, m");
  bind_double(gen, "--z-far", "z_far", o.z_far, "farthest scene depth, m");

  CLI::App* tr =
      app.add_subcommand("train", "train a model on a dataset directory");
  bind_config(tr);
  bind_str(tr, "data", "data", o.data, "dataset directory (from gen-data)");
  bind_str(tr, "--out", "out", o.out, "output directory for run artifacts");
  bind_seed(tr);
  bind_double(tr, "--split", "split", o.split, "training fraction of the data");
  bind_int(tr, "--iterations", "iterations", o.iterations,
           "optimization steps");
  bind_int(tr, "--batch", "batch", o.batch, "mini-batch size");
  bind_double(tr, "--lr", "lr", o.lr, "Adam learning rate");
  bind_int(tr, "--eval-every", "eval_every", o.eval_every,
           "iterations between evaluations");
  bind_str(tr, "--p", "p", o.p,
           "depth adjustment exponent (>= 1), or 'auto' to fit from data");
  bind_double(tr, "--alpha-z", "alpha_z", o.alpha_z,
              "prediction loss weight");
  bind_double(tr, "--alpha-p", "alpha_p", o.alpha_p,
              "projection loss weight (0 disables the term)");
  bind_str(tr, "--checkpoint", "checkpoint", o.checkpoint,
           "best-model path (default OUT/model.ckpt)");
  bind_str(tr, "--warm-start", "warm_start", o.warm_start,
           "checkpoint to resume from");

  CLI::App* ev =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  bind_config(ev);
  bind_str(ev, "data", "data", o.data, "dataset directory");
  bind_str(ev, "--checkpoint", "checkpoint", o.checkpoint,
           "model checkpoint to evaluate");
  bind_str(ev, "--out", "out", o.out, "output directory for the report");

  CLI::App* sy = app.add_subcommand(
      "synthesize", "reconstruct right views from left views and a model");
  bind_config(sy);
  bind_str(sy, "data", "data", o.data, "dataset directory");
  bind_str(sy, "--checkpoint", "checkpoint", o.checkpoint,
           "model checkpoint to run");
  bind_str(sy, "--out", "out", o.out, "output directory for PPM views");
  bind_int(sy, "--index", "index", o.index,
           "sample index to synthesize (-1 = all)");

  CLI::App* gc = app.add_subcommand(
      "grad-check", "verify analytic gradients against finite differences");
  bind_config(gc);
  bind_seed(gc);

  CLI::App* be =
      app.add_subcommand("bench", "time eval-mode forward passes");
  bind_config(be);
  bind_seed(be);
  bind_int(be, "--size", "size", o.size, "image height and width");
  bind_int(be, "--count", "count", o.count, "timed passes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* active = app.get_subcommands().front();
  const std::string sub = active->get_name();
  Bindings& bindings = regs[active];

  try {
    if (!config_path.empty()) {
      const KeyValueFile kv = KeyValueFile::load(config_path);
      std::set<std::string> known;
      for (const auto& [s, reg] : regs)
        for (const auto& [key, b] : reg) known.insert(key);
      for (const auto& [key, value] : kv.entries())
        if (!known.count(key)) {
          std::fprintf(stderr, "sdepth: unknown config key '%s' in %s\n",
                       key.c_str(), config_path.c_str());
          return 2;
        }
      for (auto& [key, b] : bindings)
        if (!b.opt->count() && kv.has(key)) b.from_cfg(kv, key);
    }

    const std::string problem = usage_problem(sub, o);
    if (!problem.empty()) {
      std::fprintf(stderr, "sdepth %s: %s\n", sub.c_str(), problem.c_str());
      return 2;
    }

    if (sub == "gen-data")
      return run_gen_data(o, resolved_config_text(sub, bindings));
    if (sub == "train") return run_train(o, bindings);
    if (sub == "eval") return run_eval(o, resolved_config_text(sub, bindings));
    if (sub == "synthesize")
      return run_synthesize(o, resolved_config_text(sub, bindings));
    if (sub == "grad-check") return run_grad_check(o);
    return run_bench(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "sdepth: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sdepth: internal error: %s\n", e.what());
    return 1;
  }
}
