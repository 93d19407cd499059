#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace sdepth {

// Adam with bias correction. First and second moments are stored in the
// tensor precision; the update itself is computed in double.
template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<T>> m, v;  // parallel to the parameter list

  void validate() const {
    if (!(lr >= 0)) throw ConfigError("adam: lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("adam: betas must be in [0,1)");
    if (!(epsilon > 0)) throw ConfigError("adam: epsilon must be > 0");
  }
};

// One optimizer step. An empty gradient vector means "no gradient reached
// this parameter" and is treated as zero.
template <typename T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
               const std::vector<std::vector<T>>& grads, AdamState<T>& state) {
  state.validate();
  if (grads.size() != params.size())
    throw ContractError("adam_step: gradient list length mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second->values().size(), T(0));
      state.v[i].assign(params[i].second->values().size(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state tracks a different parameter list");
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].second;
    auto& pv = p.values_mut();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != pv.size())
      throw ShapeError("adam_step: moment size mismatch for " +
                       params[i].first);
    if (!grads[i].empty() && grads[i].size() != pv.size())
      throw ShapeError("adam_step: gradient size mismatch for " +
                       params[i].first);
    for (size_t k = 0; k < pv.size(); ++k) {
      const double gk =
          grads[i].empty() ? 0.0 : static_cast<double>(grads[i][k]);
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      pv[k] = static_cast<T>(pv[k] -
                             state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

struct TrainConfig {
  int64_t iterations = 2000;  // final global iteration; resumes count from
                              // the checkpoint's iteration, fresh runs from 0
  int64_t batch_size = 4;
  uint64_t seed = 1;
  double lr = 1e-3;  // 0 is legal and leaves the parameters untouched
  LossConfig loss{};
  AdjustmentParams adjustment{};
  int64_t eval_every = 50;
  std::string checkpoint_path{};  // best-validation model; empty = none
  std::string warm_start{};      // checkpoint to resume from
  double stop_train_epe = 0;     // > 0 stops once train EPE drops below

  void validate() const {
    if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(lr >= 0)) throw ConfigError("train: lr must be >= 0");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    loss.validate();
    adjustment.validate();
  }
};

struct EvalPoint {
  int64_t iteration = 0;
  double train_total = 0, train_prediction = 0, train_projection = 0;
  double train_epe = 0;       // normalized units, train split, eval mode
  double val_total = 0;       // loss on the validation split
  double val_epe = 0;         // normalized units
  double val_epe_report = 0;  // cm (depth) or px (disparity)
  double val_mae = 0;         // synthesized right view, 0-255 scale
};

struct TrainHistory {
  std::vector<EvalPoint> points;
  int64_t skipped_batches = 0;
  int64_t final_iteration = 0;
};

// ---- checkpoints -------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[4] = {'S', 'D', 'C', 'K'};
constexpr uint16_t kCheckpointVersion = 1;

inline uint64_t fnv1a64(const uint8_t* data, size_t len, uint64_t h) {
  for (size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

template <typename T>
void put_payload(std::vector<uint8_t>& out, const std::vector<T>& values) {
  for (const T x : values) {
    if constexpr (sizeof(T) == 4) {
      uint32_t bits;
      std::memcpy(&bits, &x, 4);
      put_u32(out, bits);
    } else {
      uint64_t bits;
      std::memcpy(&bits, &x, 8);
      put_u64(out, bits);
    }
  }
}

struct CheckpointCursor {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (bytes.size() - pos < n)
      throw FormatError("checkpoint: truncated record");
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
};

template <typename T>
constexpr uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 1 : 2;
}

template <typename T>
void put_record(std::vector<uint8_t>& out, const std::string& name,
                const Shape& shape, const std::vector<T>& values) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(dtype_tag<T>());
  put_u64(out, static_cast<uint64_t>(shape.n));
  put_u64(out, static_cast<uint64_t>(shape.c));
  put_u64(out, static_cast<uint64_t>(shape.h));
  put_u64(out, static_cast<uint64_t>(shape.w));
  put_payload(out, values);
}

}  // namespace detail

// Binary snapshot of a model plus (optionally) the optimizer: "SDCK" magic,
// format version, a key=value config block, length-prefixed named tensor
// records, and a trailing FNV-1a checksum over everything before it.
template <typename T>
std::vector<uint8_t> encode_checkpoint(Model<T>& model,
                                       const AdjustmentParams& adj,
                                       const AdamState<T>* adam = nullptr,
                                       int64_t iteration = 0) {
  std::vector<uint8_t> out(detail::kCheckpointMagic,
                           detail::kCheckpointMagic + 4);
  detail::put_u16(out, detail::kCheckpointVersion);

  KeyValueFile kv;
  kv.set("dtype", sizeof(T) == 4 ? "f32" : "f64");
  model.config.to_kv(kv);
  kv.set_double("p", adj.p);
  kv.set_int("iteration", iteration);
  if (adam) {
    kv.set_double("adam_lr", adam->lr);
    kv.set_double("adam_beta1", adam->beta1);
    kv.set_double("adam_beta2", adam->beta2);
    kv.set_double("adam_epsilon", adam->epsilon);
    kv.set_int("adam_t", adam->t);
  }
  const std::string cfg = kv.serialize();
  detail::put_u32(out, static_cast<uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());

  const auto params = model.parameters();
  const auto buffers = model.buffers();
  uint32_t records = static_cast<uint32_t>(params.size() + buffers.size());
  const bool with_adam = adam && !adam->m.empty();
  if (with_adam) {
    if (adam->m.size() != params.size())
      throw ContractError("checkpoint: optimizer tracks a different model");
    records += static_cast<uint32_t>(2 * params.size());
  }
  detail::put_u32(out, records);

  for (const auto& [name, t] : params)
    detail::put_record(out, name, t->shape, t->values());
  for (const auto& [name, vec] : buffers)
    detail::put_record(out, name,
                       Shape{1, static_cast<int64_t>(vec->size()), 1, 1}, *vec);
  if (with_adam)
    for (size_t i = 0; i < params.size(); ++i) {
      detail::put_record(out, "adam.m." + params[i].first,
                         params[i].second->shape, adam->m[i]);
      detail::put_record(out, "adam.v." + params[i].first,
                         params[i].second->shape, adam->v[i]);
    }

  detail::put_u64(out, detail::fnv1a64(out.data(), out.size(),
                                       0xcbf29ce484222325ull));
  return out;
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  AdamState<T> adam;  // moments empty when the checkpoint carried none
  AdjustmentParams adjustment;
  int64_t iteration = 0;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 14) throw FormatError("checkpoint: too short");
  if (std::memcmp(bytes.data(), detail::kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  const uint64_t stored_sum =
      detail::CheckpointCursor{bytes, bytes.size() - 8}.u64();
  const uint64_t computed_sum = detail::fnv1a64(
      bytes.data(), bytes.size() - 8, 0xcbf29ce484222325ull);
  if (stored_sum != computed_sum)
    throw FormatError("checkpoint: checksum mismatch");

  detail::CheckpointCursor cur{bytes, 4};
  const uint16_t version = cur.u16();
  if (version != detail::kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));
  const uint32_t cfg_len = cur.u32();
  cur.need(cfg_len);
  const std::string cfg_text(bytes.begin() + static_cast<int64_t>(cur.pos),
                             bytes.begin() + static_cast<int64_t>(cur.pos) +
                                 cfg_len);
  cur.pos += cfg_len;
  const KeyValueFile kv = KeyValueFile::parse(cfg_text);

  const std::string dtype = kv.get("dtype");
  const std::string want = sizeof(T) == 4 ? "f32" : "f64";
  if (dtype != want)
    throw FormatError("checkpoint: dtype is " + dtype + ", expected " + want);

  LoadedCheckpoint<T> loaded;
  loaded.model = build_model<T>(ModelConfig::from_kv(kv), 0);
  loaded.adjustment.p = kv.get_double("p");
  loaded.adjustment.validate();
  loaded.iteration = kv.get_int("iteration");
  if (kv.has("adam_t")) {
    loaded.adam.lr = kv.get_double("adam_lr");
    loaded.adam.beta1 = kv.get_double("adam_beta1");
    loaded.adam.beta2 = kv.get_double("adam_beta2");
    loaded.adam.epsilon = kv.get_double("adam_epsilon");
    loaded.adam.t = kv.get_int("adam_t");
  }

  const auto params = loaded.model.parameters();
  const auto buffers = loaded.model.buffers();
  const uint32_t records = cur.u32();

  auto read_values = [&cur](size_t count) {
    std::vector<T> values(count);
    for (size_t i = 0; i < count; ++i) {
      if constexpr (sizeof(T) == 4) {
        const uint32_t bits = cur.u32();
        std::memcpy(&values[i], &bits, 4);
      } else {
        const uint64_t bits = cur.u64();
        std::memcpy(&values[i], &bits, 8);
      }
    }
    return values;
  };

  bool adam_seen = false;
  for (uint32_t r = 0; r < records; ++r) {
    const uint32_t name_len = cur.u32();
    cur.need(name_len);
    const std::string name(bytes.begin() + static_cast<int64_t>(cur.pos),
                           bytes.begin() + static_cast<int64_t>(cur.pos) +
                               name_len);
    cur.pos += name_len;
    cur.need(1);
    const uint8_t tag = bytes[cur.pos++];
    if (tag != detail::dtype_tag<T>())
      throw FormatError("checkpoint: record '" + name + "' has foreign dtype");
    Shape shape;
    shape.n = static_cast<int64_t>(cur.u64());
    shape.c = static_cast<int64_t>(cur.u64());
    shape.h = static_cast<int64_t>(cur.u64());
    shape.w = static_cast<int64_t>(cur.u64());
    std::vector<T> values = read_values(static_cast<size_t>(shape.count()));

    bool placed = false;
    if (name.rfind("adam.", 0) == 0) {
      if (!adam_seen) {
        loaded.adam.m.resize(params.size());
        loaded.adam.v.resize(params.size());
        adam_seen = true;
      }
      const bool is_m = name.rfind("adam.m.", 0) == 0;
      const std::string pname = name.substr(7);
      for (size_t i = 0; i < params.size(); ++i)
        if (params[i].first == pname) {
          if (!(params[i].second->shape == shape))
            throw ShapeError("checkpoint: parameter " + pname +
                             " has shape " + params[i].second->shape.str() +
                             ", record has " + shape.str());
          (is_m ? loaded.adam.m : loaded.adam.v)[i] = std::move(values);
          placed = true;
          break;
        }
    } else {
      for (const auto& [pname, t] : params)
        if (pname == name) {
          if (!(t->shape == shape))
            throw ShapeError("checkpoint: parameter " + name + " has shape " +
                             t->shape.str() + ", record has " + shape.str());
          t->values_mut() = std::move(values);
          placed = true;
          break;
        }
      if (!placed)
        for (const auto& [bname, vec] : buffers)
          if (bname == name) {
            if (shape.count() != static_cast<int64_t>(vec->size()))
              throw ShapeError("checkpoint: buffer " + name +
                               " length mismatch");
            *vec = std::move(values);
            placed = true;
            break;
          }
    }
    if (!placed)
      throw ShapeError("checkpoint: unknown record '" + name + "'");
  }
  return loaded;
}

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model,
                     const AdjustmentParams& adj,
                     const AdamState<T>* adam = nullptr,
                     int64_t iteration = 0) {
  write_binary_file(path, encode_checkpoint(model, adj, adam, iteration));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(read_binary_file(path));
}

// ---- training loop -----------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> stack_batch(const std::vector<StereoSample<T>>& samples,
                      const std::vector<size_t>& ids,
                      const Tensor<T> StereoSample<T>::*field) {
  const Shape one = (samples[ids[0]].*field).shape;
  Tensor<T> out(Shape{static_cast<int64_t>(ids.size()), one.c, one.h, one.w});
  auto& ov = out.values_mut();
  const size_t stride = (samples[ids[0]].*field).values().size();
  for (size_t b = 0; b < ids.size(); ++b)
    std::memcpy(ov.data() + b * stride,
                (samples[ids[b]].*field).values().data(), stride * sizeof(T));
  return out;
}

template <typename T>
Tensor<T> stack_targets(const std::vector<Tensor<T>>& targets,
                        const std::vector<size_t>& ids) {
  const Shape one = targets[ids[0]].shape;
  Tensor<T> out(Shape{static_cast<int64_t>(ids.size()), one.c, one.h, one.w});
  auto& ov = out.values_mut();
  const size_t stride = targets[ids[0]].values().size();
  for (size_t b = 0; b < ids.size(); ++b)
    std::memcpy(ov.data() + b * stride, targets[ids[b]].values().data(),
                stride * sizeof(T));
  return out;
}

// Mean absolute error between recovered predictions and plain normalized
// ground truth, in eval mode, over a whole split.
template <typename T>
double split_epe_normalized(Model<T>& model,
                            const std::vector<StereoSample<T>>& split,
                            const std::vector<Tensor<T>>& norm_targets,
                            const AdjustmentParams& adj) {
  double acc = 0;
  for (size_t i = 0; i < split.size(); ++i) {
    Graph<T> g;
    Tensor<T> pred = forward(g, model, split[i].left, split[i].right,
                             Mode::Eval);
    const auto& pv = pred.values();
    const auto& tv = norm_targets[i].values();
    double s = 0;
    for (size_t k = 0; k < pv.size(); ++k) {
      const double rec = std::pow(
          std::clamp(static_cast<double>(pv[k]), 0.0, 1.0), 1.0 / adj.p);
      s += std::fabs(rec - static_cast<double>(tv[k]));
    }
    acc += s / static_cast<double>(pv.size());
  }
  return acc / static_cast<double>(split.size());
}

}  // namespace detail

// Shuffled mini-batch training with periodic evaluation. Keeps the model
// with the best validation EPE when a checkpoint path is configured. A
// warm-start checkpoint restores weights, running stats, optimizer state,
// and the iteration counter, so a resumed run replays the original one.
// Batches whose projection term has no valid pixels are skipped; if more
// than half of all attempted batches skip, training aborts.
template <typename T>
TrainHistory train(Model<T>& model,
                   const std::vector<StereoSample<T>>& train_set,
                   const std::vector<StereoSample<T>>& val_set,
                   const TrainConfig& cfg, AdamState<T>* adam_io = nullptr) {
  cfg.validate();
  model.config.validate();
  if (train_set.empty()) throw DataError("train: empty training split");
  if (val_set.empty()) throw DataError("train: empty validation split");

  const CameraRig rig = train_set[0].rig;
  const OutputMode mode = model.config.output_mode;
  auto check_sample = [&](const StereoSample<T>& s) {
    if (s.mode != mode)
      throw ConfigError("train: sample mode does not match model output mode");
    if (!(s.left.shape == train_set[0].left.shape))
      throw DataError("train: samples disagree on extents");
  };
  for (const auto& s : train_set) check_sample(s);
  for (const auto& s : val_set) check_sample(s);

  // Precompute targets: adjusted for the loss, plain-normalized for EPE.
  const AdjustmentParams identity{1.0};
  std::vector<Tensor<T>> train_targets, train_norm, val_norm;
  for (const auto& s : train_set) {
    train_targets.push_back(
        make_training_target(s.gt, rig, mode, cfg.adjustment));
    train_norm.push_back(make_training_target(s.gt, rig, mode, identity));
  }
  std::vector<Tensor<T>> val_targets;
  for (const auto& s : val_set) {
    val_targets.push_back(
        make_training_target(s.gt, rig, mode, cfg.adjustment));
    val_norm.push_back(make_training_target(s.gt, rig, mode, identity));
  }

  AdamState<T> local_adam;
  AdamState<T>& adam = adam_io ? *adam_io : local_adam;
  auto params = model.parameters();

  int64_t start_iter = 0;
  if (!cfg.warm_start.empty()) {
    LoadedCheckpoint<T> prev = load_checkpoint<T>(cfg.warm_start);
    const auto src = prev.model.parameters();
    if (src.size() != params.size())
      throw ShapeError("warm start: checkpoint has " +
                       std::to_string(src.size()) + " parameters, model has " +
                       std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
      if (src[i].first != params[i].first)
        throw ShapeError("warm start: parameter list mismatch at '" +
                         params[i].first + "' vs checkpoint '" + src[i].first +
                         "'");
      if (!(src[i].second->shape == params[i].second->shape))
        throw ShapeError("warm start: parameter " + params[i].first +
                         " has shape " + params[i].second->shape.str() +
                         ", checkpoint has " + src[i].second->shape.str());
    }
    for (size_t i = 0; i < params.size(); ++i)
      params[i].second->values_mut() = src[i].second->values();
    const auto dst_buf = model.buffers();
    const auto src_buf = prev.model.buffers();
    if (src_buf.size() != dst_buf.size())
      throw ShapeError("warm start: buffer count mismatch");
    for (size_t i = 0; i < dst_buf.size(); ++i) {
      if (src_buf[i].second->size() != dst_buf[i].second->size())
        throw ShapeError("warm start: buffer " + dst_buf[i].first +
                         " length mismatch");
      *dst_buf[i].second = *src_buf[i].second;
    }
    // The optimizer picks up exactly where it stopped; only lr follows cfg.
    if (!prev.adam.m.empty() || prev.adam.t > 0) adam = std::move(prev.adam);
    start_iter = prev.iteration;
  }
  adam.lr = cfg.lr;

  TrainHistory history;
  history.final_iteration = start_iter;
  double best_val = std::numeric_limits<double>::infinity();

  Rng order_rng(mix_seed(cfg.seed, 0x0D381));
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces a shuffle on first use

  int64_t attempted = 0;
  for (int64_t iter = start_iter + 1; iter <= cfg.iterations; ++iter) {
    std::vector<size_t> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    Tensor<T> bleft = detail::stack_batch(train_set, batch,
                                          &StereoSample<T>::left);
    Tensor<T> bright = detail::stack_batch(train_set, batch,
                                           &StereoSample<T>::right);
    Tensor<T> btarget = detail::stack_targets(train_targets, batch);

    ++attempted;
    Graph<T> g;
    Tensor<T> pred = forward(g, model, bleft, bright, Mode::Train,
                             mix_seed(cfg.seed, 0xD0, iter));
    LossBreakdown lb;
    try {
      lb = total_loss(g, pred, btarget, bleft, bright, rig, mode,
                      cfg.adjustment, cfg.loss);
    } catch (const DegenerateError&) {
      ++history.skipped_batches;
      if (attempted >= 8 && history.skipped_batches * 2 > attempted)
        throw DataError(
            "train: more than half of all batches had no valid projection "
            "pixels; aborting");
      continue;
    }
    g.backward(lb.node);
    std::vector<std::vector<T>> grads;
    grads.reserve(params.size());
    for (const auto& [name, t] : params) grads.push_back(g.gradient(t->node));
    adam_step(params, grads, adam);
    history.final_iteration = iter;

    if (iter % cfg.eval_every == 0 || iter == cfg.iterations) {
      EvalPoint pt;
      pt.iteration = iter;
      pt.train_total = lb.total;
      pt.train_prediction = lb.prediction;
      pt.train_projection = lb.projection;
      pt.train_epe = detail::split_epe_normalized(model, train_set, train_norm,
                                                  cfg.adjustment);
      double vtotal = 0, vepe = 0, vmae = 0, vraw = 0;
      int64_t vmae_n = 0;
      for (size_t i = 0; i < val_set.size(); ++i) {
        const auto& s = val_set[i];
        Graph<T> vg;
        Tensor<T> vpred = forward(vg, model, s.left, s.right, Mode::Eval);
        try {
          LossBreakdown vlb = total_loss(vg, vpred, val_targets[i], s.left,
                                         s.right, rig, mode, cfg.adjustment,
                                         cfg.loss);
          vtotal += vlb.total;
        } catch (const DegenerateError&) {
          vtotal += std::numeric_limits<double>::quiet_NaN();
        }
        const auto& pv = vpred.values();
        const auto& nv = val_norm[i].values();
        double s_epe = 0;
        for (size_t k = 0; k < pv.size(); ++k)
          s_epe += std::fabs(
              std::pow(std::clamp(static_cast<double>(pv[k]), 0.0, 1.0),
                       1.0 / cfg.adjustment.p) -
              static_cast<double>(nv[k]));
        vepe += s_epe / static_cast<double>(pv.size());

        Tensor<T> raw = prediction_to_raw(vpred, rig, mode, cfg.adjustment);
        vraw += end_point_error(raw.values(), s.gt.values()) *
                epe_report_scale(mode);
        DisparityMap<T> dhat;
        DepthMap<T> zhat;
        if (mode == OutputMode::Depth) {
          zhat = depth_map_from_tensor(raw, DepthState::RawZ);
          dhat = depth_to_disparity(zhat, rig);
        } else {
          dhat = disparity_map_from_tensor(raw);
          zhat = disparity_to_depth(dhat, rig);
        }
        const SynthesizedView<T> view = synthesize_right(s.left, dhat, zhat);
        try {
          vmae += mae_right_view(view.image, s.right, view.holes);
          ++vmae_n;
        } catch (const DegenerateError&) {
          // Every pixel fell out of view; the sample sits out of the MAE
          // mean instead of killing the run.
        }
      }
      const double nv = static_cast<double>(val_set.size());
      pt.val_total = vtotal / nv;
      pt.val_epe = vepe / nv;
      pt.val_epe_report = vraw / nv;
      pt.val_mae = vmae_n ? vmae / static_cast<double>(vmae_n)
                          : std::numeric_limits<double>::quiet_NaN();
      history.points.push_back(pt);

      if (!cfg.checkpoint_path.empty() && pt.val_epe_report < best_val) {
        best_val = pt.val_epe_report;
        save_checkpoint(cfg.checkpoint_path, model, cfg.adjustment, &adam,
                        iter);
      }
      if (cfg.stop_train_epe > 0 && pt.train_epe < cfg.stop_train_epe) break;
    }
  }
  return history;
}

}  // namespace sdepth
