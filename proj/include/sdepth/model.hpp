#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "geometry.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace sdepth {

// Encoder-decoder layout: stem conv + maxpool down to 1/downscale, parallel
// dilated branches, four single-layer dense blocks, then stepwise 2x
// upsampling that merges pooled left-image features back in, and a 1x1
// sigmoid head.
struct ModelConfig {
  int64_t base_channels = 16;
  int64_t growth = 16;
  std::vector<int> dilation_set{1, 2, 3, 4};
  int64_t downscale = 8;
  double dropout_rate = 0.2;
  int64_t input_channels = 6;  // stacked left+right
  OutputMode output_mode = OutputMode::Depth;

  static constexpr int kDenseBlocks = 4;

  int64_t view_channels() const { return input_channels / 2; }

  int64_t decoder_steps() const {
    int64_t s = 0;
    for (int64_t d = downscale; d > 1; d /= 2) ++s;
    return s;
  }

  void validate() const {
    if (base_channels < 1 || growth < 1)
      throw ConfigError("model: channel counts must be >= 1");
    if (dilation_set.empty())
      throw ConfigError("model: dilation set must not be empty");
    for (const int d : dilation_set)
      if (d < 1) throw ConfigError("model: dilations must be >= 1");
    if (downscale < 2 || (downscale & (downscale - 1)) != 0)
      throw ConfigError("model: downscale must be a power of two >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("model: dropout rate must be in [0,1)");
    if (input_channels < 2 || input_channels % 2 != 0)
      throw ConfigError("model: input channels must be even (two views)");
  }

  std::string dilations_csv() const {
    std::string s;
    for (size_t i = 0; i < dilation_set.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(dilation_set[i]);
    }
    return s;
  }

  void to_kv(KeyValueFile& kv) const {
    kv.set_int("base_channels", base_channels);
    kv.set_int("growth", growth);
    kv.set("dilations", dilations_csv());
    kv.set_int("downscale", downscale);
    kv.set_double("dropout_rate", dropout_rate);
    kv.set_int("input_channels", input_channels);
    kv.set("output_mode", to_string(output_mode));
  }

  static ModelConfig from_kv(const KeyValueFile& kv) {
    ModelConfig cfg;
    cfg.base_channels = kv.get_int("base_channels");
    cfg.growth = kv.get_int("growth");
    cfg.dilation_set.clear();
    std::istringstream ds(kv.get("dilations"));
    std::string item;
    while (std::getline(ds, item, ','))
      cfg.dilation_set.push_back(std::stoi(item));
    cfg.downscale = kv.get_int("downscale");
    cfg.dropout_rate = kv.get_double("dropout_rate");
    cfg.input_channels = kv.get_int("input_channels");
    cfg.output_mode = output_mode_from_string(kv.get("output_mode"));
    cfg.validate();
    return cfg;
  }
};

// Conv3x3 (no bias; batchnorm absorbs the shift) + BN + ReLU.
template <typename T>
struct ConvModule {
  Tensor<T> kernel;
  BatchNormState<T> bn;
  int dilation = 1;
};

template <typename T>
class Model {
 public:
  ModelConfig config;
  ConvModule<T> stem;                   // both views, full resolution
  ConvModule<T> skip;                   // left view, feeds the decoder
  std::vector<ConvModule<T>> branches;  // parallel dilations at 1/downscale
  std::vector<ConvModule<T>> dense;     // growth channels each
  std::vector<ConvModule<T>> decoder;
  Tensor<T> head_kernel;  // (1, base, 1, 1)
  Tensor<T> head_bias;    // (1, 1, 1, 1)

  // Learnable tensors in a fixed, stable order. Checkpoints and the
  // optimizer both rely on this order never changing.
  std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    auto module = [&out](const std::string& name, ConvModule<T>& m) {
      out.emplace_back(name + ".kernel", &m.kernel);
      out.emplace_back(name + ".bn.gamma", &m.bn.gamma);
      out.emplace_back(name + ".bn.beta", &m.bn.beta);
    };
    module("stem", stem);
    module("skip", skip);
    for (size_t i = 0; i < branches.size(); ++i)
      module("branch" + std::to_string(i), branches[i]);
    for (size_t i = 0; i < dense.size(); ++i)
      module("dense" + std::to_string(i), dense[i]);
    for (size_t i = 0; i < decoder.size(); ++i)
      module("decoder" + std::to_string(i), decoder[i]);
    out.emplace_back("head.kernel", &head_kernel);
    out.emplace_back("head.bias", &head_bias);
    return out;
  }

  // Non-learnable state (batchnorm running estimates), checkpointed with
  // the parameters.
  std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    auto module = [&out](const std::string& name, ConvModule<T>& m) {
      out.emplace_back(name + ".bn.running_mean", &m.bn.running_mean);
      out.emplace_back(name + ".bn.running_var", &m.bn.running_var);
    };
    module("stem", stem);
    module("skip", skip);
    for (size_t i = 0; i < branches.size(); ++i)
      module("branch" + std::to_string(i), branches[i]);
    for (size_t i = 0; i < dense.size(); ++i)
      module("dense" + std::to_string(i), dense[i]);
    for (size_t i = 0; i < decoder.size(); ++i)
      module("decoder" + std::to_string(i), decoder[i]);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (const auto& [name, t] : parameters()) n += t->size();
    return n;
  }
};

namespace detail {

template <typename T>
ConvModule<T> make_conv_module(int64_t in, int64_t out, int dilation,
                               uint64_t seed) {
  Tensor<T> k(Shape{out, in, 3, 3});
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
  for (auto& v : k.values_mut())
    v = static_cast<T>(rng.uniform(-bound, bound));
  k.requires_grad = true;
  ConvModule<T> m{std::move(k), BatchNormState<T>(out), dilation};
  m.bn.gamma.requires_grad = true;
  m.bn.beta.requires_grad = true;
  return m;
}

}  // namespace detail

template <typename T>
Model<T> build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config = config;
  const int64_t base = config.base_channels;
  uint64_t salt = 0;
  auto next = [&] { return mix_seed(seed, 0xC0DE, salt++); };

  m.stem = detail::make_conv_module<T>(config.input_channels, base, 1, next());
  m.skip = detail::make_conv_module<T>(config.view_channels(), base, 1, next());
  for (const int d : config.dilation_set)
    m.branches.push_back(detail::make_conv_module<T>(base, base, d, next()));

  int64_t channels = base * static_cast<int64_t>(config.dilation_set.size());
  for (int i = 0; i < ModelConfig::kDenseBlocks; ++i) {
    m.dense.push_back(
        detail::make_conv_module<T>(channels, config.growth, 1, next()));
    channels += config.growth;
  }

  for (int64_t s = 0; s < config.decoder_steps(); ++s) {
    m.decoder.push_back(
        detail::make_conv_module<T>(channels + base, base, 1, next()));
    channels = base;
  }

  m.head_kernel = Tensor<T>(Shape{1, base, 1, 1});
  {
    Rng rng(next());
    const double bound = std::sqrt(6.0 / static_cast<double>(base));
    for (auto& v : m.head_kernel.values_mut())
      v = static_cast<T>(rng.uniform(-bound, bound));
  }
  m.head_kernel.requires_grad = true;
  m.head_bias = Tensor<T>(Shape{1, 1, 1, 1});
  m.head_bias.requires_grad = true;
  return m;
}

namespace detail {

template <typename T>
Tensor<T> apply_module(Graph<T>& g, ConvModule<T>& mod, const Tensor<T>& x,
                       Mode mode, int stride = 1) {
  ConvSpec<T> spec{mod.kernel, std::nullopt, stride, mod.dilation,
                   same_padding(mod.kernel.shape.h, mod.kernel.shape.w,
                                mod.dilation)};
  return relu(g, batchnorm(g, conv2d(g, x, spec), mod.bn, mode));
}

}  // namespace detail

// One dense block: append `growth` new feature channels computed from all
// channels seen so far, with dropout on the new features only.
template <typename T>
Tensor<T> dense_block(Graph<T>& g, ConvModule<T>& mod, const Tensor<T>& x,
                      double rate, Mode mode, uint64_t dropout_seed) {
  Tensor<T> fresh = detail::apply_module(g, mod, x, mode);
  fresh = dropout(g, fresh, rate, mode, dropout_seed);
  return concat(g, {x, fresh});
}

// Full forward pass. Train mode binds parameters into the graph (their
// node ids are then valid for Graph::gradient) and updates batchnorm running
// statistics; eval mode leaves the model untouched.
template <typename T>
Tensor<T> forward(Graph<T>& g, Model<T>& m, const Tensor<T>& left,
                  const Tensor<T>& right, Mode mode,
                  uint64_t dropout_seed = 0) {
  const ModelConfig& cfg = m.config;
  if (!(left.shape == right.shape))
    throw ShapeError("forward: left and right shapes differ");
  if (left.shape.c != cfg.view_channels())
    throw ShapeError("forward: expected " +
                     std::to_string(cfg.view_channels()) +
                     " channels per view, got " + std::to_string(left.shape.c));
  if (left.shape.h % cfg.downscale != 0 || left.shape.w % cfg.downscale != 0 ||
      left.shape.h < cfg.downscale || left.shape.w < cfg.downscale)
    throw ShapeError("forward: extents must be multiples of downscale " +
                     std::to_string(cfg.downscale));

  if (mode == Mode::Train)
    for (auto& [name, t] : m.parameters()) g.bind(*t);

  Tensor<T> x = concat(g, {left, right});
  x = detail::apply_module(g, m.stem, x, mode);
  x = maxpool(g, x, static_cast<int>(cfg.downscale));

  std::vector<Tensor<T>> feats;
  feats.reserve(m.branches.size());
  for (auto& br : m.branches)
    feats.push_back(detail::apply_module(g, br, x, mode));
  x = concat(g, feats);

  for (size_t i = 0; i < m.dense.size(); ++i)
    x = dense_block(g, m.dense[i], x, cfg.dropout_rate, mode,
                    mix_seed(dropout_seed, 0xD801, i));

  Tensor<T> skip_full = detail::apply_module(g, m.skip, left, mode);
  for (int64_t s = 0; s < cfg.decoder_steps(); ++s) {
    x = upsample2x(g, x);
    const int64_t factor = cfg.downscale >> (s + 1);
    Tensor<T> skip_s = factor > 1
                           ? maxpool(g, skip_full, static_cast<int>(factor))
                           : skip_full;
    x = concat(g, {x, skip_s});
    x = detail::apply_module(g, m.decoder[static_cast<size_t>(s)], x, mode);
  }

  ConvSpec<T> head{m.head_kernel, m.head_bias, 1, 1, Padding{}};
  return sigmoid(g, conv2d(g, x, head));
}

}  // namespace sdepth
