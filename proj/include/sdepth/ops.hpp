#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace sdepth {

enum class Mode { Train, Eval };

// Per-side zero padding.
struct Padding {
  int left = 0, right = 0, top = 0, bottom = 0;
};

// Symmetric padding that keeps output extents equal to input extents for
// stride 1 and odd kernels.
inline Padding same_padding(int64_t kh, int64_t kw, int dilation) {
  const int py = static_cast<int>(dilation * (kh - 1) / 2);
  const int px = static_cast<int>(dilation * (kw - 1) / 2);
  return Padding{px, px, py, py};
}

template <typename T>
struct ConvSpec {
  Tensor<T> kernel;                // (out_ch, in_ch, kh, kw)
  std::optional<Tensor<T>> bias;   // (1, out_ch, 1, 1)
  int stride = 1;
  int dilation = 1;
  Padding padding{};
};

// Output extent of one convolution axis; throws if the dilated kernel does
// not fit into the padded input.
inline int64_t conv_out_extent(int64_t in, int64_t k, int pad_total,
                               int stride, int dilation) {
  const int64_t span = static_cast<int64_t>(dilation) * (k - 1) + 1;
  const int64_t free_space = in + pad_total - span;
  if (free_space < 0)
    throw ShapeError("conv: dilated kernel larger than padded input");
  return free_space / stride + 1;
}

namespace detail {

// Loop bounds such that iy = oy*stride + off stays inside [0, extent).
struct AxisRange {
  int64_t lo, hi;  // half-open output range
};

inline AxisRange conv_axis_range(int64_t out, int64_t extent, int64_t off,
                                 int stride) {
  int64_t lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  int64_t hi = out;
  if (off < extent)
    hi = std::min<int64_t>(out, (extent - 1 - off) / stride + 1);
  else
    hi = 0;
  return {std::min(lo, hi), hi};
}

}  // namespace detail

// Dilated 2D convolution: out(p) = sum over kernel taps t of
// in(p*stride + dilation*t - pad) * k(t), plus bias.
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& input, const ConvSpec<T>& spec) {
  const Shape is = input.shape;
  const Shape ks = spec.kernel.shape;
  if (spec.stride < 1) throw ConfigError("conv: stride must be >= 1");
  if (spec.dilation < 1) throw ConfigError("conv: dilation must be >= 1");
  if (ks.c != is.c)
    throw ShapeError("conv: kernel expects " + std::to_string(ks.c) +
                     " input channels, got " + std::to_string(is.c));
  if (spec.bias && !(spec.bias->shape == Shape{1, ks.n, 1, 1}))
    throw ShapeError("conv: bias shape must be (1," + std::to_string(ks.n) +
                     ",1,1)");
  const Padding pad = spec.padding;
  if (pad.left < 0 || pad.right < 0 || pad.top < 0 || pad.bottom < 0)
    throw ConfigError("conv: negative padding");
  const int64_t oh = conv_out_extent(is.h, ks.h, pad.top + pad.bottom,
                                     spec.stride, spec.dilation);
  const int64_t ow = conv_out_extent(is.w, ks.w, pad.left + pad.right,
                                     spec.stride, spec.dilation);
  const Shape os{is.n, ks.n, oh, ow};

  const int ix = g.use(input);
  const int ik = g.use(spec.kernel);
  const int ib = spec.bias ? g.use(*spec.bias) : -1;

  const auto& in = g.saved(ix);
  const auto& kv = g.saved(ik);
  std::vector<T> out(static_cast<size_t>(os.count()), T(0));

  const int stride = spec.stride, dil = spec.dilation;
  const T* inp = in.data();
  const T* kp = kv.data();
  T* op = out.data();

  for (int64_t n = 0; n < is.n; ++n) {
    for (int64_t oc = 0; oc < ks.n; ++oc) {
      T* oplane = op + (n * ks.n + oc) * oh * ow;
      if (ib >= 0) {
        const T b = g.saved(ib)[static_cast<size_t>(oc)];
        std::fill(oplane, oplane + oh * ow, b);
      }
      for (int64_t ic = 0; ic < is.c; ++ic) {
        const T* iplane = inp + (n * is.c + ic) * is.h * is.w;
        const T* krow = kp + (oc * is.c + ic) * ks.h * ks.w;
        for (int64_t ky = 0; ky < ks.h; ++ky) {
          const int64_t yoff = ky * dil - pad.top;
          const auto [oy_lo, oy_hi] =
              detail::conv_axis_range(oh, is.h, yoff, stride);
          for (int64_t kx = 0; kx < ks.w; ++kx) {
            const T w = krow[ky * ks.w + kx];
            if (w == T(0)) continue;
            const int64_t xoff = kx * dil - pad.left;
            const auto [ox_lo, ox_hi] =
                detail::conv_axis_range(ow, is.w, xoff, stride);
            for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
              const T* irow = iplane + (oy * stride + yoff) * is.w + xoff;
              T* orow = oplane + oy * ow;
              if (stride == 1) {
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                  orow[ox] += w * irow[ox];
              } else {
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                  orow[ox] += w * irow[ox * stride];
              }
            }
          }
        }
      }
    }
  }

  std::vector<int> node_inputs{ix, ik};
  if (ib >= 0) node_inputs.push_back(ib);
  return g.record(
      "conv2d", std::move(node_inputs), os, std::move(out),
      [ix, ik, ib, is, ks, os, pad, stride, dil](Graph<T>& g, int self) {
        const auto& go = g.gradient(self);
        const auto& in = g.saved(ix);
        const auto& kv = g.saved(ik);
        auto* gin = g.grad_if(ix);
        auto* gk = g.grad_if(ik);
        auto* gb = ib >= 0 ? g.grad_if(ib) : nullptr;
        const int64_t oh = os.h, ow = os.w;

        if (gb) {
          for (int64_t n = 0; n < is.n; ++n)
            for (int64_t oc = 0; oc < ks.n; ++oc) {
              const T* gplane = go.data() + (n * ks.n + oc) * oh * ow;
              double acc = 0;
              for (int64_t i = 0; i < oh * ow; ++i) acc += gplane[i];
              (*gb)[static_cast<size_t>(oc)] += static_cast<T>(acc);
            }
        }
        if (!gin && !gk) return;

        for (int64_t n = 0; n < is.n; ++n) {
          for (int64_t oc = 0; oc < ks.n; ++oc) {
            const T* gplane = go.data() + (n * ks.n + oc) * oh * ow;
            for (int64_t ic = 0; ic < is.c; ++ic) {
              const T* iplane = in.data() + (n * is.c + ic) * is.h * is.w;
              T* giplane =
                  gin ? gin->data() + (n * is.c + ic) * is.h * is.w : nullptr;
              const int64_t kbase = (oc * is.c + ic) * ks.h * ks.w;
              for (int64_t ky = 0; ky < ks.h; ++ky) {
                const int64_t yoff = ky * dil - pad.top;
                const auto [oy_lo, oy_hi] =
                    detail::conv_axis_range(oh, is.h, yoff, stride);
                for (int64_t kx = 0; kx < ks.w; ++kx) {
                  const int64_t xoff = kx * dil - pad.left;
                  const auto [ox_lo, ox_hi] =
                      detail::conv_axis_range(ow, is.w, xoff, stride);
                  const T w = kv[static_cast<size_t>(kbase + ky * ks.w + kx)];
                  double wacc = 0;
                  for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                    const int64_t ibase = (oy * stride + yoff) * is.w + xoff;
                    const T* grow = gplane + oy * ow;
                    if (gk) {
                      const T* irow = iplane + ibase;
                      if (stride == 1) {
                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                          wacc += static_cast<double>(grow[ox]) * irow[ox];
                      } else {
                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                          wacc +=
                              static_cast<double>(grow[ox]) * irow[ox * stride];
                      }
                    }
                    if (giplane) {
                      T* girow = giplane + ibase;
                      if (stride == 1) {
                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                          girow[ox] += w * grow[ox];
                      } else {
                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                          girow[ox * stride] += w * grow[ox];
                      }
                    }
                  }
                  if (gk)
                    (*gk)[static_cast<size_t>(kbase + ky * ks.w + kx)] +=
                        static_cast<T>(wacc);
                }
              }
            }
          }
        }
      });
}

template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;  // (1, C, 1, 1)
  std::vector<T> running_mean, running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(int64_t channels)
      : gamma(Shape{1, channels, 1, 1},
              std::vector<T>(static_cast<size_t>(channels), T(1))),
        beta(Shape{1, channels, 1, 1}),
        running_mean(static_cast<size_t>(channels), T(0)),
        running_var(static_cast<size_t>(channels), T(1)) {}

  int64_t channels() const { return gamma.shape.c; }

  void validate() const {
    const int64_t c = channels();
    if (!(gamma.shape == Shape{1, c, 1, 1}) ||
        !(beta.shape == Shape{1, c, 1, 1}))
      throw ShapeError("batchnorm: gamma/beta must be (1,C,1,1)");
    if (static_cast<int64_t>(running_mean.size()) != c ||
        static_cast<int64_t>(running_var.size()) != c)
      throw ShapeError("batchnorm: running stats length mismatch");
    if (!(momentum > T(0) && momentum < T(1)))
      throw ConfigError("batchnorm: momentum must be in (0,1)");
    if (!(epsilon > T(0))) throw ConfigError("batchnorm: epsilon must be > 0");
  }
};

// Batch normalization over (N, H, W) per channel. Train mode normalizes by
// batch statistics and folds them into the running estimates; eval mode is a
// pure affine map using the running estimates.
template <typename T>
Tensor<T> batchnorm(Graph<T>& g, const Tensor<T>& x, BatchNormState<T>& state,
                    Mode mode) {
  state.validate();
  const Shape s = x.shape;
  if (s.c != state.channels())
    throw ShapeError("batchnorm: input has " + std::to_string(s.c) +
                     " channels, state expects " +
                     std::to_string(state.channels()));
  const int64_t m = s.n * s.h * s.w;
  const int64_t plane = s.h * s.w;

  const int ix = g.use(x);
  const int igamma = g.use(state.gamma);
  const int ibeta = g.use(state.beta);
  const auto& xv = g.saved(ix);
  const auto& gv = g.saved(igamma);
  const auto& bv = g.saved(ibeta);

  auto mu = std::make_shared<std::vector<double>>(s.c, 0.0);
  auto inv = std::make_shared<std::vector<double>>(s.c, 0.0);

  if (mode == Mode::Train) {
    if (m == 0) throw DataError("batchnorm: empty batch in train mode");
    for (int64_t c = 0; c < s.c; ++c) {
      double sum = 0, sumsq = 0;
      for (int64_t n = 0; n < s.n; ++n) {
        const T* p = xv.data() + (n * s.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mean = sum / m;
      const double var = std::max(0.0, sumsq / m - mean * mean);
      (*mu)[c] = mean;
      (*inv)[c] = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
      const double mom = static_cast<double>(state.momentum);
      state.running_mean[c] =
          static_cast<T>(mom * state.running_mean[c] + (1 - mom) * mean);
      state.running_var[c] =
          static_cast<T>(mom * state.running_var[c] + (1 - mom) * var);
    }
  } else {
    for (int64_t c = 0; c < s.c; ++c) {
      (*mu)[c] = static_cast<double>(state.running_mean[c]);
      (*inv)[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) +
                                  static_cast<double>(state.epsilon));
    }
  }

  std::vector<T> out(xv.size());
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.data() + (n * s.c + c) * plane;
      T* q = out.data() + (n * s.c + c) * plane;
      const double a = static_cast<double>(gv[c]) * (*inv)[c];
      const double b = static_cast<double>(bv[c]) - a * (*mu)[c];
      for (int64_t i = 0; i < plane; ++i)
        q[i] = static_cast<T>(a * p[i] + b);
    }

  const bool train = mode == Mode::Train;
  return g.record(
      "batchnorm", {ix, igamma, ibeta}, s, std::move(out),
      [ix, igamma, ibeta, s, m, plane, mu, inv, train](Graph<T>& g, int self) {
        const auto& go = g.gradient(self);
        const auto& xv = g.saved(ix);
        const auto& gv = g.saved(igamma);
        auto* gx = g.grad_if(ix);
        auto* gg = g.grad_if(igamma);
        auto* gb = g.grad_if(ibeta);
        for (int64_t c = 0; c < s.c; ++c) {
          // Channel sums first, then a second sweep to place gradients.
          double sum_go = 0, sum_go_xhat = 0;
          for (int64_t n = 0; n < s.n; ++n) {
            const T* xp = xv.data() + (n * s.c + c) * plane;
            const T* gp = go.data() + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const double xhat = (xp[i] - (*mu)[c]) * (*inv)[c];
              sum_go += gp[i];
              sum_go_xhat += gp[i] * xhat;
            }
          }
          if (gg) (*gg)[c] += static_cast<T>(sum_go_xhat);
          if (gb) (*gb)[c] += static_cast<T>(sum_go);
          if (!gx) continue;
          const double a = static_cast<double>(gv[c]) * (*inv)[c];
          for (int64_t n = 0; n < s.n; ++n) {
            const T* xp = xv.data() + (n * s.c + c) * plane;
            const T* gp = go.data() + (n * s.c + c) * plane;
            T* op = gx->data() + (n * s.c + c) * plane;
            if (train) {
              // Batch statistics depend on x, so their derivatives appear.
              for (int64_t i = 0; i < plane; ++i) {
                const double xhat = (xp[i] - (*mu)[c]) * (*inv)[c];
                op[i] += static_cast<T>(
                    a * (gp[i] - sum_go / m - xhat * sum_go_xhat / m));
              }
            } else {
              for (int64_t i = 0; i < plane; ++i)
                op[i] += static_cast<T>(a * gp[i]);
            }
          }
        }
      });
}

enum class Activation { Relu, Sigmoid };

template <typename T>
Tensor<T> activation(Graph<T>& g, const Tensor<T>& x, Activation kind) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(xv.size());
  if (kind == Activation::Relu) {
    for (size_t i = 0; i < xv.size(); ++i)
      out[i] = xv[i] > T(0) ? xv[i] : T(0);
    return g.record("relu", {ix}, x.shape, std::move(out),
                    [ix](Graph<T>& g, int self) {
                      if (auto* gi = g.grad_if(ix)) {
                        const auto& go = g.gradient(self);
                        const auto& xv = g.saved(ix);
                        // Subgradient 0 at exactly 0.
                        for (size_t i = 0; i < go.size(); ++i)
                          if (xv[i] > T(0)) (*gi)[i] += go[i];
                      }
                    });
  }
  // Sigmoid, clamped into the open interval so downstream logs and
  // exponent inversions stay finite even in single precision.
  const T eps = std::numeric_limits<T>::epsilon();
  const T lo = eps, hi = T(1) - eps;
  for (size_t i = 0; i < xv.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-xv[i]));
    out[i] = s < lo ? lo : (s > hi ? hi : s);
  }
  return g.record("sigmoid", {ix}, x.shape, std::move(out),
                  [ix](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      const auto& sv = g.saved(self);
                      for (size_t i = 0; i < go.size(); ++i)
                        (*gi)[i] += go[i] * sv[i] * (T(1) - sv[i]);
                    }
                  });
}

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  return activation(g, x, Activation::Relu);
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  return activation(g, x, Activation::Sigmoid);
}

// Max pooling with window == stride == factor. Extents must divide evenly.
// Ties route the gradient to the first maximal element in scan order.
template <typename T>
Tensor<T> maxpool(Graph<T>& g, const Tensor<T>& x, int factor) {
  if (factor < 1) throw ConfigError("maxpool: factor must be >= 1");
  const Shape s = x.shape;
  if (s.h % factor != 0 || s.w % factor != 0)
    throw ShapeError("maxpool: extents " + s.str() + " not divisible by " +
                     std::to_string(factor));
  const Shape os{s.n, s.c, s.h / factor, s.w / factor};
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(static_cast<size_t>(os.count()));
  auto argmax =
      std::make_shared<std::vector<int64_t>>(static_cast<size_t>(os.count()));
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const int64_t ibase = (n * s.c + c) * s.h * s.w;
      const int64_t obase = (n * s.c + c) * os.h * os.w;
      for (int64_t py = 0; py < os.h; ++py)
        for (int64_t px = 0; px < os.w; ++px) {
          T best{};
          int64_t best_at = -1;
          for (int64_t wy = 0; wy < factor; ++wy)
            for (int64_t wx = 0; wx < factor; ++wx) {
              const int64_t at =
                  ibase + (py * factor + wy) * s.w + px * factor + wx;
              if (best_at < 0 || xv[static_cast<size_t>(at)] > best) {
                best = xv[static_cast<size_t>(at)];
                best_at = at;
              }
            }
          out[static_cast<size_t>(obase + py * os.w + px)] = best;
          (*argmax)[static_cast<size_t>(obase + py * os.w + px)] = best_at;
        }
    }
  return g.record("maxpool", {ix}, os, std::move(out),
                  [ix, argmax](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      for (size_t i = 0; i < go.size(); ++i)
                        (*gi)[static_cast<size_t>((*argmax)[i])] += go[i];
                    }
                  });
}

// Nearest-neighbor 2x upsampling.
template <typename T>
Tensor<T> upsample2x(Graph<T>& g, const Tensor<T>& x) {
  const Shape s = x.shape;
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(static_cast<size_t>(os.count()));
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const T* ip = xv.data() + (n * s.c + c) * s.h * s.w;
      T* op = out.data() + (n * s.c + c) * os.h * os.w;
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x2 = 0; x2 < s.w; ++x2) {
          const T v = ip[y * s.w + x2];
          T* o = op + 2 * y * os.w + 2 * x2;
          o[0] = v;
          o[1] = v;
          o[os.w] = v;
          o[os.w + 1] = v;
        }
    }
  return g.record(
      "upsample2x", {ix}, os, std::move(out), [ix, s](Graph<T>& g, int self) {
        if (auto* gi = g.grad_if(ix)) {
          const auto& go = g.gradient(self);
          const int64_t ow = s.w * 2;
          for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c) {
              const T* gp = go.data() + (n * s.c + c) * s.h * 2 * ow;
              T* ip = gi->data() + (n * s.c + c) * s.h * s.w;
              for (int64_t y = 0; y < s.h; ++y)
                for (int64_t x2 = 0; x2 < s.w; ++x2) {
                  const T* src = gp + 2 * y * ow + 2 * x2;
                  ip[y * s.w + x2] += src[0] + src[1] + src[ow] + src[ow + 1];
                }
            }
        }
      });
}

// Concatenation along channels. All parts must agree on (N, H, W).
template <typename T>
Tensor<T> concat(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape first = parts[0].shape;
  int64_t channels = 0;
  for (const auto& p : parts) {
    if (p.shape.n != first.n || p.shape.h != first.h || p.shape.w != first.w)
      throw ShapeError("concat: spatial/batch mismatch " + first.str() +
                       " vs " + p.shape.str());
    channels += p.shape.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) ids.push_back(g.use(p));

  const int64_t plane = first.h * first.w;
  std::vector<T> out(static_cast<size_t>(os.count()));
  auto sizes = std::make_shared<std::vector<int64_t>>();
  for (const auto& p : parts) sizes->push_back(p.shape.c);
  for (int64_t n = 0; n < os.n; ++n) {
    int64_t coff = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const int64_t pc = (*sizes)[pi];
      const auto& pv = g.saved(ids[pi]);
      std::memcpy(out.data() + (n * channels + coff) * plane,
                  pv.data() + n * pc * plane,
                  static_cast<size_t>(pc * plane) * sizeof(T));
      coff += pc;
    }
  }
  auto idsp = std::make_shared<std::vector<int>>(ids);
  return g.record(
      "concat", std::move(ids), os, std::move(out),
      [idsp, sizes, os, plane](Graph<T>& g, int self) {
        const auto& go = g.gradient(self);
        for (int64_t n = 0; n < os.n; ++n) {
          int64_t coff = 0;
          for (size_t pi = 0; pi < idsp->size(); ++pi) {
            const int64_t pc = (*sizes)[pi];
            if (auto* gi = g.grad_if((*idsp)[pi])) {
              const T* src = go.data() + (n * os.c + coff) * plane;
              T* dst = gi->data() + n * pc * plane;
              for (int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
            }
            coff += pc;
          }
        }
      });
}

// Inverted dropout: kept activations are scaled by 1/(1-rate) in train mode
// so eval needs no rescaling. Eval mode and rate 0 are exact identities.
template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double rate, Mode mode,
                  uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout: rate must be in [0,1)");
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  if (mode == Mode::Eval || rate == 0.0) {
    std::vector<T> out(xv);
    return g.record("dropout", {ix}, x.shape, std::move(out),
                    [ix](Graph<T>& g, int self) {
                      if (auto* gi = g.grad_if(ix)) {
                        const auto& go = g.gradient(self);
                        for (size_t i = 0; i < go.size(); ++i)
                          (*gi)[i] += go[i];
                      }
                    });
  }
  Rng rng(seed);
  auto mask = std::make_shared<std::vector<uint8_t>>(xv.size());
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    const bool keep = rng.uniform() >= rate;
    (*mask)[i] = keep;
    out[i] = keep ? xv[i] * scale : T(0);
  }
  return g.record("dropout", {ix}, x.shape, std::move(out),
                  [ix, mask, scale](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      for (size_t i = 0; i < go.size(); ++i)
                        if ((*mask)[i]) (*gi)[i] += go[i] * scale;
                    }
                  });
}

}  // namespace sdepth
