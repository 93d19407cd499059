#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "gradcheck.hpp"
#include "loss.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace sdepth {

// Numeric-vs-analytic verification across every differentiable operation,
// ending with the full loss chain in both output modes. Each entry runs a
// handful of independently seeded instances and keeps the worst relative
// error, so one call answers "do all gradients hold" for a build.

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0;
  int64_t checked = 0;  // perturbed input elements across all seeds
};

namespace detail {

inline Tensor<double> rand_tensor(Rng& rng, const Shape& s, double lo,
                                  double hi) {
  std::vector<double> v(static_cast<size_t>(s.count()));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(s, std::move(v));
}

// Uniform values that keep a safety margin around the listed kinks, so the
// central difference never straddles a non-smooth point.
inline Tensor<double> rand_away_from(Rng& rng, const Shape& s, double lo,
                                     double hi,
                                     const std::vector<double>& kinks,
                                     double margin) {
  std::vector<double> v(static_cast<size_t>(s.count()));
  for (auto& x : v) {
    for (;;) {
      x = rng.uniform(lo, hi);
      bool clear = true;
      for (const double k : kinks)
        if (x > k - margin && x < k + margin) clear = false;
      if (clear) break;
    }
  }
  return Tensor<double>(s, std::move(v));
}

}  // namespace detail

inline std::vector<GradSuiteEntry> gradient_suite(uint64_t base_seed = 1,
                                                  int seeds = 5) {
  std::vector<GradSuiteEntry> out;
  uint64_t index = 0;

  auto run = [&](const std::string& name, auto&& factory) {
    GradSuiteEntry entry{name, 0.0, 0};
    for (int s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(base_seed, index, static_cast<uint64_t>(s)));
      auto [op, inputs] = factory(rng);
      const GradCheckReport rep = grad_check_report(
          op, std::move(inputs), 1e-5,
          mix_seed(base_seed, index, static_cast<uint64_t>(s) + 0x77));
      if (rep.max_rel_error > entry.max_rel_error)
        entry.max_rel_error = rep.max_rel_error;
      entry.checked += rep.checked;
    }
    out.push_back(std::move(entry));
    ++index;
  };

  using In = std::vector<Tensor<double>>;
  const Shape small{1, 2, 3, 4};

  run("add", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1),
          detail::rand_tensor(r, small, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) { return add(g, i[0], i[1]); };
    return std::pair{op, in};
  });
  run("sub", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1),
          detail::rand_tensor(r, small, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) { return sub(g, i[0], i[1]); };
    return std::pair{op, in};
  });
  run("mul", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1),
          detail::rand_tensor(r, small, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) { return mul(g, i[0], i[1]); };
    return std::pair{op, in};
  });
  run("scale_shift", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) {
      return scale_shift(g, i[0], 1.7, -0.3);
    };
    return std::pair{op, in};
  });
  run("pow_scalar", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, 0.2, 1.2)};
    CheckedOp op = [](Graph<double>& g, In& i) {
      return pow_scalar(g, i[0], 1.5);
    };
    return std::pair{op, in};
  });
  run("reciprocal_scale", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, 0.5, 1.5)};
    CheckedOp op = [](Graph<double>& g, In& i) {
      return reciprocal_scale(g, i[0], 2.5);
    };
    return std::pair{op, in};
  });
  run("clamp", [&](Rng& r) {
    In in{detail::rand_away_from(r, small, -1, 1, {-0.5, 0.5}, 2e-2)};
    CheckedOp op = [](Graph<double>& g, In& i) {
      return clamp(g, i[0], -0.5, 0.5);
    };
    return std::pair{op, in};
  });
  run("relu", [&](Rng& r) {
    In in{detail::rand_away_from(r, small, -1, 1, {0.0}, 2e-2)};
    CheckedOp op = [](Graph<double>& g, In& i) { return relu(g, i[0]); };
    return std::pair{op, in};
  });
  run("sigmoid", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -3, 3)};
    CheckedOp op = [](Graph<double>& g, In& i) { return sigmoid(g, i[0]); };
    return std::pair{op, in};
  });
  run("sum", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) { return sum(g, i[0]); };
    return std::pair{op, in};
  });
  run("mean", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) { return mean(g, i[0]); };
    return std::pair{op, in};
  });
  run("weighted_sum", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1)};
    std::vector<double> w(in[0].values().size());
    for (auto& x : w) x = r.uniform(-2, 2);
    CheckedOp op = [w](Graph<double>& g, In& i) {
      return weighted_sum(g, i[0], w);
    };
    return std::pair{op, in};
  });
  run("masked_mean", [&](Rng& r) {
    In in{detail::rand_tensor(r, small, -1, 1)};
    std::vector<uint8_t> mask(in[0].values().size());
    int64_t kept = 0;
    for (auto& m : mask) kept += (m = r.uniform() < 0.6 ? 1 : 0);
    if (kept == 0) {
      mask[0] = 1;
      kept = 1;
    }
    CheckedOp op = [mask, kept](Graph<double>& g, In& i) {
      return masked_mean(g, i[0], mask, kept);
    };
    return std::pair{op, in};
  });

  auto conv_case = [&](const Shape& in_shape, int64_t out_ch, int stride,
                       int dilation, Padding pad, bool with_bias) {
    return [=](Rng& r) {
      In in{detail::rand_tensor(r, in_shape, -1, 1),
            detail::rand_tensor(r, Shape{out_ch, in_shape.c, 3, 3}, -0.7, 0.7)};
      if (with_bias)
        in.push_back(detail::rand_tensor(r, Shape{1, out_ch, 1, 1}, -0.5, 0.5));
      CheckedOp op = [stride, dilation, pad, with_bias](Graph<double>& g,
                                                        In& i) {
        ConvSpec<double> spec;
        spec.kernel = i[1];
        if (with_bias) spec.bias = i[2];
        spec.stride = stride;
        spec.dilation = dilation;
        spec.padding = pad;
        return conv2d(g, i[0], spec);
      };
      return std::pair{op, in};
    };
  };
  run("conv2d", conv_case(Shape{2, 2, 6, 7}, 3, 1, 1, same_padding(3, 3, 1),
                          true));
  run("conv2d_dilation2", conv_case(Shape{1, 2, 10, 10}, 2, 1, 2,
                                    same_padding(3, 3, 2), false));
  run("conv2d_dilation4", conv_case(Shape{1, 1, 12, 12}, 2, 1, 4,
                                    same_padding(3, 3, 4), false));
  run("conv2d_stride2", conv_case(Shape{1, 2, 9, 9}, 2, 2, 1,
                                  Padding{1, 1, 1, 1}, true));

  auto bn_case = [&](Mode mode) {
    return [mode](Rng& r) {
      In in{detail::rand_tensor(r, Shape{2, 3, 4, 4}, -1, 1),
            detail::rand_tensor(r, Shape{1, 3, 1, 1}, 0.5, 1.5),
            detail::rand_tensor(r, Shape{1, 3, 1, 1}, -0.5, 0.5)};
      CheckedOp op = [mode](Graph<double>& g, In& i) {
        BatchNormState<double> st(3);
        st.gamma = i[1];
        st.beta = i[2];
        st.running_mean = {0.2, -0.3, 0.1};
        st.running_var = {1.5, 0.8, 1.1};
        return batchnorm(g, i[0], st, mode);
      };
      return std::pair{op, in};
    };
  };
  run("batchnorm_train", bn_case(Mode::Train));
  run("batchnorm_eval", bn_case(Mode::Eval));

  run("maxpool", [&](Rng& r) {
    // Hash-spread values with an index tiebreak: every pair of elements
    // stays farther apart than the finite-difference step, so the max is
    // never contested during probing.
    const Shape s{1, 2, 6, 6};
    std::vector<double> v(static_cast<size_t>(s.count()));
    const double shift = r.uniform(-0.5, 0.5);
    for (size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<double>((i * 2654435761u) % 997) * 0.002 +
             static_cast<double>(i) * 2.5e-5 - 1.0 + shift;
    In in{Tensor<double>(s, std::move(v))};
    CheckedOp op = [](Graph<double>& g, In& i) { return maxpool(g, i[0], 2); };
    return std::pair{op, in};
  });
  run("upsample2x", [&](Rng& r) {
    In in{detail::rand_tensor(r, Shape{1, 2, 3, 4}, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) { return upsample2x(g, i[0]); };
    return std::pair{op, in};
  });
  run("concat", [&](Rng& r) {
    In in{detail::rand_tensor(r, Shape{1, 2, 3, 3}, -1, 1),
          detail::rand_tensor(r, Shape{1, 1, 3, 3}, -1, 1),
          detail::rand_tensor(r, Shape{1, 3, 3, 3}, -1, 1)};
    CheckedOp op = [](Graph<double>& g, In& i) {
      return concat(g, {i[0], i[1], i[2]});
    };
    return std::pair{op, in};
  });
  run("dropout_train", [&](Rng& r) {
    In in{detail::rand_tensor(r, Shape{1, 2, 4, 4}, -1, 1)};
    const uint64_t mask_seed = r.bits();
    CheckedOp op = [mask_seed](Graph<double>& g, In& i) {
      return dropout(g, i[0], 0.3, Mode::Train, mask_seed);
    };
    return std::pair{op, in};
  });
  run("reconstruct_left", [&](Rng& r) {
    const Shape img{1, 2, 3, 8};
    In in{detail::rand_tensor(r, img, 0, 1), Tensor<double>(Shape{1, 1, 3, 8})};
    auto& dv = in[1].values_mut();
    const double jitter = r.uniform(0.0, 0.02);
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t i = 0; i < 8; ++i)
        dv[static_cast<size_t>(j * 8 + i)] =
            0.3 + 0.05 * static_cast<double>((i + j) % 5) + jitter;
    CheckedOp op = [](Graph<double>& g, In& i) {
      return reconstruct_left(g, i[0], i[1]);
    };
    return std::pair{op, in};
  });

  auto loss_case = [&](OutputMode mode, double lo, double hi) {
    return [=](Rng& r) {
      const CameraRig rig{16.0, 0.25, 1.0, 16.0};  // d_max = 4
      const Shape img{1, 2, 4, 6};
      const Tensor<double> left = detail::rand_tensor(r, img, 0, 1);
      const Tensor<double> right = detail::rand_tensor(r, img, 0, 1);
      const Tensor<double> target =
          detail::rand_tensor(r, Shape{1, 1, 4, 6}, 0.1, 0.9);
      In in{detail::rand_tensor(r, Shape{1, 1, 4, 6}, lo, hi)};
      CheckedOp op = [=](Graph<double>& g, In& i) {
        const LossBreakdown b =
            total_loss(g, i[0], target, left, right, rig, mode,
                       AdjustmentParams{1.5}, LossConfig{});
        Tensor<double> total(Shape{1, 1, 1, 1}, {b.total});
        total.graph = g.id();
        total.node = b.node;
        return total;
      };
      return std::pair{op, in};
    };
  };
  run("loss_chain_depth", loss_case(OutputMode::Depth, 0.3, 0.6));
  run("loss_chain_disparity", loss_case(OutputMode::Disparity, 0.1, 0.65));

  return out;
}

}  // namespace sdepth
