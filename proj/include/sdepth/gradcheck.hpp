#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace sdepth {

// Numeric gradient verification. Always runs in double: single precision
// cannot resolve the 1e-4 acceptance threshold with central differences.
//
// The checked scalar is a randomly weighted sum of the op output, not a plain
// sum; a plain sum is blind to ops that permute or misplace elements.
using CheckedOp =
    std::function<Tensor<double>(Graph<double>&, std::vector<Tensor<double>>&)>;

struct GradCheckReport {
  double max_rel_error = 0;
  int64_t checked = 0;
};

inline GradCheckReport grad_check_report(const CheckedOp& op,
                                         std::vector<Tensor<double>> inputs,
                                         double eps = 1e-5,
                                         uint64_t weight_seed = 0x5eed) {
  for (auto& t : inputs) t.requires_grad = true;

  // Analytic pass.
  Graph<double> g;
  std::vector<Tensor<double>> bound;
  bound.reserve(inputs.size());
  for (const auto& t : inputs) bound.push_back(g.leaf(t));
  Tensor<double> out = op(g, bound);

  Rng wr(weight_seed);
  std::vector<double> weights(out.values().size());
  for (auto& w : weights) w = wr.uniform(-1.0, 1.0);
  Tensor<double> loss = weighted_sum(g, out, weights);
  g.backward(loss.node);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(bound.size());
  for (const auto& t : bound) analytic.push_back(g.gradient(t.node));

  // Weighted forward value with one input element displaced.
  auto probe = [&](size_t which, size_t elem, double delta) {
    std::vector<Tensor<double>> probe_in = inputs;
    probe_in[which].values_mut()[elem] += delta;
    Graph<double> pg;
    std::vector<Tensor<double>> pb;
    pb.reserve(probe_in.size());
    for (auto& t : probe_in) {
      t.requires_grad = false;
      t.graph = 0;
      t.node = -1;
      pb.push_back(pg.leaf(t));
    }
    const Tensor<double> pout = op(pg, pb);
    const auto& pv = pout.values();
    double acc = 0;
    for (size_t i = 0; i < pv.size(); ++i) acc += weights[i] * pv[i];
    return acc;
  };

  GradCheckReport report;
  for (size_t which = 0; which < inputs.size(); ++which) {
    const auto& grad = analytic[which];
    const size_t count = inputs[which].values().size();
    for (size_t elem = 0; elem < count; ++elem) {
      const double a = grad.empty() ? 0.0 : grad[elem];
      const double n =
          (probe(which, elem, eps) - probe(which, elem, -eps)) / (2 * eps);
      const double scale = std::max({1.0, std::fabs(a), std::fabs(n)});
      const double rel = std::fabs(a - n) / scale;
      if (rel > report.max_rel_error) report.max_rel_error = rel;
      ++report.checked;
    }
  }
  return report;
}

// Max relative error between analytic and central-difference gradients over
// every element of every input.
inline double grad_check(const CheckedOp& op,
                         std::vector<Tensor<double>> inputs,
                         double eps = 1e-5) {
  return grad_check_report(op, std::move(inputs), eps).max_rel_error;
}

}  // namespace sdepth
