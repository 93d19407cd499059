#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace sdepth {

// NCHW extents. Rank is fixed at four; lower-rank data uses extent 1.
struct Shape {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t count() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline void check_shape(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
    throw ShapeError("negative extent in shape " + s.str());
}

// Dense NCHW array, row-major with width fastest. The value buffer is shared
// copy-on-write: graph nodes keep forward activations alive without copies,
// and snapshots of parameters stay cheap. A tensor is immutable through the
// const interface, so completed tensors are safe for concurrent reads.
template <typename T>
class Tensor {
 public:
  Shape shape{};
  bool requires_grad = false;
  // Graph handle: which recording this tensor is a node of (0 = detached).
  uint64_t graph = 0;
  int node = -1;

  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(const Shape& s) : shape(s) {
    check_shape(s);
    data_ = std::make_shared<std::vector<T>>(
        static_cast<size_t>(s.count()), T(0));
  }

  Tensor(const Shape& s, std::vector<T> values) : shape(s) {
    check_shape(s);
    if (static_cast<int64_t>(values.size()) != s.count())
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + s.str());
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  const std::vector<T>& values() const { return *data_; }

  // Mutable access; unshares the buffer first so other holders are unchanged.
  std::vector<T>& values_mut() {
    if (data_.use_count() > 1)
      data_ = std::make_shared<std::vector<T>>(*data_);
    return *data_;
  }

  int64_t size() const { return static_cast<int64_t>(data_->size()); }

  int64_t index(int64_t in, int64_t ic, int64_t iy, int64_t ix) const {
    return ((in * shape.c + ic) * shape.h + iy) * shape.w + ix;
  }

  T at(int64_t in, int64_t ic, int64_t iy, int64_t ix) const {
    return (*data_)[static_cast<size_t>(index(in, ic, iy, ix))];
  }

  std::shared_ptr<const std::vector<T>> share() const { return data_; }

 private:
  std::shared_ptr<std::vector<T>> data_;

  template <typename U>
  friend class Graph;
};

// Reverse-mode tape. Nodes are appended in execution order, so the tape is
// already topologically sorted; backward() walks it in reverse and sums
// gradient contributions over every path. One graph per training step; the
// tape is append-only and never rewritten, so replaying backward() is
// deterministic. A graph must not be shared across threads while recording.
template <typename T>
class Graph {
 public:
  // Accumulates d(loss)/d(inputs) given d(loss)/d(self) in grad(self).
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() : id_(next_id()) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  uint64_t id() const { return id_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Records t as a leaf and returns a copy bound to this graph.
  Tensor<T> leaf(const Tensor<T>& t) {
    Tensor<T> out = t;
    out.graph = id_;
    out.node = add_node("leaf", {}, t.shape, t.data_, t.requires_grad, nullptr);
    return out;
  }

  // Node id of t in this graph; detached tensors are recorded as leaves.
  int use(const Tensor<T>& t) {
    if (t.graph == id_) {
      if (t.node < 0 || t.node >= node_count())
        throw ContractError("tensor carries an invalid node id");
      return t.node;
    }
    return leaf(t).node;
  }

  // Rebinds t as a leaf of this graph in place so that t.node stays valid
  // for gradient() lookups after backward(). No-op when already bound.
  void bind(Tensor<T>& t) {
    if (t.graph == id_ && t.node >= 0 && t.node < node_count()) return;
    t = leaf(t);
  }

  // Records an op node and wraps its output values. A null backward marks
  // the op as non-differentiable; backward() refuses to cross it.
  Tensor<T> record(const char* tag, std::vector<int> inputs,
                   const Shape& shape, std::vector<T> values,
                   BackwardFn backward) {
    Tensor<T> out(shape, std::move(values));
    bool needs = false;
    for (int id : inputs) needs = needs || nodes_[check_id(id)].needs_grad;
    out.graph = id_;
    out.node = add_node(tag, std::move(inputs), shape, out.data_, needs,
                        std::move(backward));
    return out;
  }

  const std::vector<T>& saved(int id) const {
    return *nodes_[check_id(id)].values;
  }
  const Shape& shape_of(int id) const { return nodes_[check_id(id)].shape; }
  bool needs_grad(int id) const { return nodes_[check_id(id)].needs_grad; }
  const char* tag_of(int id) const { return nodes_[check_id(id)].tag; }

  // Gradient of the last backward() loss w.r.t. node id. Empty for nodes the
  // loss does not depend on (or that do not require gradients).
  const std::vector<T>& gradient(int id) const {
    check_id(id);
    if (grads_.size() != nodes_.size())
      throw ContractError("gradient queried before backward()");
    return grads_[id];
  }

  // Accumulator for backward rules; null when id receives no gradient.
  std::vector<T>* grad_if(int id) {
    check_id(id);
    return grads_[id].empty() ? nullptr : &grads_[id];
  }

  void backward(int loss) {
    check_id(loss);
    if (!(nodes_[loss].shape == Shape{1, 1, 1, 1}))
      throw ContractError("backward requires a scalar loss, got shape " +
                          nodes_[loss].shape.str());
    grads_.assign(nodes_.size(), {});
    std::vector<char> live(nodes_.size(), 0);
    live[loss] = 1;
    for (int id = loss; id >= 0; --id) {
      const Node& nd = nodes_[id];
      if (!live[id] || !nd.needs_grad) continue;
      if (!nd.inputs.empty() && !nd.backward)
        throw UnsupportedOpError(std::string("op '") + nd.tag +
                                 "' has no backward rule");
      for (int in : nd.inputs)
        if (nodes_[in].needs_grad) live[in] = 1;
    }
    for (int id = 0; id <= loss; ++id)
      if (live[id] && nodes_[id].needs_grad)
        grads_[id].assign(static_cast<size_t>(nodes_[id].shape.count()), T(0));
    grads_[loss].assign(1, T(1));
    for (int id = loss; id >= 0; --id) {
      const Node& nd = nodes_[id];
      if (!live[id] || !nd.needs_grad || !nd.backward) continue;
      nd.backward(*this, id);
    }
  }

  // Drops the tape, all saved activations, and all gradients.
  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  struct Node {
    const char* tag;
    std::vector<int> inputs;
    Shape shape;
    std::shared_ptr<const std::vector<T>> values;
    bool needs_grad;
    BackwardFn backward;
  };

  int add_node(const char* tag, std::vector<int> inputs, const Shape& shape,
               std::shared_ptr<const std::vector<T>> values, bool needs_grad,
               BackwardFn backward) {
    nodes_.push_back(Node{tag, std::move(inputs), shape, std::move(values),
                          needs_grad, std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int check_id(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ContractError("invalid node id " + std::to_string(id));
    return id;
  }

  static uint64_t next_id() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

// ---- elementwise and reduction ops ----------------------------------------

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape == b.shape))
    throw ShapeError("add: shape mismatch " + a.shape.str() + " vs " +
                     b.shape.str());
  const int ia = g.use(a), ib = g.use(b);
  const auto& av = g.saved(ia);
  const auto& bv = g.saved(ib);
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return g.record("add", {ia, ib}, a.shape, std::move(out),
                  [ia, ib](Graph<T>& g, int self) {
                    const auto& go = g.gradient(self);
                    for (int in : {ia, ib})
                      if (auto* gi = g.grad_if(in))
                        for (size_t i = 0; i < go.size(); ++i)
                          (*gi)[i] += go[i];
                  });
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape == b.shape))
    throw ShapeError("sub: shape mismatch " + a.shape.str() + " vs " +
                     b.shape.str());
  const int ia = g.use(a), ib = g.use(b);
  const auto& av = g.saved(ia);
  const auto& bv = g.saved(ib);
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return g.record("sub", {ia, ib}, a.shape, std::move(out),
                  [ia, ib](Graph<T>& g, int self) {
                    const auto& go = g.gradient(self);
                    if (auto* ga = g.grad_if(ia))
                      for (size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
                    if (auto* gb = g.grad_if(ib))
                      for (size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
                  });
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape == b.shape))
    throw ShapeError("mul: shape mismatch " + a.shape.str() + " vs " +
                     b.shape.str());
  const int ia = g.use(a), ib = g.use(b);
  const auto& av = g.saved(ia);
  const auto& bv = g.saved(ib);
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.record("mul", {ia, ib}, a.shape, std::move(out),
                  [ia, ib](Graph<T>& g, int self) {
                    const auto& go = g.gradient(self);
                    const auto& av = g.saved(ia);
                    const auto& bv = g.saved(ib);
                    if (auto* ga = g.grad_if(ia))
                      for (size_t i = 0; i < go.size(); ++i)
                        (*ga)[i] += go[i] * bv[i];
                    if (auto* gb = g.grad_if(ib))
                      for (size_t i = 0; i < go.size(); ++i)
                        (*gb)[i] += go[i] * av[i];
                  });
}

// a*x + b, scalars.
template <typename T>
Tensor<T> scale_shift(Graph<T>& g, const Tensor<T>& x, T a, T b) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b;
  return g.record("scale_shift", {ix}, x.shape, std::move(out),
                  [ix, a](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      for (size_t i = 0; i < go.size(); ++i)
                        (*gi)[i] += a * go[i];
                    }
                  });
}

// x^e with e >= 0, for non-negative inputs (normalized depth chains).
template <typename T>
Tensor<T> pow_scalar(Graph<T>& g, const Tensor<T>& x, T e) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (xv[i] < T(0))
      throw ContractError("pow_scalar: negative base");
    out[i] = std::pow(xv[i], e);
  }
  return g.record("pow_scalar", {ix}, x.shape, std::move(out),
                  [ix, e](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      const auto& xv = g.saved(ix);
                      for (size_t i = 0; i < go.size(); ++i) {
                        // At zero the one-sided derivative is kept finite.
                        const T d = xv[i] > T(0)
                                        ? e * std::pow(xv[i], e - T(1))
                                        : (e == T(1) ? T(1) : T(0));
                        (*gi)[i] += go[i] * d;
                      }
                    }
                  });
}

// c / x for strictly positive inputs (depth-to-disparity).
template <typename T>
Tensor<T> reciprocal_scale(Graph<T>& g, const Tensor<T>& x, T c) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (!(xv[i] > T(0)))
      throw ContractError("reciprocal_scale: input must be positive");
    out[i] = c / xv[i];
  }
  return g.record("reciprocal_scale", {ix}, x.shape, std::move(out),
                  [ix, c](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      const auto& xv = g.saved(ix);
                      for (size_t i = 0; i < go.size(); ++i)
                        (*gi)[i] -= go[i] * c / (xv[i] * xv[i]);
                    }
                  });
}

// Clamp to [lo, hi]; zero derivative outside.
template <typename T>
Tensor<T> clamp(Graph<T>& g, const Tensor<T>& x, T lo, T hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lo > hi");
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] < lo ? lo : (xv[i] > hi ? hi : xv[i]);
  return g.record("clamp", {ix}, x.shape, std::move(out),
                  [ix, lo, hi](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const auto& go = g.gradient(self);
                      const auto& xv = g.saved(ix);
                      for (size_t i = 0; i < go.size(); ++i)
                        if (xv[i] >= lo && xv[i] <= hi) (*gi)[i] += go[i];
                    }
                  });
}

// Reductions accumulate in double regardless of T.

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  double acc = 0;
  for (const T v : xv) acc += static_cast<double>(v);
  return g.record("sum", {ix}, Shape{1, 1, 1, 1}, {static_cast<T>(acc)},
                  [ix](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const T go = g.gradient(self)[0];
                      for (auto& v : *gi) v += go;
                    }
                  });
}

template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  if (xv.empty()) throw ShapeError("mean: empty tensor");
  double acc = 0;
  for (const T v : xv) acc += static_cast<double>(v);
  const double n = static_cast<double>(xv.size());
  return g.record("mean", {ix}, Shape{1, 1, 1, 1}, {static_cast<T>(acc / n)},
                  [ix, n](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const T go = static_cast<T>(
                          static_cast<double>(g.gradient(self)[0]) / n);
                      for (auto& v : *gi) v += go;
                    }
                  });
}

// sum_i w_i * x_i. Weighting makes positional mix-ups visible to gradient
// checks where a plain sum would hide them.
template <typename T>
Tensor<T> weighted_sum(Graph<T>& g, const Tensor<T>& x,
                       std::vector<T> weights) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  if (weights.size() != xv.size())
    throw ShapeError("weighted_sum: weight count mismatch");
  double acc = 0;
  for (size_t i = 0; i < xv.size(); ++i)
    acc += static_cast<double>(weights[i]) * static_cast<double>(xv[i]);
  auto w = std::make_shared<std::vector<T>>(std::move(weights));
  return g.record("weighted_sum", {ix}, Shape{1, 1, 1, 1},
                  {static_cast<T>(acc)}, [ix, w](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const T go = g.gradient(self)[0];
                      for (size_t i = 0; i < gi->size(); ++i)
                        (*gi)[i] += go * (*w)[i];
                    }
                  });
}

// sum of x over mask-true elements, divided by a caller-supplied denominator
// that is treated as a constant (no gradient flows into the count).
template <typename T>
Tensor<T> masked_mean(Graph<T>& g, const Tensor<T>& x,
                      std::vector<uint8_t> mask, int64_t denom) {
  const int ix = g.use(x);
  const auto& xv = g.saved(ix);
  if (mask.size() != xv.size())
    throw ShapeError("masked_mean: mask length mismatch");
  if (denom <= 0) throw DegenerateError("masked_mean: empty denominator");
  double acc = 0;
  for (size_t i = 0; i < xv.size(); ++i)
    if (mask[i]) acc += static_cast<double>(xv[i]);
  const double n = static_cast<double>(denom);
  auto m = std::make_shared<std::vector<uint8_t>>(std::move(mask));
  return g.record("masked_mean", {ix}, Shape{1, 1, 1, 1},
                  {static_cast<T>(acc / n)}, [ix, m, n](Graph<T>& g, int self) {
                    if (auto* gi = g.grad_if(ix)) {
                      const T go = static_cast<T>(
                          static_cast<double>(g.gradient(self)[0]) / n);
                      for (size_t i = 0; i < gi->size(); ++i)
                        if ((*m)[i]) (*gi)[i] += go;
                    }
                  });
}

}  // namespace sdepth
