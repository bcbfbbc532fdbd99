#pragma once

// Tape-based reverse-mode differentiation over whole tensors. Only the
// operations needed by the flow objective are provided.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "inflow/layers.hpp"
#include "inflow/tensor.hpp"

namespace inflow {

struct Var {
  std::size_t id;
};

template <std::floating_point T>
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  Var leaf(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, false, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Records an operation result. The backprop callback is dropped when no
  /// input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backprop backprop) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backprop) : nullptr});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() root with respect to v (zeros when v was not reached).
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }

  /// Adds g into the gradient slot of v.
  void accumulate(Var v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (g.size() != n.value.size()) throw DimensionError("gradient does not match value shape");
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape(), std::vector<T>(g.data().begin(), g.data().end()));
      n.has_grad = true;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  /// Reverse accumulation from a scalar root. Each node's callback runs at most once.
  void backward(Var root) {
    Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
      throw ContractError("backward() needs a scalar root, got shape " + shape_string(r.value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    r.grad = Tensor<T>(r.value.shape(), T{1});
    r.has_grad = true;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backprop) n.backprop(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    bool has_grad;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
};

namespace ad {

/// x [N, n], weight [m, n], bias [m] -> [N, m]
template <std::floating_point T>
Var dense(Tape<T>& tape, Var x, Var weight, Var bias) {
  auto y = dense_forward_batch(tape.value(weight), tape.value(bias), tape.value(x));
  return tape.record(std::move(y), {x, weight, bias}, [x, weight, bias](Tape<T>& t, std::size_t self) {
    auto g = dense_backward(t.value(weight), t.value(x), t.upstream(self));
    t.accumulate(weight, g.weight);
    t.accumulate(bias, g.bias);
    t.accumulate(x, g.input);
  });
}

/// x [N, C, H, W]
template <std::floating_point T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, Var bias, Conv2dGeometry geo) {
  auto y = conv2d_forward(tape.value(kernel), tape.value(bias), tape.value(x), geo);
  return tape.record(std::move(y), {x, kernel, bias}, [x, kernel, bias, geo](Tape<T>& t, std::size_t self) {
    auto g = conv2d_backward(t.value(kernel), t.value(x), t.upstream(self), geo);
    t.accumulate(kernel, g.kernel);
    t.accumulate(bias, g.bias);
    t.accumulate(x, g.input);
  });
}

template <std::floating_point T>
Var relu(Tape<T>& tape, Var x) {
  return tape.record(inflow::relu(tape.value(x)), {x}, [x](Tape<T>& t, std::size_t self) {
    t.accumulate(x, relu_backward(t.value(x), t.upstream(self)));
  });
}

template <std::floating_point T>
Var exp(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (T& v : y.data()) v = std::exp(v);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, std::size_t self) {
    Tensor<T> g = t.upstream(self);
    const Tensor<T>& y = t.value(Var{self});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i];
    t.accumulate(x, g);
  });
}

template <std::floating_point T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (va.size() != vb.size()) throw DimensionError("add: size mismatch");
  Tensor<T> y = va;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += vb[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.upstream(self));
    t.accumulate(b, t.upstream(self));
  });
}

/// Elementwise product.
template <std::floating_point T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (va.size() != vb.size()) throw DimensionError("mul: size mismatch");
  Tensor<T> y = va;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= vb[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    Tensor<T> ga = t.value(b), gb = t.value(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= g[i];
      gb[i] *= g[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

template <std::floating_point T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  return tape.record(tape.value(x).reshaped(std::move(shape)), {x}, [x](Tape<T>& t, std::size_t self) {
    t.accumulate(x, t.upstream(self));
  });
}

/// Columns [begin, end) of a rank-2 tensor.
template <std::floating_point T>
Var columns(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const auto& v = tape.value(x);
  if (v.rank() != 2 || begin > end || end > v.dim(1)) throw DimensionError("columns: bad range");
  const std::size_t n = v.dim(0), width = end - begin;
  Tensor<T> y({n, width});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < width; ++c) y(r, c) = v(r, begin + c);
  return tape.record(std::move(y), {x}, [x, begin, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    Tensor<T> gx(t.value(x).shape());
    for (std::size_t r = 0; r < g.dim(0); ++r)
      for (std::size_t c = 0; c < width; ++c) gx(r, begin + c) = g(r, c);
    t.accumulate(x, gx);
  });
}

/// [N, a] ++ [N, b] -> [N, a + b]
template <std::floating_point T>
Var concat_columns(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(0) != vb.dim(0)) throw DimensionError("concat: row mismatch");
  const std::size_t n = va.dim(0), wa = va.dim(1), wb = vb.dim(1);
  Tensor<T> y({n, wa + wb});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < wa; ++c) y(r, c) = va(r, c);
    for (std::size_t c = 0; c < wb; ++c) y(r, wa + c) = vb(r, c);
  }
  return tape.record(std::move(y), {a, b}, [a, b, wa, wb](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const std::size_t n = g.dim(0);
    Tensor<T> ga({n, wa}), gb({n, wb});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < wa; ++c) ga(r, c) = g(r, c);
      for (std::size_t c = 0; c < wb; ++c) gb(r, c) = g(r, wa + c);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

/// out(r, i) = x(r, perm[i])
template <std::floating_point T>
Var permute_columns(Tape<T>& tape, Var x, std::vector<std::size_t> perm) {
  const auto& v = tape.value(x);
  if (v.rank() != 2 || perm.size() != v.dim(1)) throw DimensionError("permute: width mismatch");
  Tensor<T> y(v.shape());
  for (std::size_t r = 0; r < v.dim(0); ++r)
    for (std::size_t i = 0; i < perm.size(); ++i) y(r, i) = v(r, perm[i]);
  return tape.record(std::move(y), {x}, [x, perm = std::move(perm)](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    Tensor<T> gx(g.shape());
    for (std::size_t r = 0; r < g.dim(0); ++r)
      for (std::size_t i = 0; i < perm.size(); ++i) gx(r, perm[i]) = g(r, i);
    t.accumulate(x, gx);
  });
}

/// Per-row sum of a rank-2 tensor -> [N]. Accumulates in double.
template <std::floating_point T>
Var row_sum(Tape<T>& tape, Var x) {
  const auto& v = tape.value(x);
  if (v.rank() != 2) throw DimensionError("row_sum expects rank 2");
  Tensor<T> y({v.dim(0)});
  for (std::size_t r = 0; r < v.dim(0); ++r) {
    double acc = 0.0;
    for (T e : v.row(r)) acc += e;
    y[r] = static_cast<T>(acc);
  }
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    Tensor<T> gx(t.value(x).shape());
    for (std::size_t r = 0; r < gx.dim(0); ++r)
      for (T& e : gx.row(r)) e = g[r];
    t.accumulate(x, gx);
  });
}

/// Per-row half squared norm of a rank-2 tensor -> [N].
template <std::floating_point T>
Var row_half_square_norm(Tape<T>& tape, Var x) {
  const auto& v = tape.value(x);
  if (v.rank() != 2) throw DimensionError("row_half_square_norm expects rank 2");
  Tensor<T> y({v.dim(0)});
  for (std::size_t r = 0; r < v.dim(0); ++r) {
    double acc = 0.0;
    for (T e : v.row(r)) acc += static_cast<double>(e) * e;
    y[r] = static_cast<T>(0.5 * acc);
  }
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    Tensor<T> gx = t.value(x);
    for (std::size_t r = 0; r < gx.dim(0); ++r)
      for (T& e : gx.row(r)) e *= g[r];
    t.accumulate(x, gx);
  });
}

/// a - b, elementwise.
template <std::floating_point T>
Var sub(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (va.size() != vb.size()) throw DimensionError("sub: size mismatch");
  Tensor<T> y = va;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= vb[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    Tensor<T> g = t.upstream(self);
    t.accumulate(a, g);
    for (T& e : g.data()) e = -e;
    t.accumulate(b, g);
  });
}

/// Mean of all elements -> scalar [1]. Accumulates in double.
template <std::floating_point T>
Var mean(Tape<T>& tape, Var x) {
  const auto& v = tape.value(x);
  if (v.empty()) throw ContractError("mean of an empty tensor");
  double acc = 0.0;
  for (T e : v.data()) acc += e;
  const double n = static_cast<double>(v.size());
  return tape.record(Tensor<T>({1}, static_cast<T>(acc / n)), {x}, [x, n](Tape<T>& t, std::size_t self) {
    Tensor<T> gx(t.value(x).shape(), static_cast<T>(t.upstream(self)[0] / n));
    t.accumulate(x, gx);
  });
}

template <std::floating_point T>
Var add_scalar(Tape<T>& tape, Var x, T c) {
  Tensor<T> y = tape.value(x);
  for (T& e : y.data()) e += c;
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, std::size_t self) { t.accumulate(x, t.upstream(self)); });
}

template <std::floating_point T>
Var scale(Tape<T>& tape, Var x, T c) {
  Tensor<T> y = tape.value(x);
  for (T& e : y.data()) e *= c;
  return tape.record(std::move(y), {x}, [x, c](Tape<T>& t, std::size_t self) {
    Tensor<T> g = t.upstream(self);
    for (T& e : g.data()) e *= c;
    t.accumulate(x, g);
  });
}

}  // namespace ad
}  // namespace inflow
