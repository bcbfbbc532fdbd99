#pragma once

// Attention-gated affine coupling flow.
//
// Each block splits its input u into (u1, u2), keeps u1 and maps
//   v2 = u2 * exp(c * s(u1)) + c * t(u1),
// contributing c * sum(s(u1)) to the log-determinant. Fixed permutations
// between blocks change which coordinates land in u1. With c = 0 every block
// is the identity, so the whole flow reduces to a coordinate permutation.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "inflow/autodiff.hpp"
#include "inflow/rng.hpp"
#include "inflow/subnet.hpp"
#include "inflow/tensor.hpp"

namespace inflow {

/// Value of the attention gate c(x).
enum class Gate : std::uint8_t { closed = 0, open = 1 };

inline Gate gate_from_int(int c) {
  if (c != 0 && c != 1) throw ContractError("gate value must be 0 or 1, got " + std::to_string(c));
  return c == 1 ? Gate::open : Gate::closed;
}

inline int to_int(Gate c) { return c == Gate::open ? 1 : 0; }

struct FlowConfig {
  /// Per-sample shape: {d} for vectors or {C, H, W} for images.
  Shape input_shape{2};
  std::size_t blocks = 2;
  SubnetSpec subnet;
  /// One network with separate s and t output heads instead of two networks.
  bool shared = false;
  /// Seeds weight initialization and the inter-block permutations.
  std::uint64_t seed = 0;
  /// Bias of the last subnet layer at initialization. Zero gives an exact
  /// identity flow, but then every final ReLU sits at its kink and receives no
  /// gradient, so trainable models use a small positive value.
  double final_bias = 1e-3;

  friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

inline bool is_image_shape(const Shape& s) { return s.size() == 3; }

/// Number of flattened coordinates in u1 for a given sample shape.
inline std::size_t split_point(const Shape& sample) {
  if (sample.size() == 1) {
    if (sample[0] < 2) throw ConfigError("coupling split needs at least 2 coordinates, got " + shape_string(sample));
    return (sample[0] + 1) / 2;
  }
  if (sample.size() == 3) {
    if (sample[0] < 2) throw ConfigError("coupling split needs at least 2 channels, got " + shape_string(sample));
    return sample[1] * sample[2];
  }
  throw ConfigError("unsupported sample shape " + shape_string(sample));
}

/// Splits flattened rows [N, D] into (u1, u2). Images give u1 the first
/// channel; vectors give u1 the first ceil(d/2) coordinates.
template <std::floating_point T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& u, const Shape& sample) {
  const std::size_t d = shape_size(sample), k = split_point(sample);
  const std::size_t n = u.rows();
  if (u.size() != n * d) throw DimensionError("split: rows do not match sample shape " + shape_string(sample));
  Tensor<T> u1({n, k}), u2({n, d - k});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = u.row(r);
    std::copy(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), u1.row(r).begin());
    std::copy(row.begin() + static_cast<std::ptrdiff_t>(k), row.end(), u2.row(r).begin());
  }
  return {std::move(u1), std::move(u2)};
}

template <std::floating_point T>
Tensor<T> merge_channels(const Tensor<T>& u1, const Tensor<T>& u2) {
  if (u1.rows() != u2.rows()) throw DimensionError("merge: row count mismatch");
  const std::size_t n = u1.rows(), a = u1.row_size(), b = u2.row_size();
  Tensor<T> u({n, a + b});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(u1.row(r).begin(), u1.row(r).end(), u.row(r).begin());
    std::copy(u2.row(r).begin(), u2.row(r).end(), u.row(r).begin() + static_cast<std::ptrdiff_t>(a));
  }
  return u;
}

/// A bijection of flattened coordinates: out[i] = in[forward[i]].
struct Permutation {
  std::vector<std::size_t> forward;
  std::vector<std::size_t> inverse;

  static Permutation from(std::vector<std::size_t> fwd) {
    Permutation p{std::move(fwd), {}};
    p.inverse.assign(p.forward.size(), 0);
    for (std::size_t i = 0; i < p.forward.size(); ++i) p.inverse[p.forward[i]] = i;
    return p;
  }

  template <std::floating_point T>
  Tensor<T> apply(const Tensor<T>& u) const {
    return gather(u, forward);
  }

  template <std::floating_point T>
  Tensor<T> undo(const Tensor<T>& u) const {
    return gather(u, inverse);
  }

 private:
  template <std::floating_point T>
  static Tensor<T> gather(const Tensor<T>& u, const std::vector<std::size_t>& idx) {
    Tensor<T> out({u.rows(), idx.size()});
    for (std::size_t r = 0; r < u.rows(); ++r) {
      auto src = u.row(r);
      auto dst = out.row(r);
      for (std::size_t i = 0; i < idx.size(); ++i) dst[i] = src[idx[i]];
    }
    return out;
  }
};

/// Seeded permutation between two blocks. Images permute whole channels.
/// Draws are repeated until the set of coordinates feeding u1 changes, so the
/// next block conditions on something new.
inline Permutation make_block_permutation(const Shape& sample, std::uint64_t seed, std::size_t index) {
  Rng rng = make_rng(seed, 1000 + index);
  const bool image = is_image_shape(sample);
  const std::size_t units = image ? sample[0] : sample[0];
  const std::size_t plane = image ? sample[1] * sample[2] : 1;
  const std::size_t u1_units = image ? 1 : split_point(sample);
  std::vector<std::size_t> order;
  for (int attempt = 0;; ++attempt) {
    order = random_permutation(units, rng);
    bool changed = false;
    for (std::size_t i = 0; i < u1_units; ++i) changed = changed || order[i] >= u1_units;
    if (changed || attempt > 1000) break;
  }
  std::vector<std::size_t> fwd(units * plane);
  for (std::size_t c = 0; c < units; ++c)
    for (std::size_t p = 0; p < plane; ++p) fwd[c * plane + p] = order[c] * plane + p;
  return Permutation::from(std::move(fwd));
}

template <std::floating_point T>
class CouplingBlock {
 public:
  CouplingBlock() = default;

  CouplingBlock(const FlowConfig& cfg, Rng& rng) : sample_(cfg.input_shape), shared_(cfg.shared) {
    const std::size_t d = shape_size(sample_);
    split_ = split_point(sample_);
    Shape in, out;
    if (cfg.subnet.kind == SubnetKind::conv) {
      if (!is_image_shape(sample_)) throw ConfigError("conv subnets need a CxHxW input shape");
      in = {1, sample_[1], sample_[2]};
      out = {sample_[0] - 1, sample_[1], sample_[2]};
    } else {
      in = {split_};
      out = {d - split_};
    }
    Shape s_out = out;
    if (shared_) s_out[0] *= 2;
    s_ = Subnet<T>(cfg.subnet, in, s_out, rng, cfg.final_bias);
    if (!shared_) t_ = Subnet<T>(cfg.subnet, in, out, rng, cfg.final_bias);
  }

  std::size_t split() const noexcept { return split_; }
  std::size_t dim() const noexcept { return shape_size(sample_); }
  bool shared() const noexcept { return shared_; }
  const Subnet<T>& s_net() const noexcept { return s_; }
  const Subnet<T>& t_net() const noexcept { return t_; }

  /// s(u1) and t(u1), each [N, D - split].
  std::pair<Tensor<T>, Tensor<T>> scale_shift(const Tensor<T>& u1) const {
    const std::size_t n = u1.rows(), w = dim() - split_;
    if (!shared_) return {s_(u1), t_(u1)};
    Tensor<T> both = s_(u1);
    Tensor<T> s({n, w}), t({n, w});
    for (std::size_t r = 0; r < n; ++r) {
      auto row = both.row(r);
      std::copy_n(row.begin(), w, s.row(r).begin());
      std::copy_n(row.begin() + static_cast<std::ptrdiff_t>(w), w, t.row(r).begin());
    }
    return {std::move(s), std::move(t)};
  }

  /// Returns v and the per-row log-determinant contribution c * sum(s(u1)).
  std::pair<Tensor<T>, std::vector<double>> forward(const Tensor<T>& u, Gate c) const {
    std::vector<double> logdet(u.rows(), 0.0);
    if (c == Gate::closed) return {u.flattened(), std::move(logdet)};
    auto [u1, u2] = split_channels(u, sample_);
    auto [s, t] = scale_shift(u1);
    if (!s.all_finite() || !t.all_finite()) throw NumericError("coupling subnet produced a non-finite value");
    for (std::size_t r = 0; r < u2.rows(); ++r) {
      auto u2r = u2.row(r);
      auto sr = s.row(r);
      auto tr = t.row(r);
      double acc = 0.0;
      for (std::size_t i = 0; i < u2r.size(); ++i) {
        u2r[i] = u2r[i] * std::exp(sr[i]) + tr[i];
        acc += sr[i];
      }
      logdet[r] = acc;
    }
    return {merge_channels(u1, u2), std::move(logdet)};
  }

  Tensor<T> inverse(const Tensor<T>& v, Gate c) const {
    if (c == Gate::closed) return v.flattened();
    auto [v1, v2] = split_channels(v, sample_);
    auto [s, t] = scale_shift(v1);
    for (std::size_t r = 0; r < v2.rows(); ++r) {
      auto v2r = v2.row(r);
      auto sr = s.row(r);
      auto tr = t.row(r);
      for (std::size_t i = 0; i < v2r.size(); ++i) v2r[i] = (v2r[i] - tr[i]) * std::exp(-sr[i]);
    }
    return merge_channels(v1, v2);
  }

  /// Taped forward with the gate open. Returns (v, per-row log-det).
  std::pair<Var, Var> forward(Tape<T>& tape, Var u, std::span<const Var> params) const {
    const std::size_t d = dim();
    Var u1 = ad::columns(tape, u, 0, split_);
    Var u2 = ad::columns(tape, u, split_, d);
    Var s, t;
    if (shared_) {
      Var both = s_.apply(tape, u1, params);
      s = ad::columns(tape, both, 0, d - split_);
      t = ad::columns(tape, both, d - split_, 2 * (d - split_));
    } else {
      s = s_.apply(tape, u1, params.subspan(0, s_.parameter_count()));
      t = t_.apply(tape, u1, params.subspan(s_.parameter_count()));
    }
    Var v2 = ad::add(tape, ad::mul(tape, u2, ad::exp(tape, s)), t);
    return {ad::concat_columns(tape, u1, v2), ad::row_sum(tape, s)};
  }

  std::size_t parameter_count() const { return s_.parameter_count() + (shared_ ? 0 : t_.parameter_count()); }

  void collect(std::vector<Tensor<T>*>& out) {
    s_.collect(out);
    if (!shared_) t_.collect(out);
  }

  void collect(std::vector<const Tensor<T>*>& out) const {
    s_.collect(out);
    if (!shared_) t_.collect(out);
  }

 private:
  Shape sample_;
  std::size_t split_ = 0;
  bool shared_ = false;
  Subnet<T> s_;
  Subnet<T> t_;
};

inline double log_two_pi() { return std::log(2.0 * std::numbers::pi); }

/// log N(z; 0, I) accumulated in double.
template <std::ranges::sized_range R>
double gaussian_log_density(const R& z) {
  double sq = 0.0;
  for (auto v : z) sq += static_cast<double>(v) * static_cast<double>(v);
  return -0.5 * static_cast<double>(std::ranges::size(z)) * log_two_pi() - 0.5 * sq;
}

template <std::floating_point T>
struct FlowOutput {
  Tensor<T> z;                  // [N, D]
  std::vector<double> logdet;   // per row
};

template <std::floating_point T>
class FlowModel {
 public:
  explicit FlowModel(FlowConfig config) : config_(std::move(config)) {
    if (config_.blocks < 1) throw ConfigError("a flow needs at least one coupling block");
    split_point(config_.input_shape);
    Rng rng = make_rng(config_.seed, 1);
    for (std::size_t j = 0; j < config_.blocks; ++j) blocks_.emplace_back(config_, rng);
    for (std::size_t j = 0; j + 1 < config_.blocks; ++j)
      permutations_.push_back(make_block_permutation(config_.input_shape, config_.seed, j));
  }

  const FlowConfig& config() const noexcept { return config_; }
  /// Flattened latent dimension l.
  std::size_t dim() const { return shape_size(config_.input_shape); }
  std::span<const CouplingBlock<T>> blocks() const noexcept { return blocks_; }
  std::span<const Permutation> permutations() const noexcept { return permutations_; }

  /// The fixed coordinate permutation the flow reduces to when the gate is closed.
  std::vector<std::size_t> closed_gate_permutation() const {
    std::vector<std::size_t> idx(dim());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (const auto& p : permutations_) {
      std::vector<std::size_t> next(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) next[i] = idx[p.forward[i]];
      idx = std::move(next);
    }
    return idx;
  }

  Tensor<T> flatten_input(const Tensor<T>& x) const {
    const std::size_t d = dim();
    if (x.rank() == 0 || x.size() % d != 0 || x.size() / d != x.rows()) {
      throw DimensionError("input " + shape_string(x.shape()) + " does not match model shape " +
                           shape_string(config_.input_shape));
    }
    return x.reshaped({x.rows(), d});
  }

  FlowOutput<T> forward(const Tensor<T>& x, Gate c) const {
    Tensor<T> u = flatten_input(x);
    std::vector<double> total(u.rows(), 0.0);
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
      auto [v, ld] = blocks_[j].forward(u, c);
      for (std::size_t r = 0; r < total.size(); ++r) total[r] += ld[r];
      u = j < permutations_.size() ? permutations_[j].apply(v) : std::move(v);
    }
    return {std::move(u), std::move(total)};
  }

  Tensor<T> inverse(const Tensor<T>& z, Gate c) const {
    Tensor<T> v = flatten_input(z);
    for (std::size_t j = blocks_.size(); j-- > 0;) {
      if (j < permutations_.size()) v = permutations_[j].undo(v);
      v = blocks_[j].inverse(v, c);
    }
    return v;
  }

  /// log p(x) = log N(z) + total log-det, per row.
  std::vector<double> log_likelihood(const Tensor<T>& x, Gate c) const {
    if (c == Gate::closed) {
      // z is a permutation of x and the prior is isotropic; summing in input
      // order keeps the result bit-identical to the density of x itself.
      const Tensor<T> u = flatten_input(x);
      std::vector<double> ll(u.rows());
      for (std::size_t r = 0; r < ll.size(); ++r) ll[r] = gaussian_log_density(u.row(r));
      return ll;
    }
    auto out = forward(x, c);
    std::vector<double> ll(out.z.rows());
    for (std::size_t r = 0; r < ll.size(); ++r) ll[r] = gaussian_log_density(out.z.row(r)) + out.logdet[r];
    return ll;
  }

  /// Records the mean negative log-likelihood of `batch` on `tape`.
  /// `params` must hold one var per parameters() entry.
  Var nll(Tape<T>& tape, const Tensor<T>& batch, std::span<const Var> params, Gate c = Gate::open) const {
    if (batch.rows() == 0) throw ContractError("nll of an empty batch");
    const T half_log_2pi = static_cast<T>(0.5 * static_cast<double>(dim()) * log_two_pi());
    Var u = tape.leaf(flatten_input(batch));
    if (c == Gate::closed) {
      for (const auto& p : permutations_) u = ad::permute_columns(tape, u, p.forward);
      return ad::mean(tape, ad::add_scalar(tape, ad::row_half_square_norm(tape, u), half_log_2pi));
    }
    std::optional<Var> logdet;
    std::size_t offset = 0;
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
      const std::size_t count = blocks_[j].parameter_count();
      auto [v, ld] = blocks_[j].forward(tape, u, params.subspan(offset, count));
      offset += count;
      logdet = logdet ? ad::add(tape, *logdet, ld) : ld;
      u = j < permutations_.size() ? ad::permute_columns(tape, v, permutations_[j].forward) : v;
    }
    Var per_row = ad::sub(tape, ad::add_scalar(tape, ad::row_half_square_norm(tape, u), half_log_2pi), *logdet);
    return ad::mean(tape, per_row);
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& b : blocks_) b.collect(out);
    return out;
  }

  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& b : blocks_) b.collect(out);
    return out;
  }

  std::size_t parameter_size() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  /// All parameters concatenated in declaration order.
  std::vector<double> flat_parameters() const {
    std::vector<double> flat;
    for (const auto* p : parameters()) flat.insert(flat.end(), p->data().begin(), p->data().end());
    return flat;
  }

  void set_flat_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_size()) throw DimensionError("flat parameter vector has wrong length");
    std::size_t k = 0;
    for (auto* p : parameters())
      for (T& v : p->data()) v = static_cast<T>(flat[k++]);
  }

  /// A copy with parameters converted to another scalar type.
  template <std::floating_point U>
  FlowModel<U> cast() const {
    FlowModel<U> out(config_);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

 private:
  FlowConfig config_;
  std::vector<CouplingBlock<T>> blocks_;
  std::vector<Permutation> permutations_;
};

// Free-function forms of the model operations.

template <std::floating_point T>
std::pair<Tensor<T>, std::vector<double>> coupling_forward(const CouplingBlock<T>& block, const Tensor<T>& u, Gate c) {
  return block.forward(u, c);
}

template <std::floating_point T>
Tensor<T> coupling_inverse(const CouplingBlock<T>& block, const Tensor<T>& v, Gate c) {
  return block.inverse(v, c);
}

template <std::floating_point T>
FlowOutput<T> flow_forward(const FlowModel<T>& model, const Tensor<T>& x, Gate c) {
  return model.forward(x, c);
}

template <std::floating_point T>
Tensor<T> flow_inverse(const FlowModel<T>& model, const Tensor<T>& z, Gate c) {
  return model.inverse(z, c);
}

template <std::floating_point T>
std::vector<double> log_likelihood(const FlowModel<T>& model, const Tensor<T>& x, Gate c) {
  return model.log_likelihood(x, c);
}

/// Mean negative log-likelihood of a batch (no gradients).
template <std::floating_point T>
double nll_loss(const FlowModel<T>& model, const Tensor<T>& batch, Gate c = Gate::open) {
  if (batch.rows() == 0) throw ContractError("nll of an empty batch");
  double acc = 0.0;
  for (double ll : model.log_likelihood(batch, c)) acc -= ll;
  return acc / static_cast<double>(batch.rows());
}

/// Mean NLL and its gradient with respect to every parameter tensor.
template <std::floating_point T>
std::pair<double, std::vector<Tensor<T>>> nll_with_gradients(const FlowModel<T>& model, const Tensor<T>& batch,
                                                            Gate c = Gate::open) {
  Tape<T> tape;
  std::vector<Var> vars;
  for (const auto* p : model.parameters()) vars.push_back(tape.leaf(*p, true));
  Var loss = model.nll(tape, batch, vars, c);
  tape.backward(loss);
  std::vector<Tensor<T>> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(tape.grad(v));
  return {static_cast<double>(tape.value(loss)[0]), std::move(grads)};
}

}  // namespace inflow
