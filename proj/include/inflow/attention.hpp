#pragma once

// The attention gate c(y): encode the retained in-distribution subset and the
// test batch to a low-dimensional space, then run an MMD permutation test.
// The gate closes (c = 0) when the test batch differs significantly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inflow/flow.hpp"
#include "inflow/layers.hpp"
#include "inflow/parallel.hpp"
#include "inflow/rng.hpp"
#include "inflow/tensor.hpp"

namespace inflow {

enum class EncoderKind { random_projection, random_conv };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::random_projection;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  /// Channel counts of the 4x4 / stride-2 conv stack (random_conv only).
  std::vector<std::size_t> channels{16, 32};
};

/// Untrained, seeded feature map phi. Random projection for any input;
/// random ReLU conv stack followed by a linear map for CxHxW inputs.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, Shape sample) : config_(config), sample_(std::move(sample)) {
    if (config_.dim == 0) throw ConfigError("encoder output dimension must be positive");
    Rng rng = make_rng(config_.seed, 11);
    std::size_t flat = shape_size(sample_);
    if (config_.kind == EncoderKind::random_conv) {
      if (sample_.size() != 3) throw ConfigError("random_conv encoder needs a CxHxW input shape");
      std::size_t c = sample_[0], h = sample_[1], w = sample_[2];
      for (std::size_t out_c : config_.channels) {
        if (h < 4 || w < 4) break;
        Tensor<double> k({out_c, c, 4, 4});
        const double sd = std::sqrt(2.0 / static_cast<double>(c * 16));
        for (double& v : k.data()) v = sd * standard_normal(rng);
        conv_.push_back({std::move(k), Tensor<double>({out_c})});
        c = out_c;
        h = conv_output_size(h, 4, geometry());
        w = conv_output_size(w, 4, geometry());
      }
      flat = c * h * w;
    }
    projection_ = Tensor<double>({config_.dim, flat});
    const double sd = 1.0 / std::sqrt(static_cast<double>(flat));
    for (double& v : projection_.data()) v = sd * standard_normal(rng);
  }

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return config_.dim; }

  /// [n, ...sample] -> [n, dim]
  template <std::floating_point T>
  Tensor<double> encode(const Tensor<T>& batch) const {
    if (batch.rows() == 0) throw ContractError("cannot encode an empty batch");
    const std::size_t n = batch.rows();
    if (batch.row_size() != shape_size(sample_)) {
      throw DimensionError("encoder expects samples of shape " + shape_string(sample_));
    }
    Tensor<double> h = batch.template cast<double>();
    if (config_.kind == EncoderKind::random_conv) {
      h = std::move(h).reshaped({n, sample_[0], sample_[1], sample_[2]});
      for (const auto& [k, b] : conv_) h = relu(conv2d_forward(k, b, h, geometry()));
    }
    h = h.flattened();
    return dense_forward_batch(projection_, Tensor<double>({config_.dim}), h);
  }

 private:
  static Conv2dGeometry geometry() { return {2, 0}; }

  EncoderConfig config_;
  Shape sample_;
  std::vector<std::pair<Tensor<double>, Tensor<double>>> conv_;
  Tensor<double> projection_;
};

template <std::floating_point T>
Tensor<double> encode(const Encoder& encoder, const Tensor<T>& batch) {
  return encoder.encode(batch);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("points have different dimensions");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// k(a, b) = exp(-|a - b|^2 / sigma^2)
inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("RBF bandwidth must be positive");
  return std::exp(-squared_distance(a, b) / (sigma * sigma));
}

/// sqrt of the median pairwise squared distance; 1 when that median is 0.
inline double median_bandwidth(const Tensor<double>& points) {
  const std::size_t n = points.rows();
  if (n < 2) throw ContractError("median bandwidth needs at least 2 points");
  std::vector<double> d2;
  d2.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d2.push_back(squared_distance(points.row(i), points.row(j)));
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  double median = d2[mid];
  if (d2.size() % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median > 0.0 ? std::sqrt(median) : 1.0;
}

/// Unbiased MMD^2: two within-sample U-statistics minus twice the cross average.
inline double mmd_u2(const Tensor<double>& x, const Tensor<double>& y, double sigma) {
  const std::size_t n = x.rows(), m = y.rows();
  if (n < 2 || m < 2) throw ContractError("unbiased MMD needs at least 2 samples on each side");
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sxx += rbf_kernel(x.row(i), x.row(j), sigma);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) syy += rbf_kernel(y.row(i), y.row(j), sigma);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) sxy += rbf_kernel(x.row(i), y.row(j), sigma);
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return 2.0 * sxx / (dn * (dn - 1.0)) + 2.0 * syy / (dm * (dm - 1.0)) - 2.0 * sxy / (dn * dm);
}

struct AttentionVerdict {
  double mmd_observed = 0.0;
  /// Fraction of permutations whose statistic exceeds the observed one.
  double p_value = 1.0;
  double alpha = 0.05;
  double bandwidth = 1.0;
  std::size_t permutations = 0;
  Gate c = Gate::open;
};

struct PermutationTestConfig {
  std::size_t permutations = 100;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

/// Permutation test on the pooled kernel matrix. Permutation p draws its own
/// partition from derive_seed(seed, p), so results do not depend on threading.
inline AttentionVerdict permutation_test(const Tensor<double>& x, const Tensor<double>& y, double sigma,
                                         const PermutationTestConfig& cfg) {
  const std::size_t n = x.rows(), m = y.rows();
  if (n < 2 || m < 2) throw ContractError("unbiased MMD needs at least 2 samples on each side");
  if (cfg.permutations < 1) throw ContractError("permutation count must be at least 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ContractError("alpha must lie in (0, 1)");
  if (x.row_size() != y.row_size()) throw DimensionError("samples have different dimensions");
  if (!(sigma > 0.0)) throw ContractError("RBF bandwidth must be positive");

  const std::size_t total = n + m;
  std::vector<double> gram(total * total);
  auto point = [&](std::size_t i) { return i < n ? x.row(i) : y.row(i - n); };
  double off_diagonal = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    gram[i * total + i] = 1.0;
    for (std::size_t j = i + 1; j < total; ++j) {
      const double k = rbf_kernel(point(i), point(j), sigma);
      gram[i * total + j] = gram[j * total + i] = k;
      off_diagonal += 2.0 * k;
    }
  }
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  auto statistic = [&](const std::vector<std::uint8_t>& in_x) {
    double sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      const double* row = &gram[i * total];
      for (std::size_t j = i + 1; j < total; ++j) {
        if (in_x[i] != in_x[j]) continue;
        (in_x[i] ? sxx : syy) += row[j];
      }
    }
    const double sxy = 0.5 * (off_diagonal - 2.0 * sxx - 2.0 * syy);
    return 2.0 * sxx / (dn * (dn - 1.0)) + 2.0 * syy / (dm * (dm - 1.0)) - 2.0 * sxy / (dn * dm);
  };

  std::vector<std::uint8_t> labels(total, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n), 1);
  const double observed = statistic(labels);

  std::vector<std::uint8_t> exceeds(cfg.permutations, 0);
  parallel_for(cfg.permutations, [&](std::size_t p) {
    Rng rng = make_rng(cfg.seed, p);
    const auto chosen = sample_without_replacement(total, n, rng);
    std::vector<std::uint8_t> in_x(total, 0);
    for (std::size_t i : chosen) in_x[i] = 1;
    exceeds[p] = statistic(in_x) > observed ? 1 : 0;
  });
  std::size_t count = 0;
  for (auto e : exceeds) count += e;

  AttentionVerdict v;
  v.mmd_observed = observed;
  v.p_value = static_cast<double>(count) / static_cast<double>(cfg.permutations);
  v.alpha = cfg.alpha;
  v.bandwidth = sigma;
  v.permutations = cfg.permutations;
  v.c = v.p_value < cfg.alpha ? Gate::closed : Gate::open;
  return v;
}

/// Bandwidth taken from the median heuristic on the pooled points.
inline AttentionVerdict permutation_test(const Tensor<double>& x, const Tensor<double>& y,
                                         const PermutationTestConfig& cfg) {
  if (x.rows() < 2 || y.rows() < 2) throw ContractError("unbiased MMD needs at least 2 samples on each side");
  Tensor<double> pooled({x.rows() + y.rows(), x.row_size()});
  std::copy(x.data().begin(), x.data().end(), pooled.data().begin());
  std::copy(y.data().begin(), y.data().end(), pooled.data().begin() + static_cast<std::ptrdiff_t>(x.size()));
  return permutation_test(x, y, median_bandwidth(pooled), cfg);
}

struct GateConfig {
  EncoderConfig encoder;
  /// Fixed RBF bandwidth; the median heuristic is used when empty.
  std::optional<double> bandwidth;
  std::size_t permutations = 100;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

/// Decides c for a whole test batch against the retained reference subset.
template <std::floating_point T>
AttentionVerdict attention_gate(const Tensor<T>& reference, const Tensor<T>& test, const GateConfig& cfg) {
  if (reference.rows() < 2) throw ContractError("the reference subset needs at least 2 samples");
  if (test.rows() < 2) throw ContractError("the attention gate needs a test batch of at least 2 samples");
  const Encoder encoder(cfg.encoder, sample_shape(reference));
  const Tensor<double> x = encoder.encode(reference);
  const Tensor<double> y = encoder.encode(test);
  const PermutationTestConfig ptc{cfg.permutations, cfg.alpha, cfg.seed};
  if (cfg.bandwidth) return permutation_test(x, y, *cfg.bandwidth, ptc);
  return permutation_test(x, y, ptc);
}

}  // namespace inflow
