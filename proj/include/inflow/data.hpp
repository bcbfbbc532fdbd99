#pragma once

// Synthetic datasets and visible corruptions. A batch is a Tensor<float> whose
// leading dimension indexes samples; images are CxHxW with values in [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "inflow/rng.hpp"
#include "inflow/tensor.hpp"

namespace inflow {

using DataBatch = Tensor<float>;

inline Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

inline void require_rgb(const Shape& sample, const char* who) {
  if (sample.size() != 3 || sample[0] != 3) {
    throw ContractError(std::string(who) + " needs a 3xHxW shape, got " + shape_string(sample));
  }
}

/// Every pixel of every channel an independent uniform integer in [0, 255], scaled by 1/255.
inline DataBatch gen_noise(std::size_t n, const Shape& sample, std::uint64_t seed) {
  require_rgb(sample, "gen_noise");
  Rng rng = make_rng(seed, 21);
  DataBatch out(batch_shape(n, sample));
  for (float& v : out.data()) v = static_cast<float>(uniform_index(rng, 256)) / 255.0f;
  return out;
}

/// Per image, three distinct random integers in [0, 255], one per channel,
/// repeated over every pixel and scaled by 1/255.
inline DataBatch gen_constant(std::size_t n, const Shape& sample, std::uint64_t seed) {
  require_rgb(sample, "gen_constant");
  Rng rng = make_rng(seed, 22);
  DataBatch out(batch_shape(n, sample));
  const std::size_t plane = sample[1] * sample[2];
  for (std::size_t i = 0; i < n; ++i) {
    const auto levels = sample_without_replacement(256, 3, rng);
    auto row = out.row(i);
    for (std::size_t c = 0; c < 3; ++c)
      std::fill_n(row.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, static_cast<float>(levels[c]) / 255.0f);
  }
  return out;
}

/// Equal-weight isotropic Gaussian mixture; returns [n, d] vectors.
inline DataBatch gen_gaussian_mixture(std::size_t n, const std::vector<std::vector<double>>& centers, double stddev,
                                      std::uint64_t seed) {
  if (centers.empty()) throw ContractError("gaussian mixture needs at least one center");
  if (!(stddev > 0.0)) throw ContractError("gaussian mixture std must be positive");
  const std::size_t d = centers.front().size();
  if (d == 0) throw ContractError("mixture centers must be non-empty");
  for (const auto& c : centers)
    if (c.size() != d) throw DimensionError("mixture centers have different dimensions");
  Rng rng = make_rng(seed, 23);
  DataBatch out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = centers[uniform_index(rng, centers.size())];
    for (std::size_t j = 0; j < d; ++j) out(i, j) = static_cast<float>(c[j] + stddev * standard_normal(rng));
  }
  return out;
}

/// Uniform vectors on the box [lo, hi]^d.
inline DataBatch gen_uniform_box(std::size_t n, std::size_t d, double lo, double hi, std::uint64_t seed) {
  if (!(lo < hi)) throw ContractError("uniform box needs lo < hi");
  if (d == 0) throw ContractError("uniform box dimension must be positive");
  Rng rng = make_rng(seed, 24);
  DataBatch out({n, d});
  for (float& v : out.data()) v = static_cast<float>(uniform(rng, lo, hi));
  return out;
}

/// Replicates a single grey channel into three identical RGB channels.
inline DataBatch gray_to_rgb(const DataBatch& batch) {
  const Shape sample = sample_shape(batch);
  if (sample.size() != 3 || sample[0] != 1) {
    throw ContractError("gray_to_rgb needs 1xHxW samples, got " + shape_string(sample));
  }
  const std::size_t plane = sample[1] * sample[2];
  DataBatch out(batch_shape(batch.rows(), {3, sample[1], sample[2]}));
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto src = batch.row(i);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < 3; ++c) std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return out;
}

enum class CorruptionKind { gaussian_noise, brightness, contrast };

inline CorruptionKind parse_corruption(const std::string& name) {
  if (name == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (name == "brightness") return CorruptionKind::brightness;
  if (name == "contrast") return CorruptionKind::contrast;
  throw ContractError("unknown corruption kind '" + name + "'");
}

inline std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
  }
  return "?";
}

/// Strength of a corruption at severity 1..5: noise std, brightness offset, or
/// the factor by which contrast around 0.5 is kept.
inline double corruption_parameter(CorruptionKind kind, int severity) {
  static constexpr std::array<double, 5> noise{0.04, 0.06, 0.08, 0.09, 0.10};
  static constexpr std::array<double, 5> brightness{0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr std::array<double, 5> contrast{0.75, 0.6, 0.45, 0.3, 0.15};
  if (severity < 1 || severity > 5) throw ContractError("corruption severity must be in 1..5");
  const auto i = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::gaussian_noise: return noise[i];
    case CorruptionKind::brightness: return brightness[i];
    case CorruptionKind::contrast: return contrast[i];
  }
  throw ContractError("unknown corruption kind");
}

/// Applies a corruption and clips to [0, 1]. Gaussian noise draws the same
/// standard-normal field for every severity of a given seed.
inline DataBatch corrupt(DataBatch batch, CorruptionKind kind, int severity, std::uint64_t seed) {
  const double param = corruption_parameter(kind, severity);
  Rng rng = make_rng(seed, 25);
  for (float& v : batch.data()) {
    double x = v;
    switch (kind) {
      case CorruptionKind::gaussian_noise: x += param * standard_normal(rng); break;
      case CorruptionKind::brightness: x += param; break;
      case CorruptionKind::contrast: x = 0.5 + (x - 0.5) * param; break;
    }
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return batch;
}

}  // namespace inflow
