#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "inflow/autodiff.hpp"
#include "inflow/layers.hpp"
#include "inflow/rng.hpp"
#include "inflow/tensor.hpp"

namespace inflow {

enum class SubnetKind { dense, conv };

inline std::string to_string(SubnetKind kind) { return kind == SubnetKind::dense ? "dense" : "conv"; }

/// Layout of an s or t network. Every layer, including the last, is followed
/// by a ReLU. `hidden` lists the widths (dense) or channel counts (conv) of
/// the hidden layers; conv layers are kernel x kernel, stride 1, "same" padding.
struct SubnetSpec {
  SubnetKind kind = SubnetKind::dense;
  std::vector<std::size_t> hidden{64};
  std::size_t kernel = 3;

  friend bool operator==(const SubnetSpec&, const SubnetSpec&) = default;
};

template <std::floating_point T>
struct Layer {
  Tensor<T> weight;  // dense: [out, in]; conv: [out_c, in_c, k, k]
  Tensor<T> bias;
};

/// A feed-forward ReLU network mapping [N, prod(in_shape)] to [N, prod(out_shape)].
/// For conv subnets in_shape/out_shape are {C, H, W} with matching H and W.
template <std::floating_point T>
class Subnet {
 public:
  Subnet() = default;

  /// Hidden layers get He-uniform weights and zero biases; the output layer
  /// gets zero weights and a constant bias `final_bias`.
  Subnet(const SubnetSpec& spec, Shape in_shape, Shape out_shape, Rng& rng, double final_bias)
      : spec_(spec), in_shape_(std::move(in_shape)), out_shape_(std::move(out_shape)) {
    std::vector<std::size_t> widths;
    if (spec_.kind == SubnetKind::dense) {
      widths.push_back(shape_size(in_shape_));
      widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
      widths.push_back(shape_size(out_shape_));
    } else {
      if (in_shape_.size() != 3 || out_shape_.size() != 3 || in_shape_[1] != out_shape_[1] ||
          in_shape_[2] != out_shape_[2]) {
        throw DimensionError("conv subnet needs CxHxW shapes with equal spatial size");
      }
      if (spec_.kernel % 2 == 0) throw DimensionError("conv subnet kernel must be odd to preserve resolution");
      widths.push_back(in_shape_[0]);
      widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
      widths.push_back(out_shape_[0]);
    }
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      const bool last = l + 2 == widths.size();
      Layer<T> layer;
      std::size_t fan_in = in;
      if (spec_.kind == SubnetKind::dense) {
        layer.weight = Tensor<T>({out, in});
      } else {
        layer.weight = Tensor<T>({out, in, spec_.kernel, spec_.kernel});
        fan_in = in * spec_.kernel * spec_.kernel;
      }
      layer.bias = Tensor<T>({out}, last ? static_cast<T>(final_bias) : T{0});
      if (!last) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (T& w : layer.weight.data()) w = static_cast<T>(uniform(rng, -bound, bound));
      }
      layers_.push_back(std::move(layer));
    }
  }

  const SubnetSpec& spec() const noexcept { return spec_; }
  const Shape& in_shape() const noexcept { return in_shape_; }
  const Shape& out_shape() const noexcept { return out_shape_; }
  std::span<const Layer<T>> layers() const noexcept { return layers_; }

  Conv2dGeometry geometry() const { return {1, spec_.kernel / 2}; }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const std::size_t n = x.rows();
    if (x.size() != n * shape_size(in_shape_)) throw DimensionError("subnet input has wrong width");
    if (spec_.kind == SubnetKind::dense) {
      Tensor<T> h = x.reshaped({n, shape_size(in_shape_)});
      for (const auto& layer : layers_) h = relu(dense_forward_batch(layer.weight, layer.bias, h));
      return h;
    }
    Tensor<T> h = x.reshaped({n, in_shape_[0], in_shape_[1], in_shape_[2]});
    for (const auto& layer : layers_) h = relu(conv2d_forward(layer.weight, layer.bias, h, geometry()));
    return std::move(h).reshaped({n, shape_size(out_shape_)});
  }

  /// Taped evaluation. `params` holds weight/bias vars in parameters() order.
  Var apply(Tape<T>& tape, Var x, std::span<const Var> params) const {
    const std::size_t n = tape.value(x).rows();
    Var h = x;
    if (spec_.kind == SubnetKind::dense) {
      for (std::size_t l = 0; l < layers_.size(); ++l) h = ad::relu(tape, ad::dense(tape, h, params[2 * l], params[2 * l + 1]));
      return h;
    }
    h = ad::reshape(tape, h, {n, in_shape_[0], in_shape_[1], in_shape_[2]});
    for (std::size_t l = 0; l < layers_.size(); ++l)
      h = ad::relu(tape, ad::conv2d(tape, h, params[2 * l], params[2 * l + 1], geometry()));
    return ad::reshape(tape, h, {n, shape_size(out_shape_)});
  }

  std::size_t parameter_count() const { return 2 * layers_.size(); }

  void collect(std::vector<Tensor<T>*>& out) {
    for (auto& layer : layers_) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }

  void collect(std::vector<const Tensor<T>*>& out) const {
    for (const auto& layer : layers_) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }

 private:
  SubnetSpec spec_;
  Shape in_shape_;
  Shape out_shape_;
  std::vector<Layer<T>> layers_;
};

}  // namespace inflow
