#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "inflow/flow.hpp"
#include "inflow/optim.hpp"

namespace inflow {

/// Maximum-likelihood training schedule. The defaults are the desk-scale
/// schedule (50 epochs x 50 steps x 128 samples); the full-size schedule is
/// 200 x 100 x 250.
struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t steps_per_epoch = 50;
  std::size_t batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct TrainResult {
  /// Mini-batch NLL recorded before each update.
  std::vector<double> losses;
};

/// Minimizes the mean NLL of `data` (rows are samples) with the gate open.
/// Deterministic given the config seed. Throws NumericError on a non-finite loss.
template <std::floating_point T>
TrainResult train(FlowModel<T>& model, const Tensor<T>& data, const TrainConfig& config) {
  if (data.rows() == 0) throw ContractError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  TrainResult result;
  AdamState state{config.adam, {}, {}, 0};
  Rng rng = make_rng(config.seed, 7);
  auto params = model.parameters();
  const std::size_t total = config.epochs * config.steps_per_epoch;
  result.losses.reserve(total);
  for (std::size_t step = 0; step < total; ++step) {
    auto idx = sample_without_replacement(data.rows(), config.batch_size, rng);
    Tensor<T> batch = gather_rows(data, idx);
    auto [loss, grads] = nll_with_gradients(model, batch);
    bool finite = std::isfinite(loss);
    for (const auto& g : grads) finite = finite && g.all_finite();
    if (!finite) {
      double norm = 0.0;
      std::size_t worst = 0;
      double worst_norm = -1.0;
      for (std::size_t k = 0; k < params.size(); ++k) {
        double n2 = 0.0;
        for (T v : params[k]->data()) n2 += static_cast<double>(v) * v;
        norm += n2;
        if (!(n2 <= worst_norm)) {
          worst_norm = n2;
          worst = k;
        }
      }
      std::ostringstream os;
      os << "non-finite loss at step " << step << " (loss " << loss << ", parameter norm " << std::sqrt(norm)
         << ", largest tensor #" << worst << " norm " << std::sqrt(worst_norm) << ")";
      throw NumericError(os.str());
    }
    result.losses.push_back(loss);
    adam_step<T>(params, grads, state);
  }
  return result;
}

}  // namespace inflow
