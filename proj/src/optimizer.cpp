// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "dam/error.hpp"
#include "dam/trainer.hpp"

namespace dam {

void rmsprop_step(std::span<double> param, std::span<const double> grad, OptimizerSlot& slot,
                  const RmsPropOptions& o) {
  if (grad.size() != param.size()) throw ShapeError("rmsprop: gradient size mismatch");
  if (slot.mean_square.size() != param.size()) slot.mean_square.assign(param.size(), 0.0);
  if (slot.momentum.size() != param.size()) slot.momentum.assign(param.size(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double& ms = slot.mean_square[i];
    double& mom = slot.momentum[i];
    ms = o.decay * ms + (1.0 - o.decay) * g * g;
    mom = o.momentum * mom + o.learning_rate * g / std::sqrt(ms + o.epsilon);
    param[i] -= mom;
  }
}

void rmsprop_update(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& grads,
                    std::map<std::string, OptimizerSlot>& slots, const RmsPropOptions& options) {
  if (params.size() != grads.size()) throw ShapeError("rmsprop: parameter/gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (double g : grads[p]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for " + params[p].name + "; step aborted");
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].tensor;
    rmsprop_step(t.mutable_values(), grads[p], slots[params[p].name], options);
  }
}

double clip_gradients(std::vector<std::vector<double>>& grads, double max_norm) {
  if (!(max_norm > 0)) throw ConfigError("clip norm must be positive");
  double sq = 0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

}  // namespace dam
