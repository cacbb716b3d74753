// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks for every differentiable op, the memory
// addressing pipeline and an unrolled DAM with the refreshing loss.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dam/controller.hpp"
#include "dam/tensor.hpp"

namespace dam {

struct GradcheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error, so near-zero gradients are
  /// judged on absolute error.
  double floor = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;
  std::size_t probes = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// `fn` builds an output from the given leaves; it is reduced to a scalar by
/// a fixed random projection and every leaf entry is probed.
GradcheckResult check_gradient(const std::string& name,
                               const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                               std::vector<Tensor> leaves, const GradcheckOptions& options);

/// One result per primitive, addressing stage and controller piece.
std::vector<GradcheckResult> gradcheck_ops(const GradcheckOptions& options);

/// Unrolled model loss (task + refreshing loss) against every parameter.
GradcheckResult gradcheck_model(const ModelConfig& config, std::size_t steps, const GradcheckOptions& options);

/// K=2, A=4, L=5, R=2, d_h=16, p=0.5 over 6 steps.
ModelConfig gradcheck_reference_config();

}  // namespace dam
