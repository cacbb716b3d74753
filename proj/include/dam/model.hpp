// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dam/controller.hpp"
#include "dam/memory.hpp"
#include "dam/rng.hpp"
#include "dam/tensor.hpp"

namespace dam {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Every trainable tensor of a DAM model.
struct DamParameters {
  ControllerParams controller;
  OutputHead task_head;
  std::optional<OutputHead> reconstruction_head;
  std::optional<Tensor> embedding;  // [vocab, d_i]

  static DamParameters init(const ModelConfig& config, std::uint64_t seed);

  /// Stable, ordered view; handles alias the parameters.
  std::vector<NamedTensor> named() const;
  /// Deep copy with fresh leaves (private gradient buffers).
  DamParameters clone() const;
  std::size_t count() const;
};

struct RecurrentState {
  ControllerState controller;
  MemoryState memory;

  static RecurrentState initial(const ModelConfig& config);
};

struct StepDiagnostics {
  std::vector<std::vector<double>> gates;  // R x K attentive-gate softmax values
};

struct StepResult {
  Tensor output;          // y_t, task head
  Tensor reconstruction;  // MRL prediction of i_t (aliases output when the head is shared)
  RecurrentState state;
  StepDiagnostics diagnostics;
};

/// Input vector for one step: the raw vector, or an embedding row when the
/// model consumes token ids (first channel holds the id).
Tensor embed_input(std::span<const double> input, const ModelConfig& config,
                   const DamParameters& params);

/// controller -> interface -> per-block write/read -> attentive read -> heads.
/// The reconstruction output is only produced when `reconstruct` is set.
StepResult dam_step(const Tensor& x, const RecurrentState& state, const DamParameters& params,
                    const ModelConfig& config, bool training, Rng& dropout_rng,
                    bool reconstruct = false);

}  // namespace dam
