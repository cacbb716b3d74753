// SPDX-License-Identifier: Apache-2.0
//
// Task loss, memory refreshing loss (reconstruction of Bernoulli-sampled
// story inputs) and the clamped re-weighting that combines them:
//
//   L = γ · Σ_t A(t) ℓ_task(o_t, y_t) + Σ_t α(t) ℓ_mr(i_t, ŷ_t)
//   γ = max(1, Σ_t S(t) α(t) / Σ_t A(t))
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dam/rng.hpp"
#include "dam/tensor.hpp"

namespace dam {

enum class LossKind { kSigmoidCrossEntropy, kSoftmaxCrossEntropy, kSquaredError };

/// Per-step phase indicators of one episode.
struct PhaseMask {
  std::vector<std::uint8_t> story;    // S(t)
  std::vector<std::uint8_t> answer;   // A(t)
  std::vector<std::uint8_t> sampled;  // α(t)

  std::size_t length() const { return story.size(); }
  std::size_t story_count() const;
  std::size_t answer_count() const;
  std::size_t sampled_count() const;
  /// Throws if lengths differ, S and A overlap, or α is set off-story.
  void validate() const;
};

/// Independent Bernoulli(p) draw per story step; zero elsewhere.
std::vector<std::uint8_t> sample_mask(std::span<const std::uint8_t> story, double p, Rng& rng);

/// ℓ(output, target) for one step. For softmax cross-entropy the target is
/// either one-hot over the output width or a single class id.
Tensor step_loss(LossKind kind, const Tensor& output, std::span<const double> target);

/// Σ_t mask(t) · ℓ(outputs[t], targets[t]); `targets` is row-major
/// [steps, target_width]. Unmasked steps may hold undefined outputs.
Tensor masked_loss(LossKind kind, const std::vector<Tensor>& outputs, std::span<const double> targets,
                   std::size_t target_width, std::span<const std::uint8_t> mask);

/// Task loss over answer steps.
Tensor task_loss(LossKind kind, const std::vector<Tensor>& outputs, std::span<const double> targets,
                 std::size_t target_width, std::span<const std::uint8_t> answer);

/// Reconstruction loss of the step inputs over sampled steps.
Tensor mr_loss(LossKind kind, const std::vector<Tensor>& reconstructions,
               std::span<const double> inputs, std::size_t input_width,
               std::span<const std::uint8_t> sampled);

/// max(1, Σ S·α / Σ A). Throws when there are no answer steps.
double gamma(std::span<const std::uint8_t> story, std::span<const std::uint8_t> sampled,
             std::span<const std::uint8_t> answer);

/// γ · task + mr
Tensor total_loss(const Tensor& task, const Tensor& mr, double gamma);

struct LossReport {
  double task_loss = 0;
  double mr_loss = 0;
  double gamma = 1;
  double total = 0;
  std::size_t sampled_count = 0;
};

}  // namespace dam
