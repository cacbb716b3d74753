// SPDX-License-Identifier: Apache-2.0
#include "dam/objectives.hpp"

#include <algorithm>
#include <numeric>

#include "dam/error.hpp"

namespace dam {

namespace {

std::size_t count_ones(std::span<const std::uint8_t> v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](std::uint8_t x) { return x != 0; }));
}

}  // namespace

std::size_t PhaseMask::story_count() const { return count_ones(story); }
std::size_t PhaseMask::answer_count() const { return count_ones(answer); }
std::size_t PhaseMask::sampled_count() const { return count_ones(sampled); }

void PhaseMask::validate() const {
  if (answer.size() != story.size() || sampled.size() != story.size()) {
    throw ShapeError("phase mask: S, A and α lengths differ");
  }
  for (std::size_t t = 0; t < story.size(); ++t) {
    if (story[t] && answer[t]) throw ShapeError("phase mask: step " + std::to_string(t) + " is both story and answer");
    if (sampled[t] && !story[t]) throw ShapeError("phase mask: step " + std::to_string(t) + " sampled outside the story");
  }
}

std::vector<std::uint8_t> sample_mask(std::span<const std::uint8_t> story, double p, Rng& rng) {
  if (!(p >= 0 && p <= 1)) throw ConfigError("reproducing probability must be in [0, 1]");
  std::vector<std::uint8_t> alpha(story.size(), 0);
  for (std::size_t t = 0; t < story.size(); ++t) {
    if (story[t]) alpha[t] = rng.bernoulli(p) ? 1 : 0;
  }
  return alpha;
}

Tensor step_loss(LossKind kind, const Tensor& output, std::span<const double> target) {
  switch (kind) {
    case LossKind::kSigmoidCrossEntropy:
      if (target.size() != output.size()) throw ShapeError("sigmoid cross-entropy: target width mismatch");
      return sigmoid_cross_entropy(output, Tensor::vector({target.begin(), target.end()}));
    case LossKind::kSquaredError:
      if (target.size() != output.size()) throw ShapeError("squared error: target width mismatch");
      return squared_error(output, Tensor::vector({target.begin(), target.end()}));
    case LossKind::kSoftmaxCrossEntropy: {
      std::size_t label;
      if (target.size() == 1 && output.size() > 1) {
        label = static_cast<std::size_t>(target[0]);
      } else if (target.size() == output.size()) {
        label = static_cast<std::size_t>(std::max_element(target.begin(), target.end()) - target.begin());
      } else {
        throw ShapeError("softmax cross-entropy: target width mismatch");
      }
      return softmax_cross_entropy(output, label);
    }
  }
  throw Error("unknown loss kind");
}

Tensor masked_loss(LossKind kind, const std::vector<Tensor>& outputs, std::span<const double> targets,
                   std::size_t target_width, std::span<const std::uint8_t> mask) {
  if (outputs.size() != mask.size() || targets.size() != mask.size() * target_width) {
    throw ShapeError("masked loss: outputs, targets and mask disagree on episode length");
  }
  Tensor total;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    if (!outputs[t].defined()) throw ShapeError("masked loss: no output at masked step " + std::to_string(t));
    Tensor l = step_loss(kind, outputs[t], targets.subspan(t * target_width, target_width));
    total = total.defined() ? add(total, l) : l;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

Tensor task_loss(LossKind kind, const std::vector<Tensor>& outputs, std::span<const double> targets,
                 std::size_t target_width, std::span<const std::uint8_t> answer) {
  return masked_loss(kind, outputs, targets, target_width, answer);
}

Tensor mr_loss(LossKind kind, const std::vector<Tensor>& reconstructions,
               std::span<const double> inputs, std::size_t input_width,
               std::span<const std::uint8_t> sampled) {
  return masked_loss(kind, reconstructions, inputs, input_width, sampled);
}

double gamma(std::span<const std::uint8_t> story, std::span<const std::uint8_t> sampled,
             std::span<const std::uint8_t> answer) {
  if (story.size() != sampled.size() || story.size() != answer.size()) {
    throw ShapeError("gamma: mask lengths differ");
  }
  std::size_t sampled_story = 0;
  for (std::size_t t = 0; t < story.size(); ++t) sampled_story += (story[t] && sampled[t]) ? 1 : 0;
  const std::size_t answers = count_ones(answer);
  if (answers == 0) throw ShapeError("gamma: episode has no answer steps");
  const double ratio = static_cast<double>(sampled_story) / static_cast<double>(answers);
  return ratio >= 1.0 ? ratio : 1.0;
}

Tensor total_loss(const Tensor& task, const Tensor& mr, double gamma) {
  return add(scale(task, gamma), mr);
}

}  // namespace dam
