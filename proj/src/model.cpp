// SPDX-License-Identifier: Apache-2.0
#include "dam/model.hpp"

#include <algorithm>

#include "dam/error.hpp"

namespace dam {

namespace {

void append_head(std::vector<NamedTensor>& out, const std::string& prefix, const OutputHead& head) {
  out.push_back({prefix + "/weight", head.weight});
  out.push_back({prefix + "/bias", head.bias});
  for (std::size_t l = 0; l < head.mlp_weights.size(); ++l) {
    out.push_back({prefix + "/mlp" + std::to_string(l) + "/weight", head.mlp_weights[l]});
    out.push_back({prefix + "/mlp" + std::to_string(l) + "/bias", head.mlp_biases[l]});
  }
}

Tensor fresh(const Tensor& t) {
  return Tensor::parameter(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

OutputHead clone_head(const OutputHead& h) {
  OutputHead c;
  c.weight = fresh(h.weight);
  c.bias = fresh(h.bias);
  for (const auto& w : h.mlp_weights) c.mlp_weights.push_back(fresh(w));
  for (const auto& b : h.mlp_biases) c.mlp_biases.push_back(fresh(b));
  return c;
}

}  // namespace

DamParameters DamParameters::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  DamParameters p;
  p.controller = ControllerParams::init(config, rng);
  const std::size_t head_in = config.hidden + config.read_heads * config.word;
  p.task_head = OutputHead::init(head_in, config.output, config.mlp_layers, config.mlp_width, rng);
  if (config.reconstruction > 0) {
    p.reconstruction_head = OutputHead::init(head_in, config.reconstruction, 0, 0, rng);
  }
  if (config.vocab > 0) {
    p.embedding = Tensor::parameter({config.vocab, config.input},
                                    uniform_values(config.vocab * config.input, 1.0, rng));
  }
  return p;
}

std::vector<NamedTensor> DamParameters::named() const {
  std::vector<NamedTensor> out;
  out.push_back({"controller/lstm/weight", controller.lstm_weight});
  out.push_back({"controller/lstm/bias", controller.lstm_bias});
  out.push_back({"controller/norm/gain", controller.norm_gain});
  out.push_back({"controller/norm/bias", controller.norm_bias});
  out.push_back({"controller/interface/weight", controller.interface_weight});
  append_head(out, "head/task", task_head);
  if (reconstruction_head) append_head(out, "head/reconstruction", *reconstruction_head);
  if (embedding) out.push_back({"embedding", *embedding});
  return out;
}

DamParameters DamParameters::clone() const {
  DamParameters c;
  c.controller.lstm_weight = fresh(controller.lstm_weight);
  c.controller.lstm_bias = fresh(controller.lstm_bias);
  c.controller.norm_gain = fresh(controller.norm_gain);
  c.controller.norm_bias = fresh(controller.norm_bias);
  c.controller.interface_weight = fresh(controller.interface_weight);
  c.task_head = clone_head(task_head);
  if (reconstruction_head) c.reconstruction_head = clone_head(*reconstruction_head);
  if (embedding) c.embedding = fresh(*embedding);
  return c;
}

std::size_t DamParameters::count() const {
  std::size_t n = 0;
  for (const auto& p : named()) n += p.tensor.size();
  return n;
}

RecurrentState RecurrentState::initial(const ModelConfig& config) {
  return {ControllerState::zeros(config.hidden), MemoryState::initial(config)};
}

Tensor embed_input(std::span<const double> input, const ModelConfig& config,
                   const DamParameters& params) {
  if (config.vocab > 0) {
    if (!params.embedding) throw ConfigError("token input without an embedding table");
    if (input.empty() || input[0] < 0 || input[0] >= static_cast<double>(config.vocab)) {
      throw ShapeError("token id out of vocabulary range");
    }
    return row(*params.embedding, static_cast<std::size_t>(input[0]));
  }
  if (input.size() != config.input) {
    throw ShapeError("input width " + std::to_string(input.size()) + ", expected " +
                     std::to_string(config.input));
  }
  return Tensor::vector(std::vector<double>(input.begin(), input.end()));
}

StepResult dam_step(const Tensor& x, const RecurrentState& state, const DamParameters& params,
                    const ModelConfig& config, bool training, Rng& dropout_rng,
                    bool reconstruct) {
  if (x.size() != config.input) {
    throw ShapeError("dam_step: input width " + std::to_string(x.size()) + ", expected " +
                     std::to_string(config.input));
  }
  const ControllerOutput ctrl =
      controller_step(x, concat(state.memory.read_out), state.controller, params.controller);
  const ParsedInterface ops =
      parse_interface(emit_interface(ctrl.normalized, params.controller.interface_weight), config);

  StepResult result;
  result.state.controller = ctrl.state;
  std::vector<std::vector<Tensor>> per_block;
  per_block.reserve(config.blocks);
  for (std::size_t k = 0; k < config.blocks; ++k) {
    BlockStep step = step_block(state.memory.blocks[k], ops.blocks[k]);
    result.state.memory.blocks.push_back(std::move(step.state));
    per_block.push_back(std::move(step.read_out));
  }
  AttentiveRead read = attentive_read(per_block, ops.gates);
  result.state.memory.read_out = read.read_out;
  for (const auto& g : read.gates) {
    result.diagnostics.gates.emplace_back(g.values().begin(), g.values().end());
  }

  const Tensor dropped = dropout(ctrl.normalized, config.dropout, training, dropout_rng);
  result.output = output_head(dropped, read.read_out, params.task_head);
  if (reconstruct) {
    result.reconstruction = params.reconstruction_head
                                ? output_head(dropped, read.read_out, *params.reconstruction_head)
                                : result.output;
  }
  return result;
}

}  // namespace dam
