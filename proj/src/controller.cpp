// SPDX-License-Identifier: Apache-2.0
#include "dam/controller.hpp"

#include <cmath>
#include <sstream>

#include "dam/error.hpp"

namespace dam {

std::size_t ModelConfig::interface_width() const {
  return blocks * (word * read_heads + 3 * word + 3 * read_heads + 3);
}

std::size_t ModelConfig::block_width() const {
  return word * read_heads + 3 * word + 2 * read_heads + 3;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(blocks, "blocks (K)");
  positive(addresses, "addresses (A)");
  positive(word, "word (L)");
  positive(read_heads, "read_heads (R)");
  positive(hidden, "hidden (d_h)");
  positive(input, "input (d_i)");
  positive(output, "output (d_o)");
  if (hidden < 2) throw ConfigError("hidden (d_h) must be >= 2 for layer normalization");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  if (!(reproduce >= 0 && reproduce <= 1)) throw ConfigError("reproduce probability must be in [0, 1]");
  if (mlp_layers > 0) positive(mlp_width, "mlp_width");
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "K=" << blocks << " A=" << addresses << " L=" << word << " R=" << read_heads
     << " d_h=" << hidden << " d_i=" << input << " d_o=" << output << " mlp=" << mlp_layers << 'x'
     << mlp_width << " recon=" << reconstruction << " vocab=" << vocab;
  return os.str();
}

ControllerState ControllerState::zeros(std::size_t width) {
  return {Tensor::zeros({width}), Tensor::zeros({width})};
}

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

ControllerParams ControllerParams::init(const ModelConfig& config, Rng& rng) {
  const std::size_t h = config.hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  const std::size_t in = config.lstm_input_width();

  std::vector<double> bias(4 * h, 0.0);
  for (std::size_t i = h; i < 2 * h; ++i) bias[i] = 1.0;  // forget gate

  ControllerParams p;
  p.lstm_weight = Tensor::parameter({4 * h, in}, uniform_values(4 * h * in, bound, rng));
  p.lstm_bias = Tensor::parameter({4 * h}, std::move(bias));
  p.norm_gain = Tensor::parameter({h}, std::vector<double>(h, 1.0));
  p.norm_bias = Tensor::parameter({h}, std::vector<double>(h, 0.0));
  const std::size_t iw = config.interface_width();
  p.interface_weight = Tensor::parameter({iw, h}, uniform_values(iw * h, bound, rng));
  return p;
}

ControllerOutput controller_step(const Tensor& x, const Tensor& read_prev,
                                 const ControllerState& state, const ControllerParams& params) {
  const std::size_t h = state.hidden.size();
  if (params.lstm_weight.rank() != 2 || params.lstm_weight.dim(0) != 4 * h) {
    throw ShapeError("controller_step: LSTM weight " + shape_string(params.lstm_weight.shape()) +
                     " does not match hidden width " + std::to_string(h));
  }
  const Tensor joined = concat({x, read_prev, state.hidden});
  const Tensor pre = add(matmul(params.lstm_weight, joined), params.lstm_bias);

  const Tensor in_gate = sigmoid(slice(pre, 0, h));
  const Tensor forget_gate = sigmoid(slice(pre, h, h));
  const Tensor candidate = tanh(slice(pre, 2 * h, h));
  const Tensor out_gate = sigmoid(slice(pre, 3 * h, h));

  ControllerOutput out;
  out.state.cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
  out.state.hidden = mul(out_gate, tanh(out.state.cell));
  out.normalized = layer_norm(out.state.hidden, params.norm_gain, params.norm_bias);
  return out;
}

Tensor emit_interface(const Tensor& normalized, const Tensor& interface_weight) {
  return matmul(interface_weight, normalized);
}

Tensor AttentiveGateLogits::for_head(std::size_t head) const {
  std::vector<Tensor> column;
  column.reserve(blocks);
  for (std::size_t k = 0; k < blocks; ++k) column.push_back(slice(logits, k * heads + head, 1));
  return concat(column);
}

std::vector<Tensor> split_interface(const Tensor& interface, const ModelConfig& config) {
  if (interface.size() != config.interface_width()) {
    throw ShapeError("parse_interface: width " + std::to_string(interface.size()) + ", expected " +
                     std::to_string(config.interface_width()));
  }
  const std::size_t L = config.word, R = config.read_heads;
  // k_w, β_w, e, v, f^{1..R}, g_a, g_w, k_r^{1..R}, β_r^{1..R}
  const std::size_t widths[] = {L, 1, L, L, R, 1, 1, R * L, R};
  std::vector<Tensor> raw;
  raw.reserve(config.blocks * 9 + 1);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < config.blocks; ++k) {
    for (std::size_t w : widths) {
      raw.push_back(slice(interface, offset, w));
      offset += w;
    }
  }
  raw.push_back(slice(interface, offset, config.gate_width()));
  return raw;
}

ParsedInterface parse_interface(const Tensor& interface, const ModelConfig& config) {
  const auto raw = split_interface(interface, config);
  const std::size_t L = config.word, R = config.read_heads;
  ParsedInterface parsed;
  parsed.blocks.reserve(config.blocks);
  for (std::size_t k = 0; k < config.blocks; ++k) {
    const Tensor* s = raw.data() + 9 * k;
    BlockOperators ops;
    ops.write_key = s[0];
    ops.write_strength = oneplus(s[1]);
    ops.erase = sigmoid(s[2]);
    ops.write_values = s[3];
    ops.free_gates = sigmoid(s[4]);
    ops.alloc_gate = sigmoid(s[5]);
    ops.write_gate = sigmoid(s[6]);
    for (std::size_t i = 0; i < R; ++i) ops.read_keys.push_back(slice(s[7], i * L, L));
    ops.read_strengths = oneplus(s[8]);
    parsed.blocks.push_back(std::move(ops));
  }
  parsed.gates = {raw.back(), config.blocks, R};
  return parsed;
}

std::size_t OutputHead::output_width() const {
  return mlp_weights.empty() ? weight.dim(0) : mlp_weights.back().dim(0);
}

OutputHead OutputHead::init(std::size_t in, std::size_t out, std::size_t mlp_layers,
                            std::size_t mlp_width, Rng& rng) {
  auto linear = [&rng](std::size_t fan_in, std::size_t fan_out, Tensor& w, Tensor& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    w = Tensor::parameter({fan_out, fan_in}, uniform_values(fan_out * fan_in, bound, rng));
    b = Tensor::parameter({fan_out}, std::vector<double>(fan_out, 0.0));
  };
  OutputHead head;
  linear(in, mlp_layers > 0 ? mlp_width : out, head.weight, head.bias);
  for (std::size_t l = 0; l < mlp_layers; ++l) {
    Tensor w, b;
    linear(mlp_width, l + 1 == mlp_layers ? out : mlp_width, w, b);
    head.mlp_weights.push_back(std::move(w));
    head.mlp_biases.push_back(std::move(b));
  }
  return head;
}

Tensor output_head(const Tensor& dropped_hidden, const std::vector<Tensor>& read_out,
                   const OutputHead& head) {
  std::vector<Tensor> parts;
  parts.reserve(read_out.size() + 1);
  parts.push_back(dropped_hidden);
  parts.insert(parts.end(), read_out.begin(), read_out.end());
  Tensor y = add(matmul(head.weight, concat(parts)), head.bias);
  for (std::size_t l = 0; l < head.mlp_weights.size(); ++l) {
    y = add(matmul(head.mlp_weights[l], relu(y)), head.mlp_biases[l]);
  }
  return y;
}

}  // namespace dam
