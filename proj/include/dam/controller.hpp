// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dam/rng.hpp"
#include "dam/tensor.hpp"

namespace dam {

/// Dimensional hyperparameters of a DAM model.
struct ModelConfig {
  std::size_t blocks = 2;         // K
  std::size_t addresses = 16;     // A
  std::size_t word = 16;          // L
  std::size_t read_heads = 1;     // R
  std::size_t hidden = 64;        // d_h
  std::size_t input = 6;          // d_i
  std::size_t output = 6;         // d_o
  double dropout = 0.0;           // p_dp
  double reproduce = 0.0;         // p, MRL reproducing probability

  // Optional ReLU MLP after the output projection (0 = plain linear head).
  std::size_t mlp_layers = 0;
  std::size_t mlp_width = 256;
  // Width of a dedicated MRL reconstruction head; 0 reuses the task head.
  std::size_t reconstruction = 0;
  // Token vocabulary; >0 means inputs are token ids embedded into d_i.
  std::size_t vocab = 0;

  /// K·(L·R + 3L + 3R + 3)
  std::size_t interface_width() const;
  /// L·R + 3L + 2R + 3
  std::size_t block_width() const;
  /// K·R attentive-gate logits trailing the block slices.
  std::size_t gate_width() const { return blocks * read_heads; }
  /// d_i + R·L + d_h
  std::size_t lstm_input_width() const { return input + read_heads * word + hidden; }

  void validate() const;
  /// Stable one-line rendering; its hash guards checkpoint compatibility.
  std::string canonical() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ControllerState {
  Tensor hidden;  // h
  Tensor cell;    // c

  static ControllerState zeros(std::size_t width);
};

/// Controller weights: single-layer LSTM, layer norm and interface projection.
struct ControllerParams {
  Tensor lstm_weight;       // [4·d_h, d_i + R·L + d_h], gate rows ordered i, f, g, o
  Tensor lstm_bias;         // [4·d_h]
  Tensor norm_gain;         // [d_h]
  Tensor norm_bias;         // [d_h]
  Tensor interface_weight;  // [interface width, d_h]

  static ControllerParams init(const ModelConfig& config, Rng& rng);
};

struct ControllerOutput {
  Tensor normalized;  // layer-normalised hidden state
  ControllerState state;
};

/// One LSTM step on [x; r_prev; h_prev] followed by layer normalization.
ControllerOutput controller_step(const Tensor& x, const Tensor& read_prev,
                                 const ControllerState& state, const ControllerParams& params);

/// ξ = W_ξ · h_norm, laid out as K block slices followed by the K·R gate logits.
Tensor emit_interface(const Tensor& normalized, const Tensor& interface_weight);

/// Activated operators for one memory block.
struct BlockOperators {
  Tensor write_key;               // [L]
  Tensor write_strength;          // [1], >= 1
  Tensor erase;                   // [L], in [0,1]
  Tensor write_values;            // [L]
  Tensor free_gates;              // [R], in [0,1]
  Tensor alloc_gate;              // [1], in [0,1]
  Tensor write_gate;              // [1], in [0,1]
  std::vector<Tensor> read_keys;  // R x [L]
  Tensor read_strengths;          // [R], >= 1
};

/// Raw attentive-gate logits, row-major [K, R]: entry k·R + i is block k, head i.
struct AttentiveGateLogits {
  Tensor logits;
  std::size_t blocks = 0;
  std::size_t heads = 0;

  /// The K logits for read head `head`.
  Tensor for_head(std::size_t head) const;
};

struct ParsedInterface {
  std::vector<BlockOperators> blocks;
  AttentiveGateLogits gates;
};

/// Raw (pre-activation) slices in layout order: nine per block, then the
/// gate logits. Concatenating them reproduces ξ.
std::vector<Tensor> split_interface(const Tensor& interface, const ModelConfig& config);

ParsedInterface parse_interface(const Tensor& interface, const ModelConfig& config);

/// Linear projection, optionally followed by a ReLU MLP.
struct OutputHead {
  Tensor weight;  // [out, d_h + R·L]
  Tensor bias;    // [out]
  std::vector<Tensor> mlp_weights;
  std::vector<Tensor> mlp_biases;

  std::size_t output_width() const;

  /// `out` outputs from `in` inputs; `mlp_layers` hidden ReLU layers of width
  /// `mlp_width` are inserted when non-zero.
  static OutputHead init(std::size_t in, std::size_t out, std::size_t mlp_layers,
                         std::size_t mlp_width, Rng& rng);
};

/// y = head([h_dropped; r_1; ...; r_R]).
Tensor output_head(const Tensor& dropped_hidden, const std::vector<Tensor>& read_out,
                   const OutputHead& head);

/// Row-major uniform(-bound, bound) initial values.
std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng);

}  // namespace dam
