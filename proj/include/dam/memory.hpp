// SPDX-License-Identifier: Apache-2.0
//
// Content-addressable memory blocks with usage-based allocation. Each block
// is addressed and updated on its own; read-outs of all blocks are merged
// per read head by a softmax over the block axis.
#pragma once

#include <cstddef>
#include <vector>

#include "dam/controller.hpp"
#include "dam/tensor.hpp"

namespace dam {

/// Value every memory cell starts from; non-zero so cosine similarity is
/// defined on the first step.
inline constexpr double kInitialMemoryValue = 1e-6;

struct BlockState {
  Tensor memory;                         // M   [A, L]
  Tensor usage;                          // u   [A]
  Tensor write_weighting;                // w_w [A], previous step
  std::vector<Tensor> read_weightings;   // R x [A], previous step
};

struct MemoryState {
  std::vector<BlockState> blocks;
  std::vector<Tensor> read_out;  // R x [L], merged across blocks

  static MemoryState initial(const ModelConfig& config);
};

/// Per-block intermediates of one write.
struct AddressingScratch {
  Tensor content_weighting;           // c_w
  Tensor allocation;                  // a
  Tensor retention;                   // ψ
  std::vector<std::size_t> free_list; // φ, least used first
};

/// softmax_i(D(key, M[i,:]) · strength)
Tensor content_address(const Tensor& memory, const Tensor& key, const Tensor& strength);

/// ψ = Π_i (1 - f_i · w_r_prev_i)
Tensor retention(const Tensor& free_gates, const std::vector<Tensor>& prev_read_weightings);

/// u = (u_prev + w_w_prev - u_prev∘w_w_prev) ∘ ψ
Tensor update_usage(const Tensor& prev_usage, const Tensor& prev_write_weighting,
                    const Tensor& retention);

struct Allocation {
  Tensor weighting;
  std::vector<std::size_t> free_list;
};

/// a[φ_j] = (1 - u[φ_j]) · Π_{i<j} u[φ_i], φ sorting usage ascending (ties by
/// index). Gradients flow through the usage values, not the permutation.
Allocation allocation(const Tensor& usage);

/// w_w = g_w · (g_a · a + (1 - g_a) · c_w)
Tensor write_weighting(const Tensor& write_gate, const Tensor& alloc_gate, const Tensor& allocation,
                       const Tensor& content_weighting);

/// M' = M ∘ (E - w_w eᵀ) + w_w vᵀ
Tensor write_memory(const Tensor& memory, const Tensor& write_weighting, const Tensor& erase,
                    const Tensor& values);

struct BlockRead {
  std::vector<Tensor> weightings;  // R x [A]
  std::vector<Tensor> read_out;    // R x [L]
};

BlockRead read_block(const Tensor& memory, const std::vector<Tensor>& read_keys,
                     const Tensor& read_strengths);

struct AttentiveRead {
  std::vector<Tensor> read_out;  // R x [L]
  std::vector<Tensor> gates;     // R x [K], softmax over blocks
};

/// r^i = Σ_k softmax_k(logits[:, i])[k] · per_block[k][i]
AttentiveRead attentive_read(const std::vector<std::vector<Tensor>>& per_block,
                             const AttentiveGateLogits& gate_logits);

struct BlockStep {
  BlockState state;
  AddressingScratch scratch;
  std::vector<Tensor> read_out;  // this block's preliminary read-outs
};

/// Full write-then-read update of one block.
BlockStep step_block(const BlockState& prev, const BlockOperators& ops);

}  // namespace dam
