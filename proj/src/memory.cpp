// SPDX-License-Identifier: Apache-2.0
#include "dam/memory.hpp"

#include <algorithm>
#include <numeric>

#include "dam/error.hpp"

namespace dam {

MemoryState MemoryState::initial(const ModelConfig& config) {
  MemoryState state;
  const std::size_t A = config.addresses, L = config.word;
  for (std::size_t k = 0; k < config.blocks; ++k) {
    BlockState b;
    b.memory = Tensor::full({A, L}, kInitialMemoryValue);
    b.usage = Tensor::zeros({A});
    b.write_weighting = Tensor::zeros({A});
    b.read_weightings.assign(config.read_heads, Tensor::zeros({A}));
    state.blocks.push_back(std::move(b));
  }
  state.read_out.assign(config.read_heads, Tensor::zeros({L}));
  return state;
}

Tensor content_address(const Tensor& memory, const Tensor& key, const Tensor& strength) {
  return softmax(mul(cosine_similarity_rows(memory, key), strength));
}

Tensor retention(const Tensor& free_gates, const std::vector<Tensor>& prev_read_weightings) {
  if (free_gates.size() != prev_read_weightings.size()) {
    throw ShapeError("retention: " + std::to_string(free_gates.size()) + " free gates for " +
                     std::to_string(prev_read_weightings.size()) + " read weightings");
  }
  Tensor psi;
  for (std::size_t i = 0; i < prev_read_weightings.size(); ++i) {
    Tensor term = one_minus(mul(slice(free_gates, i, 1), prev_read_weightings[i]));
    psi = psi.defined() ? mul(psi, term) : term;
  }
  return psi;
}

Tensor update_usage(const Tensor& prev_usage, const Tensor& prev_write_weighting,
                    const Tensor& retention) {
  const Tensor grown = sub(add(prev_usage, prev_write_weighting), mul(prev_usage, prev_write_weighting));
  return mul(grown, retention);
}

Allocation allocation(const Tensor& usage) {
  if (usage.rank() != 1) throw ShapeError("allocation: usage must be a vector");
  const std::size_t n = usage.size();
  const auto u = usage.values();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&u](std::size_t a, std::size_t b) { return u[a] < u[b]; });

  // prefix[j] = Π_{i<j} u[φ_i]
  auto prefix = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  double running = 1.0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t idx = order[j];
    (*prefix)[j] = running;
    out[idx] = (1.0 - u[idx]) * running;
    running *= u[idx];
  }
  Allocation result;
  result.free_list = order;
  result.weighting = custom_op(
      "allocation", {n}, std::move(out), {usage},
      [usage, order, prefix](std::span<const double> g, std::span<const std::span<double>> gi) {
        const auto u = usage.values();
        const std::size_t n = order.size();
        // Reverse sweep over the sorted order: d prefix_j flows back into
        // prefix_{j-1} and u[φ_{j-1}].
        double d_prefix = 0;
        for (std::size_t j = n; j-- > 0;) {
          const std::size_t idx = order[j];
          d_prefix += g[idx] * (1.0 - u[idx]);
          gi[0][idx] -= g[idx] * (*prefix)[j];
          if (j > 0) {
            const std::size_t prev = order[j - 1];
            gi[0][prev] += d_prefix * (*prefix)[j - 1];
            d_prefix *= u[prev];
          }
        }
      });
  return result;
}

Tensor write_weighting(const Tensor& write_gate, const Tensor& alloc_gate, const Tensor& allocation,
                       const Tensor& content_weighting) {
  const Tensor mixed = add(mul(alloc_gate, allocation), mul(one_minus(alloc_gate), content_weighting));
  return mul(write_gate, mixed);
}

Tensor write_memory(const Tensor& memory, const Tensor& write_weighting, const Tensor& erase,
                    const Tensor& values) {
  const Tensor keep = one_minus(outer(write_weighting, erase));
  return add(mul(memory, keep), outer(write_weighting, values));
}

BlockRead read_block(const Tensor& memory, const std::vector<Tensor>& read_keys,
                     const Tensor& read_strengths) {
  BlockRead read;
  for (std::size_t i = 0; i < read_keys.size(); ++i) {
    Tensor w = content_address(memory, read_keys[i], slice(read_strengths, i, 1));
    read.read_out.push_back(matmul(w, memory));  // Mᵀ w
    read.weightings.push_back(std::move(w));
  }
  return read;
}

AttentiveRead attentive_read(const std::vector<std::vector<Tensor>>& per_block,
                             const AttentiveGateLogits& gate_logits) {
  const std::size_t K = per_block.size();
  if (K != gate_logits.blocks) throw ShapeError("attentive_read: block count mismatch");
  AttentiveRead out;
  for (std::size_t i = 0; i < gate_logits.heads; ++i) {
    Tensor g = softmax(gate_logits.for_head(i));
    Tensor r;
    for (std::size_t k = 0; k < K; ++k) {
      Tensor term = mul(slice(g, k, 1), per_block[k].at(i));
      r = r.defined() ? add(r, term) : term;
    }
    out.read_out.push_back(std::move(r));
    out.gates.push_back(std::move(g));
  }
  return out;
}

BlockStep step_block(const BlockState& prev, const BlockOperators& ops) {
  BlockStep step;
  step.scratch.retention = retention(ops.free_gates, prev.read_weightings);
  const Tensor usage = update_usage(prev.usage, prev.write_weighting, step.scratch.retention);
  Allocation alloc = allocation(usage);
  step.scratch.allocation = alloc.weighting;
  step.scratch.free_list = std::move(alloc.free_list);
  step.scratch.content_weighting = content_address(prev.memory, ops.write_key, ops.write_strength);

  const Tensor ww = write_weighting(ops.write_gate, ops.alloc_gate, step.scratch.allocation,
                                    step.scratch.content_weighting);
  const Tensor memory = write_memory(prev.memory, ww, ops.erase, ops.write_values);

  BlockRead read = read_block(memory, ops.read_keys, ops.read_strengths);
  step.state.memory = memory;
  step.state.usage = usage;
  step.state.write_weighting = ww;
  step.state.read_weightings = std::move(read.weightings);
  step.read_out = std::move(read.read_out);
  return step;
}

}  // namespace dam
