// SPDX-License-Identifier: Apache-2.0
#include "dam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dam/error.hpp"
#include "dam/memory.hpp"
#include "dam/model.hpp"
#include "dam/trainer.hpp"

namespace dam {

namespace {

using Leaves = std::vector<Tensor>;

Tensor leaf(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Magnitudes in [lo, hi] with random sign; keeps kinks (relu at 0) out of
// the probe's reach.
Tensor signed_leaf(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor flatten_all(const std::vector<Tensor>& parts) { return concat(std::span<const Tensor>(parts)); }

double project(const Tensor& out, const std::vector<double>& w) {
  const auto v = out.values();
  double s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
  return s;
}

}  // namespace

GradcheckResult check_gradient(const std::string& name, const std::function<Tensor(const Leaves&)>& fn,
                               Leaves leaves, const GradcheckOptions& options) {
  if (active_graph() != nullptr) throw GraphError("gradcheck must start without an active graph");
  GradcheckResult result;
  result.name = name;

  std::vector<double> w;
  {
    const Tensor probe = fn(leaves);
    Rng rng(mix_seed(options.seed, probe.size()));
    w.resize(probe.size());
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
  }

  for (auto& l : leaves) l.zero_grad();
  {
    Graph graph;
    GraphScope scope(graph);
    const Tensor out = fn(leaves);
    const Tensor loss = dot(reshape(out, {out.size()}), Tensor::vector(w));
    graph.backward(loss);
  }

  const double h = options.step;
  for (auto& l : leaves) {
    const std::vector<double> analytic = l.grad();
    auto values = l.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + h;
      const double plus = project(fn(leaves), w);
      values[j] = saved - h;
      const double minus = project(fn(leaves), w);
      values[j] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.probes;
    }
  }
  return result;
}

std::vector<GradcheckResult> gradcheck_ops(const GradcheckOptions& o) {
  std::vector<GradcheckResult> out;
  Rng rng(o.seed);
  auto run = [&](const std::string& name, const std::function<Tensor(const Leaves&)>& fn, Leaves leaves) {
    out.push_back(check_gradient(name, fn, std::move(leaves), o));
  };
  auto v = [&](std::size_t n, double lo = -1.0, double hi = 1.0) { return leaf({n}, lo, hi, rng); };
  auto m = [&](std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) { return leaf({r, c}, lo, hi, rng); };

  // elementwise
  run("add", [](const Leaves& x) { return add(x[0], x[1]); }, {v(5), v(5)});
  run("add_broadcast", [](const Leaves& x) { return add(x[0], x[1]); }, {v(5), v(1)});
  run("sub", [](const Leaves& x) { return sub(x[0], x[1]); }, {v(5), v(5)});
  run("mul", [](const Leaves& x) { return mul(x[0], x[1]); }, {v(5), v(5)});
  run("mul_broadcast", [](const Leaves& x) { return mul(x[0], x[1]); }, {v(1), v(5)});
  run("div", [](const Leaves& x) { return div(x[0], x[1]); }, {v(5), v(5, 0.5, 2.0)});
  run("neg", [](const Leaves& x) { return neg(x[0]); }, {v(5)});
  run("sigmoid", [](const Leaves& x) { return sigmoid(x[0]); }, {v(5, -3, 3)});
  run("tanh", [](const Leaves& x) { return tanh(x[0]); }, {v(5, -2, 2)});
  run("exp", [](const Leaves& x) { return exp(x[0]); }, {v(5)});
  run("log", [](const Leaves& x) { return log(x[0]); }, {v(5, 0.2, 3.0)});
  run("relu", [](const Leaves& x) { return relu(x[0]); }, {signed_leaf({6}, 0.1, 1.0, rng)});
  run("scale", [](const Leaves& x) { return scale(x[0], -1.7); }, {v(5)});
  run("add_scalar", [](const Leaves& x) { return add_scalar(x[0], 0.3); }, {v(5)});
  run("one_minus", [](const Leaves& x) { return one_minus(x[0]); }, {v(5)});
  run("softplus", [](const Leaves& x) { return softplus(x[0]); }, {v(5, -4, 4)});
  run("oneplus", [](const Leaves& x) { return oneplus(x[0]); }, {v(5, -4, 4)});

  // structure
  run("reshape", [](const Leaves& x) { return reshape(x[0], {3, 2}); }, {v(6)});
  run("slice", [](const Leaves& x) { return slice(x[0], 2, 3); }, {m(2, 4)});
  run("concat", [](const Leaves& x) { return concat({x[0], x[1], x[2]}); }, {v(2), m(2, 2), v(3)});
  run("stack_rows", [](const Leaves& x) { return stack_rows(std::span<const Tensor>(x)); }, {v(3), v(3), v(3)});
  run("row", [](const Leaves& x) { return row(x[0], 1); }, {m(3, 4)});
  run("transpose", [](const Leaves& x) { return transpose(x[0]); }, {m(2, 3)});

  // linear algebra
  run("matmul_mm", [](const Leaves& x) { return matmul(x[0], x[1]); }, {m(3, 4), m(4, 2)});
  run("matmul_mv", [](const Leaves& x) { return matmul(x[0], x[1]); }, {m(3, 4), v(4)});
  run("matmul_vm", [](const Leaves& x) { return matmul(x[0], x[1]); }, {v(3), m(3, 4)});
  run("outer", [](const Leaves& x) { return outer(x[0], x[1]); }, {v(3), v(4)});
  run("sum", [](const Leaves& x) { return sum(x[0]); }, {m(2, 3)});
  run("dot", [](const Leaves& x) { return dot(x[0], x[1]); }, {v(4), v(4)});

  // neural
  run("softmax", [](const Leaves& x) { return softmax(x[0]); }, {v(6, -3, 3)});
  run("cosine_similarity", [](const Leaves& x) { return cosine_similarity(x[0], x[1]); }, {v(5), v(5)});
  run("cosine_similarity_rows", [](const Leaves& x) { return cosine_similarity_rows(x[0], x[1]); },
      {m(4, 5), v(5)});
  run("layer_norm", [](const Leaves& x) { return layer_norm(x[0], x[1], x[2]); }, {v(6, -2, 2), v(6, 0.5, 1.5), v(6)});
  run("dropout",
      [](const Leaves& x) {
        Rng r(11);
        return dropout(x[0], 0.3, true, r);
      },
      {v(8)});

  // losses
  {
    const std::vector<double> bits = {1, 0, 0, 1, 1};
    run("sigmoid_cross_entropy",
        [bits](const Leaves& x) { return sigmoid_cross_entropy(x[0], Tensor::vector(bits)); }, {v(5, -3, 3)});
  }
  run("softmax_cross_entropy", [](const Leaves& x) { return softmax_cross_entropy(x[0], 2); }, {v(6, -2, 2)});
  {
    const std::vector<double> target = {0.3, -0.2, 0.9, 0.0};
    run("squared_error", [target](const Leaves& x) { return squared_error(x[0], Tensor::vector(target)); },
        {v(4)});
  }

  // memory addressing
  constexpr std::size_t A = 4, L = 5, R = 2;
  run("content_address", [](const Leaves& x) { return content_address(x[0], x[1], x[2]); },
      {m(A, L), v(L), v(1, 1.0, 3.0)});
  run("retention", [](const Leaves& x) { return retention(x[0], {x[1], x[2]}); },
      {v(R, 0.1, 0.9), v(A, 0.0, 0.5), v(A, 0.0, 0.5)});
  run("update_usage", [](const Leaves& x) { return update_usage(x[0], x[1], x[2]); },
      {v(A, 0.0, 1.0), v(A, 0.0, 0.25), v(A, 0.2, 1.0)});
  run("allocation", [](const Leaves& x) { return allocation(x[0]).weighting; },
      {Tensor::parameter({A}, {0.62, 0.11, 0.83, 0.37})});
  run("write_weighting", [](const Leaves& x) { return write_weighting(x[0], x[1], x[2], x[3]); },
      {v(1, 0.1, 0.9), v(1, 0.1, 0.9), v(A, 0.0, 0.3), v(A, 0.0, 0.3)});
  run("write_memory", [](const Leaves& x) { return write_memory(x[0], x[1], x[2], x[3]); },
      {m(A, L), v(A, 0.0, 0.3), v(L, 0.1, 0.9), v(L)});
  run("read_block",
      [](const Leaves& x) {
        const BlockRead r = read_block(x[0], {x[1], x[2]}, x[3]);
        return concat({r.read_out[0], r.read_out[1], r.weightings[0], r.weightings[1]});
      },
      {m(A, L), v(L), v(L), v(R, 1.0, 3.0)});
  run("attentive_read",
      [](const Leaves& x) {
        const AttentiveGateLogits g{x[4], 2, R};
        const AttentiveRead r = attentive_read({{x[0], x[1]}, {x[2], x[3]}}, g);
        return concat({r.read_out[0], r.read_out[1]});
      },
      {v(L), v(L), v(L), v(L), v(2 * R, -2, 2)});

  // controller and heads
  ModelConfig cfg = gradcheck_reference_config();
  {
    Rng init(o.seed + 1);
    const ControllerParams p = ControllerParams::init(cfg, init);
    run("controller_step",
        [](const Leaves& x) {
          const ControllerParams cp{x[4], x[5], x[6], x[7], x[8]};
          const ControllerOutput c = controller_step(x[0], x[1], ControllerState{x[2], x[3]}, cp);
          return concat({c.normalized, c.state.hidden, c.state.cell});
        },
        {v(cfg.input), v(cfg.read_heads * cfg.word), v(cfg.hidden), v(cfg.hidden), p.lstm_weight, p.lstm_bias,
         p.norm_gain, p.norm_bias, p.interface_weight});
  }
  run("parse_interface",
      [cfg](const Leaves& x) {
        const ParsedInterface pi = parse_interface(x[0], cfg);
        std::vector<Tensor> parts;
        for (const auto& b : pi.blocks) {
          for (const Tensor& t : {b.write_key, b.write_strength, b.erase, b.write_values, b.free_gates,
                                  b.alloc_gate, b.write_gate, b.read_strengths}) {
            parts.push_back(t);
          }
          for (const auto& k : b.read_keys) parts.push_back(k);
        }
        parts.push_back(pi.gates.logits);
        return flatten_all(parts);
      },
      {v(cfg.interface_width(), -2, 2)});
  run("step_block",
      [cfg](const Leaves& x) {
        const ParsedInterface pi = parse_interface(x[0], cfg);
        BlockState prev{x[1], x[2], x[3], {x[4], x[5]}};
        const BlockStep s = step_block(prev, pi.blocks[0]);
        return concat({s.state.memory, s.state.usage, s.state.write_weighting, s.state.read_weightings[0],
                       s.state.read_weightings[1], s.read_out[0], s.read_out[1]});
      },
      {v(cfg.interface_width(), -2, 2), m(A, L), Tensor::parameter({A}, {0.5, 0.12, 0.71, 0.33}),
       v(A, 0.0, 0.25), v(A, 0.0, 0.25), v(A, 0.0, 0.25)});
  {
    Rng init(o.seed + 2);
    const OutputHead head = OutputHead::init(cfg.hidden + R * L, 3, 2, 7, init);
    run("output_head",
        [](const Leaves& x) {
          OutputHead hd{x[3], x[4], {x[5], x[7]}, {x[6], x[8]}};
          return output_head(x[0], {x[1], x[2]}, hd);
        },
        {signed_leaf({cfg.hidden}, 0.1, 1.0, rng), v(L), v(L), head.weight, head.bias, head.mlp_weights[0],
         head.mlp_biases[0], head.mlp_weights[1], head.mlp_biases[1]});
  }
  return out;
}

ModelConfig gradcheck_reference_config() {
  ModelConfig c;
  c.blocks = 2;
  c.addresses = 4;
  c.word = 5;
  c.read_heads = 2;
  c.hidden = 16;
  c.input = 6;
  c.output = 6;
  c.reproduce = 0.5;
  c.dropout = 0.0;
  return c;
}

GradcheckResult gradcheck_model(const ModelConfig& config, std::size_t steps, const GradcheckOptions& o) {
  config.validate();
  if (steps < 2) throw ConfigError("gradcheck_model needs at least two steps");
  // A small copy-shaped episode: random story bits with an input flag, then
  // answer steps that must reproduce them.
  Rng rng(o.seed);
  const std::size_t d_i = config.input, d_o = config.output;
  const std::size_t story = steps / 2;
  Episode ep = Episode::blank(steps, d_i, d_o);
  for (std::size_t t = 0; t < story; ++t) {
    for (std::size_t c = 0; c + 1 < d_i; ++c) ep.in(t, c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    ep.in(t, d_i - 1) = 1.0;
    ep.mask.story[t] = 1;
  }
  for (std::size_t t = story; t < steps; ++t) {
    for (std::size_t c = 0; c < d_o; ++c) ep.out(t, c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    ep.mask.answer[t] = 1;
  }
  // Keep sampling until at least one step is refreshed so the MRL path is live.
  do {
    ep.mask.sampled = sample_mask(ep.mask.story, config.reproduce > 0 ? config.reproduce : 0.5, rng);
  } while (ep.mask.sampled_count() == 0);

  TaskTraits traits;
  traits.input_width = d_i;
  traits.output_width = d_o;
  traits.metric_channels = d_o;
  if (config.reconstruction > 0) traits.reconstruction_width = config.reconstruction;

  const DamParameters params = DamParameters::init(config, mix_seed(o.seed, 99));
  const auto named = params.named();
  Leaves leaves;
  for (const auto& p : named) leaves.push_back(p.tensor);

  auto fn = [&](const Leaves&) {
    Rng dropout_rng(3);
    return forward_episode(ep, params, config, traits, true, true, dropout_rng).loss;
  };
  return check_gradient("dam_model_" + std::to_string(steps) + "_steps", fn, leaves, o);
}

}  // namespace dam
