// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dam/controller.hpp"
#include "dam/error.hpp"
#include "support/reference.hpp"

using namespace dam;
using doctest::Approx;

namespace {

ModelConfig config(std::size_t k, std::size_t l, std::size_t r) {
  ModelConfig c;
  c.blocks = k;
  c.word = l;
  c.read_heads = r;
  return c;
}

Tensor random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::vector(std::move(v));
}

}  // namespace

TEST_CASE("interface widths for the published configurations") {
  CHECK(config(1, 36, 1).interface_width() == 150);
  CHECK(config(2, 48, 4).interface_width() == 702);
  CHECK(config(6, 128, 4).interface_width() == 5466);
  CHECK(config(1, 36, 1).block_width() == 149);
  for (std::size_t k : {1, 2, 3, 6})
    for (std::size_t l : {1, 5, 36})
      for (std::size_t r : {1, 2, 4}) {
        const ModelConfig c = config(k, l, r);
        CHECK(c.interface_width() == k * (c.block_width() + r));
      }
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.blocks = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.reproduce = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero controller weights leave the hidden state at zero") {
  ModelConfig c;
  c.hidden = 6;
  ControllerParams p;
  p.lstm_weight = Tensor::zeros({4 * c.hidden, c.lstm_input_width()});
  p.lstm_bias = Tensor::zeros({4 * c.hidden});
  p.norm_gain = Tensor::full({c.hidden}, 1.0);
  p.norm_bias = Tensor::zeros({c.hidden});
  Rng rng(1);
  const auto out = controller_step(random_vector(c.input, rng), Tensor::zeros({c.read_heads * c.word}),
                                   ControllerState::zeros(c.hidden), p);
  for (double v : out.state.hidden.values()) CHECK(v == 0);
  for (double v : out.state.cell.values()) CHECK(v == 0);
}

TEST_CASE("controller matches an independent LSTM") {
  ModelConfig c;
  c.hidden = 9;
  c.input = 4;
  c.word = 3;
  c.read_heads = 2;
  Rng rng(42);
  ControllerParams p = ControllerParams::init(c, rng);
  // Perturb the layer-norm parameters away from their identity init.
  p.norm_gain = random_vector(c.hidden, rng);
  p.norm_bias = random_vector(c.hidden, rng);

  ref::Lstm lstm{ref::values(p.lstm_weight), ref::values(p.lstm_bias), c.hidden, c.lstm_input_width()};
  ControllerState state = ControllerState::zeros(c.hidden);
  ref::Vec h(c.hidden, 0.0), cell(c.hidden, 0.0);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = random_vector(c.input, rng);
    const Tensor r = random_vector(c.read_heads * c.word, rng);
    const auto out = controller_step(x, r, state, p);
    ref::Vec joined = ref::values(x);
    const auto rv = ref::values(r);
    joined.insert(joined.end(), rv.begin(), rv.end());
    joined.insert(joined.end(), h.begin(), h.end());
    std::tie(h, cell) = ref::lstm_step(lstm, joined, h, cell);
    const auto hn = ref::layer_norm(h, ref::values(p.norm_gain), ref::values(p.norm_bias));
    for (std::size_t j = 0; j < c.hidden; ++j) {
      CHECK(std::abs(out.state.hidden[j] - h[j]) < 1e-12);
      CHECK(std::abs(out.state.cell[j] - cell[j]) < 1e-12);
      CHECK(std::abs(out.normalized[j] - hn[j]) < 1e-12);
    }
    state = out.state;
  }
}

TEST_CASE("controller initialisation") {
  ModelConfig c;
  c.hidden = 16;
  Rng rng(2);
  const auto p = ControllerParams::init(c, rng);
  const double bound = 1.0 / 4.0;
  for (double w : p.lstm_weight.values()) CHECK(std::abs(w) <= bound);
  for (double w : p.interface_weight.values()) CHECK(std::abs(w) <= bound);
  for (std::size_t i = 0; i < 4 * c.hidden; ++i) {
    CHECK(p.lstm_bias[i] == ((i >= c.hidden && i < 2 * c.hidden) ? 1.0 : 0.0));
  }
  for (double g : p.norm_gain.values()) CHECK(g == 1.0);
  for (double b : p.norm_bias.values()) CHECK(b == 0.0);
  CHECK(p.interface_weight.shape() == Shape{c.interface_width(), c.hidden});
}

TEST_CASE("emit and parse interface") {
  ModelConfig c = config(2, 5, 3);
  c.hidden = 7;
  Rng rng(3);
  const Tensor w = random_vector(c.interface_width() * c.hidden, rng);
  const Tensor weight = reshape(w, {c.interface_width(), c.hidden});
  const Tensor silent = emit_interface(Tensor::zeros({c.hidden}), weight);
  for (double v : silent.values()) CHECK(v == 0);

  const Tensor xi = random_vector(c.interface_width(), rng, 3.0);
  const auto raw = split_interface(xi, c);
  CHECK(raw.size() == 9 * c.blocks + 1);
  const auto joined = concat(std::span<const Tensor>(raw));
  CHECK(ref::values(joined) == ref::values(xi));
  CHECK_THROWS_AS(split_interface(random_vector(5, rng), c), ShapeError);

  const auto parsed = parse_interface(xi, c);
  for (const auto& b : parsed.blocks) {
    CHECK(b.write_strength.item() >= 1.0);
    for (double v : b.read_strengths.values()) CHECK(v >= 1.0);
    for (const Tensor* gate : {&b.erase, &b.free_gates, &b.alloc_gate, &b.write_gate})
      for (double v : gate->values()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(b.read_keys.size() == c.read_heads);
  }
  // Gate logits are row-major [K, R]; for_head picks a column.
  const auto head1 = parsed.gates.for_head(1);
  CHECK(head1[0] == parsed.gates.logits[1]);
  CHECK(head1[1] == parsed.gates.logits[c.read_heads + 1]);
}

TEST_CASE("all-zero interface activations") {
  const ModelConfig c = config(2, 4, 2);
  const auto parsed = parse_interface(Tensor::zeros({c.interface_width()}), c);
  for (const auto& b : parsed.blocks) {
    CHECK(b.write_strength.item() == Approx(1.6931).epsilon(1e-4));
    for (double v : b.read_strengths.values()) CHECK(v == Approx(1.0 + std::log(2.0)));
    for (double v : b.erase.values()) CHECK(v == 0.5);
    CHECK(b.alloc_gate.item() == 0.5);
    CHECK(b.write_gate.item() == 0.5);
    for (double v : b.free_gates.values()) CHECK(v == 0.5);
  }
}

TEST_CASE("output head") {
  Rng rng(4);
  OutputHead head = OutputHead::init(6, 3, 0, 0, rng);
  head.weight = Tensor::zeros({3, 6});
  const Tensor h = random_vector(2, rng);
  const std::vector<Tensor> r = {random_vector(2, rng), random_vector(2, rng)};
  const Tensor y = output_head(h, r, head);
  for (double v : y.values()) CHECK(v == 0);

  // Selector picking r_1.
  OutputHead select;
  select.weight = Tensor::from({2, 6}, {0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0});
  select.bias = Tensor::zeros({2});
  CHECK(ref::values(output_head(h, r, select)) == ref::values(r[0]));

  const OutputHead mlp = OutputHead::init(6, 3, 2, 5, rng);
  CHECK(mlp.output_width() == 3);
  CHECK(mlp.weight.shape() == Shape{5, 6});
  CHECK(mlp.mlp_weights.size() == 2);
  CHECK(output_head(h, r, mlp).size() == 3);
}
