// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dam/error.hpp"
#include "dam/gradcheck.hpp"
#include "dam/memory.hpp"
#include "dam/model.hpp"
#include "support/reference.hpp"

using namespace dam;
using doctest::Approx;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
Tensor vec(std::vector<double> v) { return Tensor::vector(std::move(v)); }
Tensor one(double v) { return Tensor::vector({v}); }

void close(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(t[i] - expected[i]) <= tol);
}

}  // namespace

TEST_CASE("content addressing") {
  const Tensor m = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double e = std::exp(1.0);
  close(content_address(m, vec({1, 0}), one(1.0)), {e / (e + 1), 1 / (e + 1)}, 1e-6);
  const Tensor same = Tensor::from({3, 2}, {0.4, 0.2, 0.4, 0.2, 0.4, 0.2});
  close(content_address(same, vec({1, -1}), one(2.0)), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  const Tensor sharp = content_address(m, vec({0, 1}), one(100.0));
  CHECK(sharp[1] > 1 - 1e-12);
}

TEST_CASE("retention") {
  close(retention(vec({0, 0}), {vec({0.3, 0.7}), vec({1, 0})}), {1, 1});
  close(retention(vec({1}), {vec({1, 0})}), {0, 1});
  close(retention(vec({0.5}), {vec({0.4, 0.6})}), {0.8, 0.7});
  CHECK_THROWS_AS(retention(vec({0.5, 0.5}), {vec({0.4, 0.6})}), ShapeError);
}

TEST_CASE("usage update") {
  close(update_usage(vec({0, 0}), vec({0, 0}), vec({1, 1})), {0, 0});
  close(update_usage(vec({0.5}), vec({0.5}), vec({1})), {0.75});
  close(update_usage(vec({0.3, 0.9}), vec({0.2, 0.1}), vec({0, 0})), {0, 0});
}

TEST_CASE("allocation") {
  const auto a = allocation(vec({0.2, 0.8}));
  close(a.weighting, {0.8, 0.04});
  CHECK(a.free_list == std::vector<std::size_t>{0, 1});
  close(allocation(vec({1, 1, 1})).weighting, {0, 0, 0});
  const auto unique = allocation(vec({1, 0, 1}));
  CHECK(vals(unique.weighting) == std::vector<double>{0, 1, 0});
  // Ties resolve by index.
  CHECK(allocation(vec({0.5, 0.1, 0.5, 0.1})).free_list == std::vector<std::size_t>{1, 3, 0, 2});
}

TEST_CASE("write weighting") {
  close(write_weighting(one(0), one(0.3), vec({0.5, 0.5}), vec({0.2, 0.8})), {0, 0});
  close(write_weighting(one(1), one(1), vec({0.6, 0.1}), vec({0.2, 0.8})), {0.6, 0.1});
  close(write_weighting(one(0.5), one(0.5), vec({1, 0}), vec({0, 1})), {0.25, 0.25});
}

TEST_CASE("memory write") {
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(vals(write_memory(m, vec({0, 0}), vec({0.5, 0.5}), vec({9, 9}))) == vals(m));
  close(write_memory(Tensor::from({1, 2}, {1, 1}), vec({1}), vec({1, 1}), vec({0.5, 0.5})), {0.5, 0.5});
  CHECK(vals(write_memory(m, vec({0.3, 0.6}), vec({0, 0}), vec({0, 0}))) == vals(m));
}

TEST_CASE("block read") {
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  // Strong keys aligned with a row approximate a one-hot read.
  const auto sharp = read_block(Tensor::from({2, 2}, {1, 0, 0, 1}), {vec({0, 1})}, vec({200}));
  close(sharp.read_out[0], {0, 1}, 1e-9);
  // Equal similarity gives uniform weights and the average row.
  const auto even = read_block(m, {vec({0, 0})}, vec({1}));
  close(even.weightings[0], {0.5, 0.5});
  close(even.read_out[0], {2, 3});
}

TEST_CASE("attentive read") {
  const std::vector<std::vector<Tensor>> per_block = {{vec({1, 0})}, {vec({0, 1})}};
  close(attentive_read(per_block, {vec({0, 0}), 2, 1}).read_out[0], {0.5, 0.5});
  close(attentive_read(per_block, {vec({std::log(2.0), 0}), 2, 1}).read_out[0], {2.0 / 3, 1.0 / 3});
  close(attentive_read(per_block, {vec({30, 0}), 2, 1}).read_out[0], {1, 0}, 1e-12);

  // Softmax runs over blocks for each head, never over heads.
  const std::vector<std::vector<Tensor>> two_heads = {{vec({1}), vec({10})}, {vec({3}), vec({30})}};
  const auto r = attentive_read(two_heads, {vec({0, 5, 0, 5}), 2, 2});
  close(r.gates[0], {0.5, 0.5});
  close(r.gates[1], {0.5, 0.5});
  close(r.read_out[0], {2});
  close(r.read_out[1], {20});
}

TEST_CASE("addressing invariants over random steps") {
  ModelConfig c;
  c.blocks = 1;
  c.addresses = 8;
  c.word = 5;
  c.read_heads = 2;
  Rng rng(17);
  BlockState s = MemoryState::initial(c).blocks[0];
  for (int step = 0; step < 2000; ++step) {
    std::vector<double> xi(c.interface_width());
    for (double& v : xi) v = rng.uniform(-4, 4);
    const auto ops = parse_interface(Tensor::vector(xi), c).blocks[0];
    const BlockStep next = step_block(s, ops);
    const auto cw = vals(next.scratch.content_weighting);
    CHECK(std::abs(std::accumulate(cw.begin(), cw.end(), 0.0) - 1) < 1e-9);
    double ws = 0;
    for (double w : next.state.write_weighting.values()) {
      CHECK(w >= 0);
      ws += w;
    }
    CHECK(ws <= 1 + 1e-9);
    for (double u : next.state.usage.values()) CHECK((u >= 0 && u <= 1));
    double as = 0;
    for (double a : next.scratch.allocation.values()) as += a;
    CHECK(as <= 1 + 1e-9);
    for (const auto& w : next.state.read_weightings) {
      const auto rv = vals(w);
      CHECK(std::abs(std::accumulate(rv.begin(), rv.end(), 0.0) - 1) < 1e-9);
    }
    s = next.state;
  }
}

TEST_CASE("K=1 model matches an independently composed single-block pipeline") {
  ModelConfig c;
  c.blocks = 1;
  c.addresses = 8;
  c.word = 6;
  c.read_heads = 2;
  c.hidden = 12;
  c.input = 5;
  c.output = 4;
  const DamParameters params = DamParameters::init(c, 77);
  ref::SingleBlock oracle(c, params);
  Rng rng(5), unused(0);
  RecurrentState state = RecurrentState::initial(c);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(c.input);
    for (double& v : x) v = rng.uniform(-1, 1);
    const StepResult r = dam_step(Tensor::vector(x), state, params, c, false, unused);
    const auto y = oracle.step(x);
    for (std::size_t o = 0; o < c.output; ++o) CHECK(std::abs(r.output[o] - y[o]) < 1e-12);
    CHECK(r.diagnostics.gates[0][0] == 1.0);
    state = r.state;
  }
}

TEST_CASE("blocks are updated independently") {
  ModelConfig c;
  c.blocks = 3;
  c.addresses = 4;
  c.word = 3;
  c.read_heads = 1;
  Rng rng(8);
  std::vector<double> xi(c.interface_width());
  for (double& v : xi) v = rng.uniform(-2, 2);
  const MemoryState init = MemoryState::initial(c);
  const auto base = parse_interface(Tensor::vector(xi), c);
  // Perturb every operator of block 1 only.
  for (std::size_t j = c.block_width(); j < 2 * c.block_width(); ++j) xi[j] += 0.37;
  const auto moved = parse_interface(Tensor::vector(xi), c);
  for (std::size_t k : {0, 2}) {
    const auto a = step_block(init.blocks[k], base.blocks[k]);
    const auto b = step_block(init.blocks[k], moved.blocks[k]);
    CHECK(vals(a.state.memory) == vals(b.state.memory));
    CHECK(vals(a.state.usage) == vals(b.state.usage));
    CHECK(vals(a.state.write_weighting) == vals(b.state.write_weighting));
  }
  const auto a1 = step_block(init.blocks[1], base.blocks[1]);
  const auto b1 = step_block(init.blocks[1], moved.blocks[1]);
  CHECK(vals(a1.state.memory) != vals(b1.state.memory));
}

TEST_CASE("zero parameters give zero outputs") {
  ModelConfig c;
  c.blocks = 2;
  c.addresses = 4;
  c.word = 3;
  c.hidden = 5;
  c.input = 3;
  c.output = 2;
  DamParameters p = DamParameters::init(c, 1);
  for (auto& n : p.named()) {
    Tensor t = n.tensor;
    for (double& v : t.mutable_values()) v = 0;
  }
  Rng rng(0);
  RecurrentState s = RecurrentState::initial(c);
  for (int t = 0; t < 5; ++t) {
    const auto r = dam_step(Tensor::vector({1, -2, 0.5}), s, p, c, true, rng);
    for (double v : r.output.values()) CHECK(v == 0);
    s = r.state;
  }
}

TEST_CASE("initial memory state") {
  ModelConfig c;
  c.blocks = 2;
  c.addresses = 64;
  c.word = 36;
  c.read_heads = 1;
  const MemoryState m = MemoryState::initial(c);
  CHECK(c.addresses * c.word * c.blocks == 4608);
  REQUIRE(m.blocks.size() == 2);
  for (double v : m.blocks[0].memory.values()) CHECK(v == kInitialMemoryValue);
  for (double v : m.blocks[1].usage.values()) CHECK(v == 0);
}

TEST_CASE("unrolled model gradient") {
  GradcheckOptions o;
  const auto r = gradcheck_model(gradcheck_reference_config(), 6, o);
  CHECK(r.max_rel_error < 1e-4);
}
