// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dam/error.hpp"
#include "dam/gradcheck.hpp"
#include "dam/tensor.hpp"

using namespace dam;
using doctest::Approx;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("elementwise values") {
  CHECK(vals(mul(Tensor::vector({1, 2}), Tensor::vector({3, 4}))) == std::vector<double>{3, 8});
  CHECK(sigmoid(Tensor::vector({0})).item() == 0.5);
  CHECK(vals(sub(Tensor::vector({1, 1}), Tensor::vector({1, 1}))) == std::vector<double>{0, 0});
  CHECK(vals(add(Tensor::vector({1, 2, 3}), Tensor::scalar(1))) == std::vector<double>{2, 3, 4});
}

TEST_CASE("binary ops reject mismatched shapes") {
  CHECK_THROWS_AS(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("non-finite results are hard errors") {
  CHECK_THROWS_AS(log(Tensor::vector({-1.0})), NumericError);
  CHECK_THROWS_AS(div(Tensor::vector({1.0}), Tensor::vector({0.0})), NumericError);
}

TEST_CASE("matmul") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(vals(matmul(a, Tensor::vector({1, 0}))) == std::vector<double>{1, 3});
  const Tensor x = Tensor::vector({0.3, -1.2});
  CHECK(vals(matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), x)) == vals(x));
  CHECK(vals(matmul(Tensor::zeros({2, 2}), x)) == std::vector<double>{0, 0});
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST_CASE("softmax") {
  CHECK(vals(softmax(Tensor::vector({0, 0}))) == std::vector<double>{0.5, 0.5});
  const auto s = vals(softmax(Tensor::vector({std::log(2.0), 0})));
  CHECK(s[0] == Approx(2.0 / 3).epsilon(1e-14));
  CHECK(s[1] == Approx(1.0 / 3).epsilon(1e-14));
  const auto big = vals(softmax(Tensor::vector({1000, 0})));
  CHECK(std::abs(big[0] - 1) < 1e-12);
  CHECK(std::abs(big[1]) < 1e-12);

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(7);
    for (double& v : x) v = rng.uniform(-20, 20);
    const auto p = vals(softmax(Tensor::vector(x)));
    double total = 0;
    for (double v : p) {
      CHECK(v >= 0);
      total += v;
    }
    CHECK(std::abs(total - 1) < 1e-12);
  }
}

TEST_CASE("oneplus") {
  CHECK(oneplus(Tensor::scalar(0)).item() == Approx(1.693147).epsilon(1e-6));
  CHECK(std::abs(oneplus(Tensor::scalar(-50)).item() - 1) < 1e-12);
  CHECK(std::abs(oneplus(Tensor::scalar(50)).item() - 51) < 1e-9);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(oneplus(Tensor::scalar(rng.uniform(-800, 800))).item() >= 1.0);
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({1, 0})).item() == Approx(1).epsilon(1e-5));
  CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == 0);
  CHECK(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({1, 0})).item() == 0);
}

TEST_CASE("layer norm") {
  const Tensor one = Tensor::full({4}, 1.0), zero = Tensor::zeros({4});
  for (double v : vals(layer_norm(Tensor::full({4}, 3.5), one, zero))) CHECK(v == 0);
  const auto pm = vals(layer_norm(Tensor::vector({1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2})));
  CHECK(pm[0] == Approx(1).epsilon(1e-5));
  CHECK(pm[1] == Approx(-1).epsilon(1e-5));
  const Tensor bias = Tensor::vector({0.1, 0.2, 0.3, 0.4});
  CHECK(vals(layer_norm(Tensor::vector({5, -2, 7, 1}), zero, bias)) == vals(bias));

  const auto y = vals(layer_norm(Tensor::vector({2, 9, -4, 0.5, 3}), Tensor::full({5}, 1.0), Tensor::zeros({5})));
  double mean = 0, var = 0;
  for (double v : y) mean += v / 5;
  for (double v : y) var += (v - mean) * (v - mean) / 5;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(var - 1) < 1e-6);
}

TEST_CASE("dropout") {
  Rng rng(9);
  const Tensor x = Tensor::vector({1, 2, 3});
  CHECK(vals(dropout(x, 0.0, true, rng)) == vals(x));
  CHECK(vals(dropout(x, 0.7, false, rng)) == vals(x));

  const Tensor ones = Tensor::full({100000}, 1.0);
  const auto d = vals(dropout(ones, 0.5, true, rng));
  double mean = 0;
  for (double v : d) {
    CHECK((v == 0.0 || v == 2.0));
    mean += v / static_cast<double>(d.size());
  }
  CHECK(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("backward basics") {
  const Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  {
    GraphScope scope(g);
    g.backward(sum(mul(x, x)));
  }
  CHECK(x.grad() == std::vector<double>{2, 4});

  const Tensor z = Tensor::parameter({2}, {0, 0});
  Graph g2;
  {
    GraphScope scope(g2);
    g2.backward(slice(softmax(z), 0, 1));
  }
  CHECK(z.grad()[0] == Approx(0.25).epsilon(1e-14));
  CHECK(z.grad()[1] == Approx(-0.25).epsilon(1e-14));
}

TEST_CASE("backward misuse") {
  const Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  GraphScope scope(g);
  CHECK_THROWS_AS(g.backward(mul(x, x)), GraphError);
  const Tensor loss = sum(x);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), GraphError);
  g.reset();
  Tensor handle = x;
  handle.zero_grad();
  g.backward(sum(scale(x, 3.0)));
  CHECK(x.grad() == std::vector<double>{3, 3});
}

TEST_CASE("untracked computation records nothing") {
  const Tensor x = Tensor::parameter({2}, {1, 2});
  const Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  Graph g;
  GraphScope scope(g);
  (void)mul(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  CHECK(g.size() == 0);
}

TEST_CASE("gradient accumulates over multiple consumers") {
  GradcheckOptions o;
  const auto r = check_gradient(
      "fanout", [](const std::vector<Tensor>& x) { return add(mul(x[0], x[0]), mul(tanh(x[0]), x[1])); },
      {Tensor::parameter({3}, {0.3, -0.7, 1.1}), Tensor::parameter({3}, {0.5, 0.2, -0.4})}, o);
  CHECK(r.max_rel_error < 1e-7);

  const Tensor x = Tensor::parameter({1}, {1.5});
  Graph g;
  {
    GraphScope scope(g);
    g.backward(add(scale(x, 2.0), mul(x, x)));
  }
  CHECK(x.grad()[0] == Approx(2 + 2 * 1.5));
}

TEST_CASE("every op agrees with central differences on random inputs") {
  // Each seed draws fresh inputs for every op.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GradcheckOptions o;
    o.seed = seed;
    for (const auto& r : gradcheck_ops(o)) {
      INFO(r.name << " seed " << seed);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("structural ops") {
  const Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(vals(transpose(m)) == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(vals(row(m, 1)) == std::vector<double>{4, 5, 6});
  CHECK(vals(slice(m, 2, 3)) == std::vector<double>{3, 4, 5});
  CHECK(vals(concat({Tensor::vector({1}), Tensor::vector({2, 3})})) == std::vector<double>{1, 2, 3});
  CHECK(vals(outer(Tensor::vector({1, 2}), Tensor::vector({3, 4}))) == std::vector<double>{3, 4, 6, 8});
  CHECK(reshape(m, {3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(m, {4}), ShapeError);
  CHECK_THROWS_AS(slice(m, 5, 2), ShapeError);
}

TEST_CASE("losses") {
  CHECK(softmax_cross_entropy(Tensor::vector({0, 0, 0, 0}), 2).item() == Approx(std::log(4.0)));
  CHECK(sigmoid_cross_entropy(Tensor::vector({30, -30}), Tensor::vector({1, 0})).item() < 1e-12);
  CHECK(squared_error(Tensor::vector({0, 0}), Tensor::vector({1, 0})).item() == 1.0);
}
