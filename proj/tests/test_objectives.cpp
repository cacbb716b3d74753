// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dam/error.hpp"
#include "dam/objectives.hpp"

using namespace dam;
using doctest::Approx;

namespace {

using Mask = std::vector<std::uint8_t>;

Mask bits(std::initializer_list<int> v) {
  Mask m;
  for (int b : v) m.push_back(static_cast<std::uint8_t>(b));
  return m;
}

}  // namespace

TEST_CASE("sample mask") {
  Rng rng(1);
  const Mask story = bits({1, 1, 0, 1, 0, 1});
  CHECK(sample_mask(story, 0.0, rng) == Mask(6, 0));
  CHECK(sample_mask(story, 1.0, rng) == story);
  for (int i = 0; i < 100; ++i) {
    const Mask a = sample_mask(story, 0.5, rng);
    CHECK(a[2] == 0);
    CHECK(a[4] == 0);
  }
  CHECK_THROWS_AS(sample_mask(story, 1.2, rng), ConfigError);
}

TEST_CASE("sampled counts follow the binomial law") {
  const Mask story(100, 1);
  Rng rng(2024);
  constexpr int episodes = 10000;
  double sum = 0, sq = 0;
  for (int e = 0; e < episodes; ++e) {
    double n = 0;
    for (auto a : sample_mask(story, 0.3, rng)) n += a;
    sum += n;
    sq += n * n;
  }
  const double mean = sum / episodes;
  const double var = (sq - episodes * mean * mean) / (episodes - 1);
  CHECK(mean >= 29.0);
  CHECK(mean <= 31.0);
  CHECK(std::abs(var - 21.0) <= 0.2 * 21.0);
}

TEST_CASE("phase mask validation") {
  PhaseMask m{bits({1, 1, 0}), bits({0, 0, 1}), bits({1, 0, 0})};
  CHECK_NOTHROW(m.validate());
  CHECK(m.story_count() == 2);
  CHECK(m.answer_count() == 1);
  CHECK(m.sampled_count() == 1);
  m.sampled = bits({0, 0, 1});
  CHECK_THROWS_AS(m.validate(), Error);
  m.sampled = bits({0, 0, 0});
  m.answer = bits({1, 0, 1});
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("task loss") {
  const std::vector<Tensor> out = {Tensor::vector({0, 0, 0, 0}), Tensor::vector({0, 0, 0, 0})};
  const std::vector<double> targets = {0, 0, 0, 0, 0, 1, 0, 0};
  CHECK(task_loss(LossKind::kSoftmaxCrossEntropy, out, targets, 4, bits({0, 0})).item() == 0.0);
  CHECK(task_loss(LossKind::kSoftmaxCrossEntropy, out, targets, 4, bits({0, 1})).item() ==
        Approx(1.3863).epsilon(1e-4));
  const std::vector<Tensor> sat = {Tensor::vector({30, -30})};
  CHECK(task_loss(LossKind::kSigmoidCrossEntropy, sat, std::vector<double>{1, 0}, 2, bits({1})).item() < 1e-12);
  // Class-id targets for softmax CE.
  CHECK(step_loss(LossKind::kSoftmaxCrossEntropy, Tensor::vector({0, 0, 0, 0}), std::vector<double>{2}).item() ==
        Approx(std::log(4.0)));
}

TEST_CASE("refreshing loss") {
  const std::vector<Tensor> recon = {Tensor::vector({0, 0}), Tensor::vector({1, 0})};
  const std::vector<double> inputs = {1, 0, 1, 0};
  CHECK(mr_loss(LossKind::kSquaredError, recon, inputs, 2, bits({0, 0})).item() == 0.0);
  CHECK(mr_loss(LossKind::kSquaredError, recon, inputs, 2, bits({0, 1})).item() == 0.0);
  CHECK(mr_loss(LossKind::kSquaredError, recon, inputs, 2, bits({1, 0})).item() == 1.0);
  CHECK_THROWS_AS(mr_loss(LossKind::kSquaredError, {Tensor::vector({0, 0, 0})}, inputs, 2, bits({1, 0})),
                  ShapeError);
}

TEST_CASE("refreshing loss gradient reaches sampled steps only") {
  const Tensor r0 = Tensor::parameter({2}, {0.2, 0.4});
  const Tensor r1 = Tensor::parameter({2}, {0.9, -0.3});
  Graph g;
  {
    GraphScope scope(g);
    g.backward(mr_loss(LossKind::kSquaredError, {r0, r1}, std::vector<double>{1, 0, 1, 0}, 2, bits({0, 1})));
  }
  CHECK(r0.grad() == std::vector<double>{0, 0});
  CHECK(r1.grad()[0] == Approx(2 * (0.9 - 1)));
  CHECK(r1.grad()[1] == Approx(2 * -0.3));
}

TEST_CASE("gamma clamp") {
  CHECK(gamma(bits({1, 1, 1, 1, 1, 1, 0, 0, 0}), bits({1, 1, 1, 1, 1, 1, 0, 0, 0}), bits({0, 0, 0, 0, 0, 0, 1, 1, 1})) ==
        2.0);
  CHECK(gamma(bits({1, 1, 1, 0, 0, 0}), bits({1, 0, 0, 0, 0, 0}), bits({0, 0, 0, 1, 1, 1})) == 1.0);
  CHECK(gamma(bits({1, 1, 0}), bits({0, 0, 0}), bits({0, 0, 1})) == 1.0);
  CHECK_THROWS_AS(gamma(bits({1, 1}), bits({1, 0}), bits({0, 0})), Error);

  // Only counts matter; ratios below one clamp, at or above one pass through.
  for (int sampled = 0; sampled <= 12; ++sampled) {
    Mask story(16, 0), alpha(16, 0), answer(16, 0);
    for (int t = 0; t < 12; ++t) story[static_cast<std::size_t>(t)] = 1;
    for (int t = 0; t < sampled; ++t) alpha[static_cast<std::size_t>(11 - t)] = 1;
    for (int t = 12; t < 16; ++t) answer[static_cast<std::size_t>(t)] = 1;
    const double ratio = sampled / 4.0;
    CHECK(gamma(story, alpha, answer) == (ratio < 1 ? 1.0 : ratio));
  }
}

TEST_CASE("total loss") {
  CHECK(total_loss(Tensor::scalar(0.5), Tensor::scalar(0.3), 2.0).item() == Approx(1.3));
  CHECK(total_loss(Tensor::scalar(0), Tensor::scalar(0), 1.0).item() == 0.0);
  const Tensor task = Tensor::scalar(0.8123456789);
  CHECK(total_loss(task, Tensor::scalar(0), 1.0).item() == task.item());
}
