// SPDX-License-Identifier: Apache-2.0
//
// Independent plain-double oracles for the tests. Nothing here calls into
// the tensor engine.
#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <vector>

#include "dam/model.hpp"
#include "dam/tasks.hpp"

namespace ref {

using Vec = std::vector<double>;

Vec values(const dam::Tensor& t);

struct Lstm {
  Vec weight;  // row-major [4h, in]
  Vec bias;
  std::size_t hidden = 0, in = 0;
};

/// One LSTM step; returns (h, c).
std::pair<Vec, Vec> lstm_step(const Lstm& p, const Vec& joined, const Vec& h, const Vec& c);
Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias);

/// Single-block DNC-style pipeline assembled from scratch: LSTM, layer norm,
/// interface, retention, usage, sorted allocation, gated write, content reads
/// and a linear output head. Mirrors a K=1 DAM whose gate softmax is 1.
class SingleBlock {
 public:
  SingleBlock(const dam::ModelConfig& config, const dam::DamParameters& params);
  Vec step(const Vec& x);

 private:
  dam::ModelConfig cfg_;
  Lstm lstm_;
  Vec gain_, ln_bias_, interface_, head_w_, head_b_;
  Vec h_, c_, memory_, usage_, write_w_;
  std::vector<Vec> read_w_, read_out_;
};

/// Indices on the hull: a point is a vertex iff it lies strictly inside no
/// triangle formed by three other points (general position assumed).
std::set<std::size_t> hull_by_triangles(const std::vector<dam::Point>& points);

/// Decodes an n-th-farthest episode and returns the expected class id by a
/// full distance sort.
std::size_t nth_farthest_by_sort(const dam::Episode& ep);

/// Writes a tiny en-10k-shaped corpus (two tasks) under `dir`.
void write_synthetic_babi(const std::filesystem::path& dir);

}  // namespace ref
