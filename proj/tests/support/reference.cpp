// SPDX-License-Identifier: Apache-2.0
#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ref {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double oneplus(double x) { return 1.0 + (x > 30 ? x : std::log1p(std::exp(x))); }

Vec matvec(const Vec& m, std::size_t rows, std::size_t cols, const Vec& x) {
  Vec y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * x[c];
    y[r] = s;
  }
  return y;
}

Vec content(const Vec& memory, std::size_t rows, std::size_t cols, const Vec* key, double strength) {
  double kn = 0;
  for (std::size_t c = 0; c < cols; ++c) kn += (*key)[c] * (*key)[c];
  kn = std::sqrt(kn);
  Vec score(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double d = 0, mn = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      d += (*key)[c] * memory[r * cols + c];
      mn += memory[r * cols + c] * memory[r * cols + c];
    }
    score[r] = strength * d / (kn * std::sqrt(mn) + 1e-6);
  }
  const double mx = *std::max_element(score.begin(), score.end());
  double z = 0;
  for (double& s : score) z += (s = std::exp(s - mx));
  for (double& s : score) s /= z;
  return score;
}

double cross(const dam::Point& o, const dam::Point& a, const dam::Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

Vec values(const dam::Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

std::pair<Vec, Vec> lstm_step(const Lstm& p, const Vec& joined, const Vec& h, const Vec& c) {
  const std::size_t n = p.hidden;
  Vec pre = matvec(p.weight, 4 * n, p.in, joined);
  Vec h2(n), c2(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double i = sigmoid(pre[j] + p.bias[j]);
    const double f = sigmoid(pre[n + j] + p.bias[n + j]);
    const double g = std::tanh(pre[2 * n + j] + p.bias[2 * n + j]);
    const double o = sigmoid(pre[3 * n + j] + p.bias[3 * n + j]);
    c2[j] = f * c[j] + i * g;
    h2[j] = o * std::tanh(c2[j]);
  }
  return {h2, c2};
}

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gain[i] + bias[i];
  return y;
}

SingleBlock::SingleBlock(const dam::ModelConfig& config, const dam::DamParameters& params) : cfg_(config) {
  lstm_ = {values(params.controller.lstm_weight), values(params.controller.lstm_bias), config.hidden,
           config.lstm_input_width()};
  gain_ = values(params.controller.norm_gain);
  ln_bias_ = values(params.controller.norm_bias);
  interface_ = values(params.controller.interface_weight);
  head_w_ = values(params.task_head.weight);
  head_b_ = values(params.task_head.bias);
  const std::size_t A = config.addresses, L = config.word, R = config.read_heads;
  h_.assign(config.hidden, 0.0);
  c_.assign(config.hidden, 0.0);
  memory_.assign(A * L, 1e-6);
  usage_.assign(A, 0.0);
  write_w_.assign(A, 0.0);
  read_w_.assign(R, Vec(A, 0.0));
  read_out_.assign(R, Vec(L, 0.0));
}

Vec SingleBlock::step(const Vec& x) {
  const std::size_t A = cfg_.addresses, L = cfg_.word, R = cfg_.read_heads, H = cfg_.hidden;

  Vec joined = x;
  for (const auto& r : read_out_) joined.insert(joined.end(), r.begin(), r.end());
  joined.insert(joined.end(), h_.begin(), h_.end());
  std::tie(h_, c_) = lstm_step(lstm_, joined, h_, c_);
  const Vec hn = layer_norm(h_, gain_, ln_bias_);
  const Vec xi = matvec(interface_, cfg_.interface_width(), H, hn);

  // k_w, β_w, e, v, f^{1..R}, g_a, g_w, k_r^{1..R}, β_r^{1..R}
  std::size_t at = 0;
  auto take = [&](std::size_t n) {
    Vec out(xi.begin() + static_cast<std::ptrdiff_t>(at), xi.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
    return out;
  };
  const Vec write_key = take(L);
  const double write_strength = oneplus(take(1)[0]);
  Vec erase = take(L);
  for (double& e : erase) e = sigmoid(e);
  const Vec write_values = take(L);
  Vec free_gates = take(R);
  for (double& f : free_gates) f = sigmoid(f);
  const double alloc_gate = sigmoid(take(1)[0]);
  const double write_gate = sigmoid(take(1)[0]);
  std::vector<Vec> read_keys;
  for (std::size_t i = 0; i < R; ++i) read_keys.push_back(take(L));
  Vec read_strengths = take(R);
  for (double& b : read_strengths) b = oneplus(b);

  Vec psi(A, 1.0);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t a = 0; a < A; ++a) psi[a] *= 1.0 - free_gates[i] * read_w_[i][a];
  for (std::size_t a = 0; a < A; ++a) usage_[a] = (usage_[a] + write_w_[a] - usage_[a] * write_w_[a]) * psi[a];

  std::vector<std::size_t> order(A);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) { return usage_[p] < usage_[q]; });
  Vec alloc(A, 0.0);
  double prod = 1.0;
  for (std::size_t j = 0; j < A; ++j) {
    alloc[order[j]] = (1.0 - usage_[order[j]]) * prod;
    prod *= usage_[order[j]];
  }

  const Vec cw = content(memory_, A, L, &write_key, write_strength);
  for (std::size_t a = 0; a < A; ++a) write_w_[a] = write_gate * (alloc_gate * alloc[a] + (1 - alloc_gate) * cw[a]);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t l = 0; l < L; ++l) {
      double& m = memory_[a * L + l];
      m = m * (1.0 - write_w_[a] * erase[l]) + write_w_[a] * write_values[l];
    }

  for (std::size_t i = 0; i < R; ++i) {
    read_w_[i] = content(memory_, A, L, &read_keys[i], read_strengths[i]);
    for (std::size_t l = 0; l < L; ++l) {
      double s = 0;
      for (std::size_t a = 0; a < A; ++a) s += read_w_[i][a] * memory_[a * L + l];
      read_out_[i][l] = s;
    }
  }

  Vec head_in = hn;
  for (const auto& r : read_out_) head_in.insert(head_in.end(), r.begin(), r.end());
  Vec y = matvec(head_w_, cfg_.output, head_in.size(), head_in);
  for (std::size_t o = 0; o < y.size(); ++o) y[o] += head_b_[o];
  return y;
}

std::set<std::size_t> hull_by_triangles(const std::vector<dam::Point>& pts) {
  const std::size_t n = pts.size();
  auto inside = [&](std::size_t p, std::size_t a, std::size_t b, std::size_t c) {
    const double d1 = cross(pts[a], pts[b], pts[p]);
    const double d2 = cross(pts[b], pts[c], pts[p]);
    const double d3 = cross(pts[c], pts[a], pts[p]);
    return (d1 > 0 && d2 > 0 && d3 > 0) || (d1 < 0 && d2 < 0 && d3 < 0);
  };
  std::set<std::size_t> hull;
  for (std::size_t p = 0; p < n; ++p) {
    bool covered = false;
    for (std::size_t a = 0; a < n && !covered; ++a)
      for (std::size_t b = a + 1; b < n && !covered; ++b)
        for (std::size_t c = b + 1; c < n && !covered; ++c)
          if (p != a && p != b && p != c && inside(p, a, b, c)) covered = true;
    if (!covered) hull.insert(p);
  }
  return hull;
}

std::size_t nth_farthest_by_sort(const dam::Episode& ep) {
  constexpr std::size_t V = 8, D = 16;
  auto arg = [](std::span<const double> s) {
    return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  };
  std::vector<Vec> vec(V);
  std::vector<std::size_t> id(V);
  std::size_t n = 0, query_id = 0;
  for (std::size_t t = 0; t < V; ++t) {
    const auto in = ep.input(t);
    vec[t].assign(in.begin(), in.begin() + D);
    id[t] = arg(in.subspan(D, V));
    n = arg(in.subspan(D + V, V)) + 1;
    query_id = arg(in.subspan(D + 2 * V, V));
  }
  const std::size_t q = static_cast<std::size_t>(std::find(id.begin(), id.end(), query_id) - id.begin());
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t t = 0; t < V; ++t) {
    double s = 0;
    for (std::size_t j = 0; j < D; ++j) s += (vec[t][j] - vec[q][j]) * (vec[t][j] - vec[q][j]);
    dist.emplace_back(std::sqrt(s), t);
  }
  std::sort(dist.begin(), dist.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return id[dist[n - 1].second];
}

void write_synthetic_babi(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream(dir / name) << text;
  };
  // Two stories in train, one in test for task 1.
  put("qa1_single-supporting-fact_train.txt",
      "1 Mary moved to the bathroom.\n"
      "2 John went to the hallway.\n"
      "3 Where is Mary? \tbathroom\t1\n"
      "4 Daniel went back to the hallway.\n"
      "5 Where is Daniel? \thallway\t4\n"
      "1 Sandra journeyed to the garden.\n"
      "2 Where is Sandra? \tgarden\t1\n");
  put("qa1_single-supporting-fact_test.txt",
      "1 John moved to the office.\n"
      "2 Where is John? \toffice\t1\n");
  // Task 19 carries comma-separated answers; the long story must be dropped.
  std::string longstory;
  for (int i = 1; i <= 170; ++i) longstory += std::to_string(i) + " The kitchen is north of the garden.\n";
  longstory += "171 How do you go from the kitchen to the garden? \ts,s\t1\n";
  put("qa19_path-finding_train.txt",
      "1 The office is east of the hallway.\n"
      "2 The kitchen is north of the office.\n"
      "3 How do you go from the hallway to the kitchen? \te,n\t1 2\n" +
          longstory);
  put("qa19_path-finding_test.txt",
      "1 The garden is west of the office.\n"
      "2 How do you go from the office to the garden? \tw\t1\n");
}

}  // namespace ref
