// SPDX-License-Identifier: Apache-2.0
#include "dam/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "dam/error.hpp"

namespace dam {

namespace {

constexpr std::size_t kFarthestVectors = 8;
constexpr std::size_t kFarthestDims = 16;
constexpr std::size_t kFarthestInput = kFarthestDims + 3 * kFarthestVectors;  // 40
constexpr std::size_t kHullSlots = 20;
constexpr std::size_t kHullInput = 2 + kHullSlots + 1;  // coords, point id, answer flag

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool any_collinear(std::span<const Point> p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      for (std::size_t k = j + 1; k < p.size(); ++k)
        if (std::abs(cross(p[i], p[j], p[k])) < 1e-9) return true;
  return false;
}

bool strictly_inside(const Point& q, const Point& a, const Point& b, const Point& c) {
  const double d1 = cross(a, b, q), d2 = cross(b, c, q), d3 = cross(c, a, q);
  return (d1 > 0 && d2 > 0 && d3 > 0) || (d1 < 0 && d2 < 0 && d3 < 0);
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

// Sets masks for steps [begin, end).
void mark(std::vector<std::uint8_t>& m, std::size_t begin, std::size_t end) {
  for (std::size_t t = begin; t < end; ++t) m[t] = 1;
}

// Copy / associative-recall layout: each step has at most one flag set, and
// the output flag is never combined with the answer phase.
bool flags_exclusive(const Episode& ep, std::size_t width) {
  for (std::size_t t = 0; t < ep.steps; ++t) {
    const auto in = ep.input(t);
    if (in[width] != 0.0 && in[width + 1] != 0.0) return false;
  }
  return true;
}

bool validate_copy(const Episode& ep, const TaskConfig& c) {
  const std::size_t W = c.width;
  if (ep.input_width != W + 2 || ep.output_width != W + 2 || !flags_exclusive(ep, W)) return false;
  std::size_t story = 0;
  while (story < ep.steps && ep.input(story)[W] == 1.0) ++story;
  if (story == 0 || ep.steps != 2 * story + 1) return false;
  const auto delim = ep.input(story);
  if (delim[W + 1] != 1.0 || !all_zero(delim.first(W + 1))) return false;
  for (std::size_t t = 0; t < story; ++t) {
    const auto in = ep.input(t);
    const auto target = ep.target(story + 1 + t);
    if (!all_zero(ep.input(story + 1 + t))) return false;
    for (std::size_t b = 0; b < W; ++b) {
      if (in[b] != target[b]) return false;
    }
    if (target[W] != 0.0 || target[W + 1] != 0.0) return false;
    if (!ep.mask.story[t] || ep.mask.answer[t] || !ep.mask.answer[story + 1 + t]) return false;
  }
  return ep.mask.answer_count() == story && ep.mask.story_count() == story;
}

bool validate_assoc(const Episode& ep, const TaskConfig& c) {
  const std::size_t W = c.width, N = c.item_len;
  if (ep.input_width != W + 2 || ep.output_width != W + 2 || !flags_exclusive(ep, W)) return false;
  std::size_t story = 0;
  while (story < ep.steps && ep.input(story)[W] == 1.0) ++story;
  if (story == 0 || story % N != 0 || ep.steps != story + 2 * N) return false;
  const std::size_t items = story / N;
  auto item_equal = [&](std::size_t a_step, std::size_t b_step) {
    for (std::size_t r = 0; r < N; ++r) {
      const auto a = ep.input(a_step + r).first(W);
      const auto b = ep.input(b_step + r).first(W);
      if (!std::equal(a.begin(), a.end(), b.begin())) return false;
    }
    return true;
  };
  for (std::size_t r = 0; r < N; ++r) {
    if (ep.input(story + r)[W + 1] != 1.0) return false;
  }
  // Scan the story for the query; the answer is the following item.
  std::size_t found = items;
  for (std::size_t i = 0; i < items; ++i) {
    if (item_equal(i * N, story)) {
      found = i;
      break;
    }
  }
  if (found + 1 >= items) return false;
  for (std::size_t r = 0; r < N; ++r) {
    const auto expected = ep.input((found + 1) * N + r).first(W);
    const auto target = ep.target(story + N + r);
    if (!std::equal(expected.begin(), expected.end(), target.begin())) return false;
    if (!ep.mask.answer[story + N + r]) return false;
  }
  return ep.mask.answer_count() == N && ep.mask.story_count() == story;
}

bool validate_repr(const Episode& ep, const TaskConfig& c) {
  const std::size_t V = c.rr_vectors, W = c.rr_width, N = c.segments;
  const std::size_t seg = W / (2 * N);
  if (ep.input_width != W || ep.output_width != N * seg || ep.steps <= V) return false;
  for (std::size_t t = V; t < ep.steps; ++t) {
    const auto cue = ep.input(t);
    const auto target = ep.target(t);
    if (!ep.mask.answer[t]) return false;
    bool matched = false;
    // Enumerate every stored vector and every retained-segment subset.
    for (std::size_t v = 0; v < V && !matched; ++v) {
      const auto stored = ep.input(v);
      for (std::uint32_t subset = 0; subset < (1u << (2 * N)) && !matched; ++subset) {
        if (static_cast<std::size_t>(std::popcount(subset)) != N) continue;
        bool ok = true;
        std::size_t out = 0;
        for (std::size_t s = 0; s < 2 * N && ok; ++s) {
          const bool kept = (subset >> s) & 1u;
          for (std::size_t b = 0; b < seg && ok; ++b) {
            const double value = stored[s * seg + b];
            if (kept) {
              ok = cue[s * seg + b] == value;
            } else {
              ok = cue[s * seg + b] == 0.0 && target[out * seg + b] == value;
            }
          }
          if (!kept) ++out;
        }
        matched = ok;
      }
    }
    if (!matched) return false;
  }
  return ep.mask.story_count() == V;
}

bool validate_farthest(const Episode& ep) {
  const std::size_t V = kFarthestVectors, D = kFarthestDims;
  if (ep.input_width != kFarthestInput || ep.output_width != V || ep.steps != V + 1) return false;
  std::vector<std::vector<double>> vectors;
  std::vector<std::size_t> ids;
  for (std::size_t t = 0; t < V; ++t) {
    const auto in = ep.input(t);
    vectors.emplace_back(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(D));
    ids.push_back(argmax(in.subspan(D, V)));
  }
  const auto first = ep.input(0);
  const std::size_t n = argmax(first.subspan(D + V, V)) + 1;
  const std::size_t query_id = argmax(first.subspan(D + 2 * V, V));
  const auto query_pos = std::find(ids.begin(), ids.end(), query_id);
  if (query_pos == ids.end()) return false;
  const std::size_t q = static_cast<std::size_t>(query_pos - ids.begin());

  // Exhaustive distance sort.
  std::vector<std::pair<double, std::size_t>> by_distance;
  for (std::size_t i = 0; i < V; ++i) {
    double d = 0;
    for (std::size_t j = 0; j < D; ++j) d += (vectors[i][j] - vectors[q][j]) * (vectors[i][j] - vectors[q][j]);
    by_distance.emplace_back(-d, i);
  }
  std::sort(by_distance.begin(), by_distance.end());
  const std::size_t expected_id = ids[by_distance[n - 1].second];
  return ep.mask.answer[V] && argmax(ep.target(V)) == expected_id && ep.target(V)[expected_id] == 1.0;
}

bool validate_hull(const Episode& ep) {
  if (ep.input_width != kHullInput || ep.output_width != kHullSlots) return false;
  std::vector<Point> pts;
  std::size_t t = 0;
  for (; t < ep.steps && ep.input(t)[kHullInput - 1] == 0.0; ++t) {
    const auto in = ep.input(t);
    if (argmax(in.subspan(2, kHullSlots)) != t) return false;
    pts.push_back({in[0], in[1]});
  }
  std::vector<std::size_t> labels;
  for (; t < ep.steps; ++t) {
    if (!ep.mask.answer[t]) return false;
    labels.push_back(argmax(ep.target(t)));
  }
  // Brute force: a point is on the hull iff no triangle of others contains it.
  std::vector<std::size_t> hull;
  for (std::size_t q = 0; q < pts.size(); ++q) {
    bool inside = false;
    for (std::size_t a = 0; a < pts.size() && !inside; ++a)
      for (std::size_t b = a + 1; b < pts.size() && !inside; ++b)
        for (std::size_t c = b + 1; c < pts.size() && !inside; ++c)
          if (a != q && b != q && c != q) inside = strictly_inside(pts[q], pts[a], pts[b], pts[c]);
    if (!inside) hull.push_back(q);
  }
  std::vector<std::size_t> sorted_labels = labels;
  std::sort(sorted_labels.begin(), sorted_labels.end());
  if (sorted_labels != hull || labels.empty()) return false;
  // Ordering: starts at the lowest point and turns left at every vertex.
  for (std::size_t i : hull) {
    const Point& s = pts[labels[0]];
    if (pts[i].y < s.y || (pts[i].y == s.y && pts[i].x < s.x)) return false;
  }
  const std::size_t h = labels.size();
  for (std::size_t i = 0; i < h; ++i) {
    if (cross(pts[labels[i]], pts[labels[(i + 1) % h]], pts[labels[(i + 2) % h]]) <= 0) return false;
  }
  return true;
}

}  // namespace

TaskKind parse_task(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "assoc_recall" || name == "ar") return TaskKind::kAssociativeRecall;
  if (name == "repr_recall" || name == "rr") return TaskKind::kRepresentationRecall;
  if (name == "nth_farthest" || name == "nth") return TaskKind::kNthFarthest;
  if (name == "convex_hull" || name == "hull") return TaskKind::kConvexHull;
  if (name == "babi") return TaskKind::kBabi;
  throw ConfigError("unknown task '" + name + "'");
}

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kAssociativeRecall: return "assoc_recall";
    case TaskKind::kRepresentationRecall: return "repr_recall";
    case TaskKind::kNthFarthest: return "nth_farthest";
    case TaskKind::kConvexHull: return "convex_hull";
    case TaskKind::kBabi: return "babi";
  }
  return "?";
}

TaskTraits task_traits(const TaskConfig& c) {
  TaskTraits t;
  switch (c.kind) {
    case TaskKind::kCopy:
    case TaskKind::kAssociativeRecall:
      t.input_width = t.output_width = c.width + 2;
      t.metric_channels = c.width;
      break;
    case TaskKind::kRepresentationRecall:
      if (c.segments == 0 || c.rr_width % (2 * c.segments) != 0) {
        throw ConfigError("representation recall: width must divide into 2N segments");
      }
      t.input_width = c.rr_width;
      t.output_width = c.rr_width / 2;
      t.reconstruction_width = c.rr_width;
      t.metric_channels = t.output_width;
      break;
    case TaskKind::kNthFarthest:
      t.input_width = kFarthestInput;
      t.output_width = kFarthestVectors;
      t.reconstruction_width = kFarthestInput;
      t.metric_channels = kFarthestVectors;
      t.task_loss = LossKind::kSoftmaxCrossEntropy;
      t.mr_loss = LossKind::kSquaredError;
      t.metric = MetricKind::kCategoricalAccuracy;
      break;
    case TaskKind::kConvexHull:
      t.input_width = kHullInput;
      t.output_width = kHullSlots;
      t.reconstruction_width = kHullInput;
      t.metric_channels = kHullSlots;
      t.task_loss = LossKind::kSoftmaxCrossEntropy;
      t.mr_loss = LossKind::kSquaredError;
      t.metric = MetricKind::kCategoricalAccuracy;
      break;
    case TaskKind::kBabi:
      // Vocabulary-dependent widths are filled in from the corpus.
      t.input_width = 1;
      t.task_loss = LossKind::kSoftmaxCrossEntropy;
      t.mr_loss = LossKind::kSoftmaxCrossEntropy;
      t.metric = MetricKind::kWordErrorRate;
      break;
  }
  return t;
}

Episode Episode::blank(std::size_t steps, std::size_t input_width, std::size_t output_width) {
  Episode ep;
  ep.steps = steps;
  ep.input_width = input_width;
  ep.output_width = output_width;
  ep.inputs.assign(steps * input_width, 0.0);
  ep.targets.assign(steps * output_width, 0.0);
  ep.mask.story.assign(steps, 0);
  ep.mask.answer.assign(steps, 0);
  ep.mask.sampled.assign(steps, 0);
  return ep;
}

Episode gen_copy(Rng& rng, const TaskConfig& c) {
  const std::size_t W = c.width;
  const auto len = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(c.min_len),
                                                        static_cast<std::int64_t>(c.max_len)));
  Episode ep = Episode::blank(2 * len + 1, W + 2, W + 2);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t b = 0; b < W; ++b) {
      const double bit = rng.bernoulli(0.5) ? 1.0 : 0.0;
      ep.in(t, b) = bit;
      ep.out(len + 1 + t, b) = bit;
    }
    ep.in(t, W) = 1.0;
  }
  ep.in(len, W + 1) = 1.0;
  mark(ep.mask.story, 0, len);
  mark(ep.mask.answer, len + 1, 2 * len + 1);
  return ep;
}

Episode gen_assoc_recall(Rng& rng, const TaskConfig& c) {
  const std::size_t W = c.width, N = c.item_len;
  const auto items = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(std::max<std::size_t>(c.min_len, 2)),
                  static_cast<std::int64_t>(std::max<std::size_t>(c.max_len, 2))));
  // Distinct items keep the query's successor unambiguous.
  std::vector<std::vector<double>> bits;
  while (bits.size() < items) {
    std::vector<double> item(N * W);
    for (double& b : item) b = rng.bernoulli(0.5) ? 1.0 : 0.0;
    if (std::find(bits.begin(), bits.end(), item) == bits.end()) bits.push_back(std::move(item));
  }
  const std::size_t query = rng.below(items - 1);
  const std::size_t story = items * N;
  Episode ep = Episode::blank(story + 2 * N, W + 2, W + 2);
  for (std::size_t i = 0; i < items; ++i) {
    for (std::size_t r = 0; r < N; ++r) {
      for (std::size_t b = 0; b < W; ++b) ep.in(i * N + r, b) = bits[i][r * W + b];
      ep.in(i * N + r, W) = 1.0;
    }
  }
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t b = 0; b < W; ++b) {
      ep.in(story + r, b) = bits[query][r * W + b];
      ep.out(story + N + r, b) = bits[query + 1][r * W + b];
    }
    ep.in(story + r, W + 1) = 1.0;
  }
  mark(ep.mask.story, 0, story);
  mark(ep.mask.answer, story + N, story + 2 * N);
  return ep;
}

Episode gen_repr_recall(Rng& rng, const TaskConfig& c) {
  const std::size_t V = c.rr_vectors, W = c.rr_width, N = c.segments;
  if (N == 0 || W % (2 * N) != 0) throw ConfigError("representation recall: width must divide into 2N segments");
  const std::size_t seg = W / (2 * N);
  const auto cues = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(c.min_cues),
                                                         static_cast<std::int64_t>(c.max_cues)));
  Episode ep = Episode::blank(V + cues, W, N * seg);
  for (std::size_t v = 0; v < V; ++v)
    for (std::size_t b = 0; b < W; ++b) ep.in(v, b) = rng.bernoulli(0.5) ? 1.0 : 0.0;

  std::vector<std::size_t> order(2 * N);
  for (std::size_t q = 0; q < cues; ++q) {
    const std::size_t t = V + q;
    const std::size_t v = rng.below(V);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < N; ++i) {  // partial Fisher-Yates: first N kept
      std::swap(order[i], order[i + rng.below(2 * N - i)]);
    }
    std::vector<bool> kept(2 * N, false);
    for (std::size_t i = 0; i < N; ++i) kept[order[i]] = true;
    std::size_t out = 0;
    for (std::size_t s = 0; s < 2 * N; ++s) {
      for (std::size_t b = 0; b < seg; ++b) {
        const double value = ep.in(v, s * seg + b);
        if (kept[s]) {
          ep.in(t, s * seg + b) = value;
        } else {
          ep.out(t, out * seg + b) = value;
        }
      }
      if (!kept[s]) ++out;
    }
  }
  mark(ep.mask.story, 0, V);
  mark(ep.mask.answer, V, V + cues);
  return ep;
}

std::size_t nth_farthest_label(std::span<const std::vector<double>> vectors, std::size_t query,
                               std::size_t n) {
  std::vector<double> dist(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    double d = 0;
    for (std::size_t j = 0; j < vectors[i].size(); ++j) {
      const double diff = vectors[i][j] - vectors[query][j];
      d += diff * diff;
    }
    dist[i] = d;
  }
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  return order.at(n - 1);
}

Episode gen_nth_farthest(Rng& rng) {
  const std::size_t V = kFarthestVectors, D = kFarthestDims;
  std::vector<std::vector<double>> vectors(V, std::vector<double>(D));
  for (auto& v : vectors)
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
  std::vector<std::size_t> ids(V);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = V - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
  const std::size_t n = rng.below(V) + 1;
  const std::size_t query = rng.below(V);  // position; announced by its id

  Episode ep = Episode::blank(V + 1, kFarthestInput, V);
  for (std::size_t t = 0; t < V; ++t) {
    for (std::size_t j = 0; j < D; ++j) ep.in(t, j) = vectors[t][j];
    ep.in(t, D + ids[t]) = 1.0;
    ep.in(t, D + V + (n - 1)) = 1.0;
    ep.in(t, D + 2 * V + ids[query]) = 1.0;
  }
  ep.out(V, ids[nth_farthest_label(vectors, query, n)]) = 1.0;
  mark(ep.mask.story, 0, V);
  ep.mask.answer[V] = 1;
  return ep;
}

std::vector<std::size_t> convex_hull_ccw(std::span<const Point> points) {
  const std::size_t n = points.size();
  if (n < 3) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return points[a].x < points[b].x || (points[a].x == points[b].x && points[a].y < points[b].y);
  });
  // Andrew's monotone chain.
  std::vector<std::size_t> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(points[hull[k - 2]], points[hull[k - 1]], points[idx[i]]) <= 0) --k;
    hull[k++] = idx[i];
  }
  for (std::size_t i = n - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(points[hull[k - 2]], points[hull[k - 1]], points[idx[i]]) <= 0) --k;
    hull[k++] = idx[i];
  }
  hull.resize(k - 1);
  const auto start = std::min_element(hull.begin(), hull.end(), [&](std::size_t a, std::size_t b) {
    return points[a].y < points[b].y || (points[a].y == points[b].y && points[a].x < points[b].x);
  });
  std::rotate(hull.begin(), start, hull.end());
  return hull;
}

Episode gen_convex_hull(Rng& rng, std::size_t count) {
  if (count < 3 || count > kHullSlots) throw ConfigError("convex hull: point count must be in [3, 20]");
  std::vector<Point> pts(count);
  do {
    for (auto& p : pts) p = {rng.uniform(), rng.uniform()};
  } while (any_collinear(pts));
  const auto hull = convex_hull_ccw(pts);

  Episode ep = Episode::blank(count + hull.size(), kHullInput, kHullSlots);
  for (std::size_t t = 0; t < count; ++t) {
    ep.in(t, 0) = pts[t].x;
    ep.in(t, 1) = pts[t].y;
    ep.in(t, 2 + t) = 1.0;
  }
  for (std::size_t j = 0; j < hull.size(); ++j) {
    ep.in(count + j, kHullInput - 1) = 1.0;
    ep.out(count + j, hull[j]) = 1.0;
  }
  mark(ep.mask.story, 0, count);
  mark(ep.mask.answer, count, count + hull.size());
  return ep;
}

Episode generate_episode(Rng& rng, const TaskConfig& c) {
  switch (c.kind) {
    case TaskKind::kCopy: return gen_copy(rng, c);
    case TaskKind::kAssociativeRecall: return gen_assoc_recall(rng, c);
    case TaskKind::kRepresentationRecall: return gen_repr_recall(rng, c);
    case TaskKind::kNthFarthest: return gen_nth_farthest(rng);
    case TaskKind::kConvexHull: {
      const auto n = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(c.min_points),
                                                          static_cast<std::int64_t>(c.max_points)));
      return gen_convex_hull(rng, n);
    }
    case TaskKind::kBabi: break;
  }
  throw ConfigError("bAbI episodes come from a loaded corpus, not a generator");
}

EpisodeBatch generate_batch(const TaskConfig& config, std::uint64_t seed, std::size_t batch) {
  EpisodeBatch out;
  out.task = task_name(config.kind);
  out.seed = seed;
  out.episodes.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    Rng rng(mix_seed(seed, i));
    out.episodes.push_back(generate_episode(rng, config));
  }
  return out;
}

bool validate_episode(const Episode& ep, const TaskConfig& config) {
  try {
    ep.mask.validate();
  } catch (const Error&) {
    return false;
  }
  if (ep.inputs.size() != ep.steps * ep.input_width || ep.targets.size() != ep.steps * ep.output_width) {
    return false;
  }
  // Story steps carry no targets.
  for (std::size_t t = 0; t < ep.steps; ++t) {
    if (!ep.mask.answer[t] && !all_zero(ep.target(t))) return false;
  }
  switch (config.kind) {
    case TaskKind::kCopy: return validate_copy(ep, config);
    case TaskKind::kAssociativeRecall: return validate_assoc(ep, config);
    case TaskKind::kRepresentationRecall: return validate_repr(ep, config);
    case TaskKind::kNthFarthest: return validate_farthest(ep);
    case TaskKind::kConvexHull: return validate_hull(ep);
    case TaskKind::kBabi: {
      for (std::size_t t = 0; t < ep.steps; ++t) {
        if (ep.mask.answer[t] && ep.target(t)[argmax(ep.target(t))] != 1.0) return false;
      }
      return true;
    }
  }
  return false;
}

}  // namespace dam
