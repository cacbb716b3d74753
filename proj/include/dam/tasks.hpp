// SPDX-License-Identifier: Apache-2.0
//
// Seedable episode generators for the synthetic benchmarks and bAbI
// ingestion. Every generator is a pure function of (rng state, config) and
// has a validator that re-derives the targets from the inputs.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dam/objectives.hpp"
#include "dam/rng.hpp"

namespace dam {

enum class TaskKind { kCopy, kAssociativeRecall, kRepresentationRecall, kNthFarthest, kConvexHull, kBabi };

TaskKind parse_task(const std::string& name);
std::string task_name(TaskKind kind);

enum class MetricKind {
  kBitAccuracy,          // 1 - mean |round(σ(y)) - o|
  kCategoricalAccuracy,  // argmax match rate
  kWordErrorRate,        // % of answer words predicted wrong
};

struct TaskConfig {
  TaskKind kind = TaskKind::kCopy;
  // copy / associative recall
  std::size_t width = 8;      // W
  std::size_t min_len = 8;    // L_i range (items for associative recall)
  std::size_t max_len = 32;
  std::size_t item_len = 3;   // N_i
  // representation recall
  std::size_t rr_vectors = 8;   // L_i
  std::size_t rr_width = 64;    // W
  std::size_t segments = 2;     // N; each vector has 2N segments
  std::size_t min_cues = 8;     // L_c range
  std::size_t max_cues = 16;
  // convex hull
  std::size_t min_points = 5;
  std::size_t max_points = 20;
};

/// Shapes and objective choices implied by a task.
struct TaskTraits {
  std::size_t input_width = 0;           // d_i as stored in episodes
  std::size_t output_width = 0;          // d_o
  std::size_t reconstruction_width = 0;  // 0 = reuse the task head for MRL
  std::size_t metric_channels = 0;       // leading output channels scored
  LossKind task_loss = LossKind::kSigmoidCrossEntropy;
  LossKind mr_loss = LossKind::kSigmoidCrossEntropy;
  MetricKind metric = MetricKind::kBitAccuracy;
};

TaskTraits task_traits(const TaskConfig& config);

struct Episode {
  std::size_t steps = 0;
  std::size_t input_width = 0;
  std::size_t output_width = 0;
  std::vector<double> inputs;   // [steps, input_width]
  std::vector<double> targets;  // [steps, output_width]; zero off the answer phase
  PhaseMask mask;

  std::span<const double> input(std::size_t t) const {
    return std::span<const double>(inputs).subspan(t * input_width, input_width);
  }
  std::span<const double> target(std::size_t t) const {
    return std::span<const double>(targets).subspan(t * output_width, output_width);
  }
  double& in(std::size_t t, std::size_t c) { return inputs[t * input_width + c]; }
  double& out(std::size_t t, std::size_t c) { return targets[t * output_width + c]; }

  static Episode blank(std::size_t steps, std::size_t input_width, std::size_t output_width);
};

struct EpisodeBatch {
  std::string task;
  std::uint64_t seed = 0;
  std::vector<Episode> episodes;
};

Episode gen_copy(Rng& rng, const TaskConfig& config);
Episode gen_assoc_recall(Rng& rng, const TaskConfig& config);
Episode gen_repr_recall(Rng& rng, const TaskConfig& config);
Episode gen_nth_farthest(Rng& rng);
Episode gen_convex_hull(Rng& rng, std::size_t points);

/// Dispatches to the task's generator (bAbI is corpus-driven, see below).
Episode generate_episode(Rng& rng, const TaskConfig& config);
/// Episode i uses its own stream seeded from mix_seed(seed, i).
EpisodeBatch generate_batch(const TaskConfig& config, std::uint64_t seed, std::size_t batch);

/// Re-derives the expected targets from the inputs; false on any mismatch.
bool validate_episode(const Episode& episode, const TaskConfig& config);

// Geometry helpers shared by the hull generator and its oracles.
struct Point {
  double x = 0, y = 0;
};
/// Hull indices, counterclockwise from the lowest (then leftmost) point.
std::vector<std::size_t> convex_hull_ccw(std::span<const Point> points);
/// Indices the n-th farthest (1-based) from `query`, by Euclidean distance.
std::size_t nth_farthest_label(std::span<const std::vector<double>> vectors, std::size_t query,
                               std::size_t n);

// ------------------------------------------------------------------- bAbI

inline constexpr std::size_t kBabiMaxWords = 800;
inline constexpr std::size_t kBabiEmbedding = 64;
inline const char* const kBabiSymbols[] = {"[PAD]", "?", ".", "-"};

struct BabiSample {
  int task = 0;                  // 1..20
  std::vector<std::size_t> tokens;   // model input, answers replaced by '-'
  std::vector<std::size_t> answers;  // one target word per '-' position
};

struct BabiCorpus {
  std::vector<std::string> words;  // id -> token; the four symbols come first
  std::map<std::string, std::size_t> ids;
  std::vector<BabiSample> train;
  std::vector<BabiSample> test;

  std::size_t vocab_size() const { return words.size(); }
  std::size_t symbol_count() const { return 4; }
  std::size_t dash_id() const { return 3; }
  std::size_t pad_id() const { return 0; }
};

struct BabiOptions {
  std::size_t max_words = kBabiMaxWords;
  /// Expected word count excluding symbols; 0 disables the check.
  std::size_t expected_words = 156;
};

/// Lowercased word/punctuation tokens of one line, digits removed.
std::vector<std::string> babi_tokenize(const std::string& text);

/// Loads the joint 20-task en-10k corpus from `dir` (the directory holding
/// qa*_train.txt / qa*_test.txt).
BabiCorpus load_babi(const std::filesystem::path& dir, const BabiOptions& options = {});

/// Locates the en-10k directory under `root` (accepts the directory itself,
/// or the extracted tasks_1-20_v1-2 tree).
std::optional<std::filesystem::path> find_babi_dir(const std::filesystem::path& root);

/// Token episode: input channel 0 holds the token id; targets are one-hot
/// over the vocabulary at '-' positions. `skip_pad` keeps [PAD] out of S(t).
Episode babi_episode(const BabiSample& sample, const BabiCorpus& corpus, bool skip_pad = true);

// --------------------------------------------------------- episode files

/// "DAMD" container: magic, u16 version, then per episode a u32 byte length
/// followed by u32 steps, u32 d_i, u32 d_o, f32 inputs, f32 targets and the
/// S / A / α masks as u8.
inline constexpr std::uint16_t kEpisodeFormatVersion = 1;

void write_episodes(std::ostream& out, std::span<const Episode> episodes);
std::vector<Episode> read_episodes(std::istream& in);

}  // namespace dam
