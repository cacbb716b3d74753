// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dam/model.hpp"
#include "dam/objectives.hpp"
#include "dam/tasks.hpp"

namespace dam {

// ------------------------------------------------------------------ optimizer

struct RmsPropOptions {
  double learning_rate = 1e-4;
  double decay = 0.9;
  double momentum = 0.9;
  double epsilon = 1e-10;
};

struct OptimizerSlot {
  std::vector<double> mean_square;
  std::vector<double> momentum;
};

/// ms ← d·ms + (1-d)·g²;  mom ← μ·mom + lr·g/√(ms+ε);  θ ← θ - mom
void rmsprop_step(std::span<double> param, std::span<const double> grad, OptimizerSlot& slot,
                  const RmsPropOptions& options);

/// Applies rmsprop_step to every named parameter; throws NumericError before
/// touching anything if a gradient is non-finite.
void rmsprop_update(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& grads,
                    std::map<std::string, OptimizerSlot>& slots, const RmsPropOptions& options);

/// Global-norm clipping in place; returns the pre-clip norm.
double clip_gradients(std::vector<std::vector<double>>& grads, double max_norm);

// ------------------------------------------------------------ episode passes

struct EpisodeForward {
  Tensor loss;
  LossReport report;
  std::vector<Tensor> outputs;
  std::vector<StepDiagnostics> diagnostics;
};

/// Unrolls the model over one episode and builds its total loss. When
/// `mrl_enabled` is false the objective is the task loss alone and α is
/// ignored.
EpisodeForward forward_episode(const Episode& episode, const DamParameters& params,
                               const ModelConfig& model, const TaskTraits& traits, bool training,
                               bool mrl_enabled, Rng& dropout_rng);

/// Mismatch counter behind every task metric.
struct MetricTally {
  double errors = 0;
  double count = 0;

  void merge(const MetricTally& o) {
    errors += o.errors;
    count += o.count;
  }
  /// Accuracy in [0,1], or word error rate in percent.
  double value(MetricKind kind) const;
};

MetricTally score_episode(const Episode& episode, const std::vector<Tensor>& outputs,
                          const TaskTraits& traits);

struct EvalResult {
  MetricKind kind = MetricKind::kBitAccuracy;
  double metric = 0;
  double task_loss = 0;
  double mr_loss = 0;
  std::size_t episodes = 0;
};

/// Evaluation mode (no dropout); mr_loss reconstructs every story step.
EvalResult evaluate(const DamParameters& params, const ModelConfig& model, const TaskTraits& traits,
                    std::span<const Episode> episodes);

// ----------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainRecord {
  ModelConfig config;
  DamParameters params;
  std::map<std::string, OptimizerSlot> optimizer;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
};

std::uint64_t config_hash(const ModelConfig& config);

void save_checkpoint(std::ostream& out, const TrainRecord& record);
/// Throws ConfigError when `expected` is given and its dimensions differ.
TrainRecord load_checkpoint(std::istream& in, const std::optional<ModelConfig>& expected = std::nullopt);
/// Written via a temporary file and rename, so a crash keeps the previous one.
void save_checkpoint(const std::filesystem::path& path, const TrainRecord& record);
TrainRecord load_checkpoint(const std::filesystem::path& path,
                            const std::optional<ModelConfig>& expected = std::nullopt);

// ---------------------------------------------------------------------- train

struct TrainOptions {
  ModelConfig model;
  TaskConfig task;
  RmsPropOptions optimizer;
  std::size_t batch = 16;
  std::size_t iterations = 1000;
  std::uint64_t seed = 1;
  double clip_norm = 10.0;
  std::size_t checkpoint_every = 1000;
  std::size_t threads = 1;
  std::size_t eval_every = 0;
  std::size_t eval_episodes = 64;
  bool mrl_enabled = true;
  bool log_gates = false;
  std::filesystem::path out_dir;   // empty: nothing written
  std::filesystem::path babi_path;
  bool babi_skip_pad = true;
};

struct IterationMetrics {
  std::uint64_t iteration = 0;
  double loss_task = 0;
  double loss_mr = 0;
  double gamma = 1;
  double metric = 0;
  double seconds = 0;
};

/// Fills the task-dependent model widths (d_i, d_o, reconstruction head,
/// vocabulary) from the task; bAbI needs the corpus.
void apply_task_shapes(ModelConfig& model, const TaskConfig& task, const BabiCorpus* corpus);

class Trainer {
 public:
  explicit Trainer(TrainOptions options);
  /// Continues from a checkpointed record.
  Trainer(TrainOptions options, TrainRecord record);

  /// One optimization step on a fresh batch.
  IterationMetrics step();
  /// Runs until `iterations` total, logging and checkpointing as configured.
  void run(const std::function<void(const IterationMetrics&)>& on_iteration = {});

  /// Fixed held-out episodes derived from the seed.
  EvalResult evaluate_heldout(std::size_t episodes) const;

  const TrainRecord& record() const { return record_; }
  const TrainOptions& options() const { return options_; }
  const TaskTraits& traits() const { return traits_; }

 private:
  std::vector<Episode> make_batch(std::uint64_t iteration) const;
  void write_checkpoint() const;

  TrainOptions options_;
  TaskTraits traits_;
  std::shared_ptr<const BabiCorpus> corpus_;
  TrainRecord record_;
  std::vector<std::vector<double>> pending_gates_;  // [step] -> K·R values
};

}  // namespace dam
