// SPDX-License-Identifier: Apache-2.0
#include "dam/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "dam/error.hpp"

namespace dam {

namespace {

// Independent streams derived from an episode seed.
constexpr std::uint64_t kDropoutStream = 0x64726f706f757431ULL;
constexpr std::uint64_t kMrlStream = 0x6d726c2d616c7068ULL;
constexpr std::uint64_t kHeldoutStream = 0x68656c646f757421ULL;
constexpr std::uint64_t kInitStream = 0x696e697469616c21ULL;

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct EpisodeGrad {
  std::vector<std::vector<double>> grads;
  EpisodeForward forward;
};

EpisodeGrad episode_gradient(const Episode& ep, const DamParameters& params, const TrainOptions& o,
                             const TaskTraits& traits, std::uint64_t episode_seed) {
  const auto named = params.named();
  for (const auto& p : named) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Rng dropout_rng(episode_seed ^ kDropoutStream);
  EpisodeGrad out;
  Graph graph;
  {
    GraphScope scope(graph);
    out.forward = forward_episode(ep, params, o.model, traits, true, o.mrl_enabled, dropout_rng);
    graph.backward(out.forward.loss);
  }
  out.grads.reserve(named.size());
  for (const auto& p : named) out.grads.push_back(p.tensor.grad());
  return out;
}

}  // namespace

// ------------------------------------------------------------ episode passes

EpisodeForward forward_episode(const Episode& ep, const DamParameters& params, const ModelConfig& model,
                               const TaskTraits& traits, bool training, bool mrl_enabled, Rng& dropout_rng) {
  ep.mask.validate();
  if (ep.mask.length() != ep.steps) throw ShapeError("episode mask length differs from its step count");

  EpisodeForward f;
  std::vector<Tensor> reconstructions(ep.steps);
  f.outputs.reserve(ep.steps);
  RecurrentState state = RecurrentState::initial(model);
  for (std::size_t t = 0; t < ep.steps; ++t) {
    const bool reconstruct = mrl_enabled && ep.mask.sampled[t];
    StepResult s = dam_step(embed_input(ep.input(t), model, params), state, params, model, training,
                            dropout_rng, reconstruct);
    f.outputs.push_back(s.output);
    if (reconstruct) reconstructions[t] = s.reconstruction;
    f.diagnostics.push_back(std::move(s.diagnostics));
    state = std::move(s.state);
  }

  const Tensor task = task_loss(traits.task_loss, f.outputs, ep.targets, ep.output_width, ep.mask.answer);
  f.report.task_loss = task.item();
  if (!mrl_enabled) {
    f.loss = task;
    f.report.total = task.item();
    return f;
  }
  const Tensor mr = mr_loss(traits.mr_loss, reconstructions, ep.inputs, ep.input_width, ep.mask.sampled);
  f.report.gamma = gamma(ep.mask.story, ep.mask.sampled, ep.mask.answer);
  f.report.mr_loss = mr.item();
  f.report.sampled_count = ep.mask.sampled_count();
  f.loss = total_loss(task, mr, f.report.gamma);
  f.report.total = f.loss.item();
  return f;
}

double MetricTally::value(MetricKind kind) const {
  if (count == 0) return kind == MetricKind::kWordErrorRate ? 0.0 : 1.0;
  if (kind == MetricKind::kWordErrorRate) return 100.0 * errors / count;
  return 1.0 - errors / count;
}

MetricTally score_episode(const Episode& ep, const std::vector<Tensor>& outputs, const TaskTraits& traits) {
  if (outputs.size() != ep.steps) throw ShapeError("score_episode: one output per step expected");
  MetricTally tally;
  for (std::size_t t = 0; t < ep.steps; ++t) {
    if (!ep.mask.answer[t]) continue;
    const auto y = outputs[t].values();
    const auto o = ep.target(t);
    if (traits.metric == MetricKind::kBitAccuracy) {
      const std::size_t n = std::min({traits.metric_channels, y.size(), o.size()});
      for (std::size_t c = 0; c < n; ++c) {
        // round(σ(y)) is 1 exactly when y >= 0
        const double bit = y[c] >= 0 ? 1.0 : 0.0;
        tally.errors += std::abs(bit - o[c]);
        tally.count += 1;
      }
    } else {
      const std::size_t truth = o.size() == 1 ? static_cast<std::size_t>(o[0]) : argmax(o);
      tally.errors += argmax(y) == truth ? 0.0 : 1.0;
      tally.count += 1;
    }
  }
  return tally;
}

EvalResult evaluate(const DamParameters& params, const ModelConfig& model, const TaskTraits& traits,
                    std::span<const Episode> episodes) {
  if (active_graph() != nullptr) throw GraphError("evaluate must run without an active graph");
  EvalResult r;
  r.kind = traits.metric;
  MetricTally tally;
  Rng unused(0);
  for (const Episode& source : episodes) {
    Episode ep = source;
    ep.mask.sampled = ep.mask.story;
    const EpisodeForward f = forward_episode(ep, params, model, traits, false, true, unused);
    tally.merge(score_episode(ep, f.outputs, traits));
    r.task_loss += f.report.task_loss;
    r.mr_loss += f.report.mr_loss;
    ++r.episodes;
  }
  if (r.episodes > 0) {
    r.task_loss /= static_cast<double>(r.episodes);
    r.mr_loss /= static_cast<double>(r.episodes);
  }
  r.metric = tally.value(r.kind);
  return r;
}

// ---------------------------------------------------------------------- train

void apply_task_shapes(ModelConfig& model, const TaskConfig& task, const BabiCorpus* corpus) {
  const TaskTraits t = task_traits(task);
  if (task.kind == TaskKind::kBabi) {
    if (corpus == nullptr) throw ConfigError("bAbI needs a loaded corpus");
    model.vocab = corpus->vocab_size();
    model.input = kBabiEmbedding;
    model.output = corpus->vocab_size();
    model.reconstruction = 0;
    return;
  }
  model.vocab = 0;
  model.input = t.input_width;
  model.output = t.output_width;
  model.reconstruction = t.reconstruction_width;
}

namespace {

std::shared_ptr<const BabiCorpus> maybe_load_corpus(const TrainOptions& o) {
  if (o.task.kind != TaskKind::kBabi) return nullptr;
  const auto dir = find_babi_dir(o.babi_path);
  if (!dir) throw ConfigError("bAbI en-10k data not found under '" + o.babi_path.string() + "'");
  return std::make_shared<const BabiCorpus>(load_babi(*dir));
}

TaskTraits traits_for(const TrainOptions& o, const BabiCorpus* corpus) {
  TaskTraits t = task_traits(o.task);
  if (corpus) {
    t.output_width = corpus->vocab_size();
    t.metric_channels = corpus->vocab_size();
  }
  return t;
}

void check_options(const TrainOptions& o) {
  if (o.batch == 0) throw ConfigError("batch must be positive");
  if (o.threads == 0) throw ConfigError("threads must be positive");
  if (!(o.optimizer.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(o.clip_norm > 0)) throw ConfigError("clip norm must be positive");
}

}  // namespace

Trainer::Trainer(TrainOptions options) : options_(std::move(options)) {
  check_options(options_);
  corpus_ = maybe_load_corpus(options_);
  apply_task_shapes(options_.model, options_.task, corpus_.get());
  options_.model.validate();
  traits_ = traits_for(options_, corpus_.get());
  record_.config = options_.model;
  record_.params = DamParameters::init(options_.model, mix_seed(options_.seed, kInitStream));
  record_.seed = options_.seed;
}

Trainer::Trainer(TrainOptions options, TrainRecord record) : options_(std::move(options)) {
  check_options(options_);
  corpus_ = maybe_load_corpus(options_);
  apply_task_shapes(options_.model, options_.task, corpus_.get());
  if (config_hash(options_.model) != config_hash(record.config)) {
    throw ConfigError("checkpoint config mismatch: file has {" + record.config.canonical() + "}, run has {" +
                      options_.model.canonical() + "}");
  }
  // Non-dimensional knobs (p, p_dp) follow the run options.
  record.config = options_.model;
  options_.seed = record.seed;
  traits_ = traits_for(options_, corpus_.get());
  record_ = std::move(record);
}

std::vector<Episode> Trainer::make_batch(std::uint64_t iteration) const {
  const std::uint64_t batch_seed = mix_seed(options_.seed, iteration);
  std::vector<Episode> batch;
  if (corpus_) {
    Rng pick(batch_seed);
    for (std::size_t i = 0; i < options_.batch; ++i) {
      const auto& sample = corpus_->train[pick.below(corpus_->train.size())];
      batch.push_back(babi_episode(sample, *corpus_, options_.babi_skip_pad));
    }
  } else {
    batch = generate_batch(options_.task, batch_seed, options_.batch).episodes;
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng mrl(mix_seed(batch_seed, i) ^ kMrlStream);
    batch[i].mask.sampled = sample_mask(batch[i].mask.story, options_.model.reproduce, mrl);
  }
  return batch;
}

IterationMetrics Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t iteration = record_.iteration;
  const std::uint64_t batch_seed = mix_seed(options_.seed, iteration);
  const std::vector<Episode> batch = make_batch(iteration);
  const auto named = record_.params.named();

  std::vector<std::vector<double>> grads;
  grads.reserve(named.size());
  for (const auto& p : named) grads.emplace_back(p.tensor.size(), 0.0);

  IterationMetrics m;
  m.iteration = iteration + 1;
  MetricTally tally;
  const std::size_t workers = std::min(options_.threads, batch.size());

  auto consume = [&](std::size_t i, EpisodeGrad& eg) {
    for (std::size_t p = 0; p < grads.size(); ++p) {
      auto& dst = grads[p];
      const auto& src = eg.grads[p];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    m.loss_task += eg.forward.report.task_loss;
    m.loss_mr += eg.forward.report.mr_loss;
    m.gamma += eg.forward.report.gamma;
    tally.merge(score_episode(batch[i], eg.forward.outputs, traits_));
    if (i == 0 && options_.log_gates) {
      pending_gates_.clear();
      for (const auto& d : eg.forward.diagnostics) {
        std::vector<double> flat;
        for (std::size_t k = 0; k < options_.model.blocks; ++k)
          for (const auto& head : d.gates) flat.push_back(head[k]);
        pending_gates_.push_back(std::move(flat));
      }
    }
  };
  m.gamma = 0;

  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EpisodeGrad eg = episode_gradient(batch[i], record_.params, options_, traits_, mix_seed(batch_seed, i));
      consume(i, eg);
    }
  } else {
    // Each worker owns a private copy; episodes are reduced in index order,
    // so the result matches the single-threaded sum bit for bit.
    std::vector<DamParameters> copies;
    for (std::size_t w = 0; w < workers; ++w) copies.push_back(record_.params.clone());
    for (std::size_t base = 0; base < batch.size(); base += workers) {
      const std::size_t n = std::min(workers, batch.size() - base);
      std::vector<EpisodeGrad> results(n);
      std::vector<std::exception_ptr> errors(n);
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < n; ++w) {
        pool.emplace_back([&, w] {
          try {
            results[w] = episode_gradient(batch[base + w], copies[w], options_, traits_,
                                          mix_seed(batch_seed, base + w));
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (std::size_t w = 0; w < n; ++w) consume(base + w, results[w]);
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grads)
    for (double& v : g) v *= inv_b;
  m.loss_task *= inv_b;
  m.loss_mr *= inv_b;
  m.gamma = options_.mrl_enabled ? m.gamma * inv_b : 1.0;
  if (!std::isfinite(m.loss_task) || !std::isfinite(m.loss_mr)) {
    throw NumericError("non-finite loss at iteration " + std::to_string(m.iteration));
  }
  clip_gradients(grads, options_.clip_norm);
  rmsprop_update(named, grads, record_.optimizer, options_.optimizer);
  record_.iteration = m.iteration;
  m.metric = tally.value(traits_.metric);
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

EvalResult Trainer::evaluate_heldout(std::size_t episodes) const {
  std::vector<Episode> held;
  if (corpus_) {
    const std::size_t n = episodes == 0 ? corpus_->test.size() : std::min(episodes, corpus_->test.size());
    for (std::size_t i = 0; i < n; ++i) held.push_back(babi_episode(corpus_->test[i], *corpus_, options_.babi_skip_pad));
  } else {
    held = generate_batch(options_.task, mix_seed(options_.seed, kHeldoutStream), episodes).episodes;
  }
  return evaluate(record_.params, options_.model, traits_, held);
}

void Trainer::write_checkpoint() const {
  if (options_.out_dir.empty()) return;
  save_checkpoint(options_.out_dir / "checkpoint.damc", record_);
}

void Trainer::run(const std::function<void(const IterationMetrics&)>& on_iteration) {
  std::ofstream metrics, evals, gates;
  if (!options_.out_dir.empty()) {
    std::filesystem::create_directories(options_.out_dir);
    const bool resume = record_.iteration > 0;
    auto open = [&](std::ofstream& f, const char* name, const std::string& header) {
      const auto path = options_.out_dir / name;
      const bool append = resume && std::filesystem::exists(path);
      f.open(path, append ? std::ios::app : std::ios::trunc);
      if (!f) throw FormatError("cannot write " + path.string());
      if (!append) f << header << '\n';
    };
    open(metrics, "metrics.csv", "iter,loss_task,loss_mr,gamma,metric,seconds");
    if (options_.eval_every > 0) open(evals, "eval.csv", "iter,metric,loss_task,loss_mr,episodes");
    if (options_.log_gates) {
      std::string header = "iter,step";
      for (std::size_t k = 0; k < options_.model.blocks; ++k)
        for (std::size_t i = 0; i < options_.model.read_heads; ++i)
          header += ",g" + std::to_string(k) + "h" + std::to_string(i);
      open(gates, "gates.csv", header);
    }
  }

  while (record_.iteration < options_.iterations) {
    const IterationMetrics m = step();
    if (metrics.is_open()) {
      metrics << m.iteration << ',' << fmt(m.loss_task) << ',' << fmt(m.loss_mr) << ',' << fmt(m.gamma) << ','
              << fmt(m.metric) << ',' << fmt(m.seconds) << '\n';
    }
    if (gates.is_open()) {
      for (std::size_t t = 0; t < pending_gates_.size(); ++t) {
        gates << m.iteration << ',' << t;
        for (double g : pending_gates_[t]) gates << ',' << fmt(g);
        gates << '\n';
      }
    }
    if (on_iteration) on_iteration(m);
    if (options_.eval_every > 0 && m.iteration % options_.eval_every == 0) {
      const EvalResult e = evaluate_heldout(options_.eval_episodes);
      if (evals.is_open()) {
        evals << m.iteration << ',' << fmt(e.metric) << ',' << fmt(e.task_loss) << ',' << fmt(e.mr_loss) << ','
              << e.episodes << '\n';
      }
    }
    if (options_.checkpoint_every > 0 && m.iteration % options_.checkpoint_every == 0) {
      metrics.flush();
      write_checkpoint();
    }
  }
  metrics.flush();
  write_checkpoint();
}

}  // namespace dam
