// SPDX-License-Identifier: Apache-2.0
#include "dam/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dam/error.hpp"
#include "dam/gradcheck.hpp"

namespace dam::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void require_known(const std::string& key, const std::string& where) {
  if (!base_settings().contains(key)) throw ConfigError("unknown config key '" + key + "'" + where);
}

std::size_t get_size(const Settings& s, const std::string& key) {
  const std::string& v = s.at(key);
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double get_real(const Settings& s, const std::string& key) {
  const std::string& v = s.at(key);
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  return d;
}

bool get_bool(const Settings& s, const std::string& key) {
  const std::string v = lower(s.at(key));
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "' expects a boolean, got '" + s.at(key) + "'");
}

ModelConfig model_from(const Settings& s) {
  ModelConfig m;
  m.blocks = get_size(s, "k");
  m.addresses = get_size(s, "a");
  m.word = get_size(s, "l");
  m.read_heads = get_size(s, "r");
  m.hidden = get_size(s, "d_h");
  m.reproduce = get_real(s, "p");
  m.dropout = get_real(s, "p_dp");
  m.mlp_layers = get_size(s, "mlp_layers");
  m.mlp_width = get_size(s, "mlp_width");
  return m;
}

fs::path babi_root(const Settings& s) {
  if (!s.at("babi_path").empty()) return s.at("babi_path");
  if (const char* env = std::getenv("DAM_BABI_PATH"); env != nullptr && *env != '\0') return env;
  return {};
}

void print_eval(std::ostream& out, const EvalResult& e) {
  const char* label = e.kind == MetricKind::kWordErrorRate ? "wer_percent" : "accuracy";
  char line[256];
  std::snprintf(line, sizeof line, "%s=%.6f task_loss=%.6f mr_loss=%.6f episodes=%zu", label, e.metric, e.task_loss,
                e.mr_loss, e.episodes);
  out << line << '\n';
}

// ---------------------------------------------------------------- commands

int cmd_train(const Settings& s, const fs::path& out_dir, const fs::path& checkpoint, std::ostream& out) {
  TrainOptions o = to_train_options(s);
  o.out_dir = out_dir;
  // Construct first so invalid settings fail before anything is written.
  std::unique_ptr<Trainer> trainer;
  if (checkpoint.empty()) {
    trainer = std::make_unique<Trainer>(o);
  } else {
    trainer = std::make_unique<Trainer>(o, load_checkpoint(checkpoint));
    out << "resumed from " << checkpoint.string() << " at iteration " << trainer->record().iteration << '\n';
  }
  fs::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config.txt");
    echo << render(s);
    if (!echo) throw FormatError("cannot write " + (out_dir / "config.txt").string());
  }
  out << "parameters: " << trainer->record().params.count() << '\n';
  const std::size_t every = std::max<std::size_t>(1, get_size(s, "log_every"));
  trainer->run([&](const IterationMetrics& m) {
    if (m.iteration % every != 0 && m.iteration != o.iterations) return;
    char line[200];
    std::snprintf(line, sizeof line, "iter %llu loss_task %.5f loss_mr %.5f gamma %.3f metric %.4f",
                  static_cast<unsigned long long>(m.iteration), m.loss_task, m.loss_mr, m.gamma, m.metric);
    out << line << '\n';
  });
  print_eval(out, trainer->evaluate_heldout(o.eval_episodes));
  return 0;
}

int cmd_eval(const Settings& s, const fs::path& checkpoint, std::ostream& out) {
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  TrainOptions o = to_train_options(s);
  TrainRecord record = load_checkpoint(checkpoint);
  // Dimensions come from the checkpoint; the task must still agree with them.
  const ModelConfig stored = record.config;
  o.model.blocks = stored.blocks;
  o.model.addresses = stored.addresses;
  o.model.word = stored.word;
  o.model.read_heads = stored.read_heads;
  o.model.hidden = stored.hidden;
  o.model.mlp_layers = stored.mlp_layers;
  o.model.mlp_width = stored.mlp_width;
  const Trainer trainer(o, std::move(record));
  print_eval(out, trainer.evaluate_heldout(o.eval_episodes));
  return 0;
}

int cmd_gradcheck(const Settings& file, const Settings& overrides, std::ostream& out) {
  ModelConfig cfg = gradcheck_reference_config();
  Settings merged = file;
  for (const auto& [k, v] : overrides) merged[k] = v;
  Settings full = base_settings();
  for (const auto& [k, v] : merged) full[k] = v;
  auto pick = [&](const char* key, std::size_t& field) {
    if (merged.contains(key)) field = get_size(full, key);
  };
  pick("k", cfg.blocks);
  pick("a", cfg.addresses);
  pick("l", cfg.word);
  pick("r", cfg.read_heads);
  pick("d_h", cfg.hidden);
  if (merged.contains("p")) cfg.reproduce = get_real(full, "p");
  if (merged.contains("p_dp")) cfg.dropout = get_real(full, "p_dp");
  const std::size_t steps = get_size(full, "steps");
  GradcheckOptions opts;
  if (merged.contains("seed")) opts.seed = get_size(full, "seed");

  bool ok = true;
  auto report = [&](const GradcheckResult& r) {
    const bool pass = r.passed(opts.tolerance);
    ok = ok && pass;
    char line[200];
    std::snprintf(line, sizeof line, "%-26s max_rel_err %.3e probes %6zu %s", r.name.c_str(), r.max_rel_error,
                  r.probes, pass ? "ok" : "FAIL");
    out << line << '\n';
  };
  for (const auto& r : gradcheck_ops(opts)) report(r);
  report(gradcheck_model(cfg, steps, opts));
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? 0 : 1;
}

int cmd_datagen(const Settings& s, const fs::path& out_dir, std::ostream& out) {
  const TrainOptions o = to_train_options(s);
  const std::size_t n = get_size(s, "episodes");
  std::vector<Episode> episodes;
  if (o.task.kind == TaskKind::kBabi) {
    const auto dir = find_babi_dir(o.babi_path);
    if (!dir) throw ConfigError("bAbI en-10k data not found under '" + o.babi_path.string() + "'");
    const BabiCorpus corpus = load_babi(*dir);
    for (std::size_t i = 0; i < std::min(n, corpus.train.size()); ++i) {
      episodes.push_back(babi_episode(corpus.train[i], corpus, o.babi_skip_pad));
    }
  } else {
    episodes = generate_batch(o.task, o.seed, n).episodes;
  }
  Rng mrl(mix_seed(o.seed, 0x6d726cULL));
  for (auto& ep : episodes) ep.mask.sampled = sample_mask(ep.mask.story, o.model.reproduce, mrl);
  fs::create_directories(out_dir);
  const fs::path path = out_dir / (task_name(o.task.kind) + ".damd");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  write_episodes(f, episodes);
  out << "wrote " << episodes.size() << " episodes to " << path.string() << '\n';
  return 0;
}

}  // namespace

// ----------------------------------------------------------------- settings

const Settings& base_settings() {
  static const Settings s = {
      {"task", "copy"},
      // model
      {"k", "2"}, {"a", "64"}, {"l", "36"}, {"r", "1"}, {"d_h", "128"},
      {"p", "0"}, {"p_dp", "0"}, {"mlp_layers", "0"}, {"mlp_width", "256"},
      // optimisation
      {"lr", "1e-4"}, {"decay", "0.9"}, {"momentum", "0.9"}, {"epsilon", "1e-10"}, {"clip", "10"},
      {"batch", "16"}, {"iterations", "10000"}, {"seed", "1"}, {"threads", "1"}, {"mrl", "true"},
      // logging
      {"checkpoint_every", "1000"}, {"eval_every", "0"}, {"eval_episodes", "64"}, {"log_every", "100"},
      {"log_gates", "false"},
      // task shapes
      {"width", "8"}, {"min_len", "8"}, {"max_len", "32"}, {"item_len", "3"},
      {"rr_vectors", "8"}, {"rr_width", "64"}, {"segments", "2"}, {"min_cues", "8"}, {"max_cues", "16"},
      {"min_points", "5"}, {"max_points", "20"},
      {"babi_path", ""}, {"skip_pad", "true"},
      // datagen / gradcheck
      {"episodes", "100"}, {"steps", "6"},
  };
  return s;
}

Settings task_defaults(TaskKind kind) {
  Settings s = base_settings();
  s["task"] = task_name(kind);
  auto set = [&s](std::initializer_list<std::pair<const char*, const char*>> kv) {
    for (const auto& [k, v] : kv) s[k] = v;
  };
  switch (kind) {
    case TaskKind::kCopy:
      break;
    case TaskKind::kAssociativeRecall:
      set({{"a", "32"}, {"min_len", "2"}, {"max_len", "8"}});
      break;
    case TaskKind::kRepresentationRecall:
      set({{"a", "32"}, {"l", "128"}, {"iterations", "20000"}});
      break;
    case TaskKind::kNthFarthest:
      set({{"k", "6"}, {"a", "16"}, {"l", "128"}, {"r", "4"}, {"d_h", "1024"}, {"mlp_layers", "4"},
           {"batch", "1600"}});
      break;
    case TaskKind::kConvexHull:
      set({{"k", "6"}, {"a", "20"}, {"l", "64"}, {"r", "4"}, {"d_h", "256"}, {"mlp_layers", "2"},
           {"batch", "128"}});
      break;
    case TaskKind::kBabi:
      set({{"k", "2"}, {"a", "128"}, {"l", "48"}, {"r", "4"}, {"d_h", "256"}, {"batch", "32"}, {"lr", "3e-5"},
           {"p_dp", "0.1"}, {"iterations", "100000"}});
      break;
  }
  return s;
}

Settings parse_config(std::istream& in, const std::string& source) {
  Settings s;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = " at " + source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError("expected key=value" + where);
    const std::string key = lower(trim(line.substr(0, eq)));
    require_known(key, where);
    s[key] = trim(line.substr(eq + 1));
  }
  return s;
}

Settings load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_config(in, path);
}

Settings resolve(const Settings& file, const Settings& overrides) {
  std::string task = "copy";
  if (const auto it = file.find("task"); it != file.end()) task = it->second;
  if (const auto it = overrides.find("task"); it != overrides.end()) task = it->second;
  Settings s = task_defaults(parse_task(task));
  for (const auto* layer : {&file, &overrides}) {
    for (const auto& [k, v] : *layer) {
      require_known(k, "");
      s[k] = v;
    }
  }
  s["task"] = task_name(parse_task(task));
  return s;
}

TrainOptions to_train_options(const Settings& s) {
  for (const auto& [k, v] : s) require_known(k, "");
  TrainOptions o;
  o.task.kind = parse_task(s.at("task"));
  o.model = model_from(s);
  o.optimizer.learning_rate = get_real(s, "lr");
  o.optimizer.decay = get_real(s, "decay");
  o.optimizer.momentum = get_real(s, "momentum");
  o.optimizer.epsilon = get_real(s, "epsilon");
  o.clip_norm = get_real(s, "clip");
  o.batch = get_size(s, "batch");
  o.iterations = get_size(s, "iterations");
  o.seed = get_size(s, "seed");
  o.threads = get_size(s, "threads");
  o.mrl_enabled = get_bool(s, "mrl");
  o.checkpoint_every = get_size(s, "checkpoint_every");
  o.eval_every = get_size(s, "eval_every");
  o.eval_episodes = get_size(s, "eval_episodes");
  o.log_gates = get_bool(s, "log_gates");
  o.task.width = get_size(s, "width");
  o.task.min_len = get_size(s, "min_len");
  o.task.max_len = get_size(s, "max_len");
  o.task.item_len = get_size(s, "item_len");
  o.task.rr_vectors = get_size(s, "rr_vectors");
  o.task.rr_width = get_size(s, "rr_width");
  o.task.segments = get_size(s, "segments");
  o.task.min_cues = get_size(s, "min_cues");
  o.task.max_cues = get_size(s, "max_cues");
  o.task.min_points = get_size(s, "min_points");
  o.task.max_points = get_size(s, "max_points");
  o.babi_path = babi_root(s);
  o.babi_skip_pad = get_bool(s, "skip_pad");
  if (o.task.kind == TaskKind::kBabi && o.babi_path.empty()) {
    throw ConfigError("bAbI needs babi_path or DAM_BABI_PATH");
  }
  if (o.task.min_len > o.task.max_len || o.task.min_cues > o.task.max_cues || o.task.min_points > o.task.max_points) {
    throw ConfigError("task length range is empty (min > max)");
  }
  return o;
}

std::string render(const Settings& settings) {
  std::ostringstream out;
  out << "# effective configuration\n";
  for (const auto& [k, v] : settings) out << k << '=' << v << '\n';
  return out.str();
}

// ---------------------------------------------------------------------- run

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distributed associative memory: training and diagnostics"};
  app.require_subcommand(1);
  app.name(args.empty() ? "dam" : args.front());

  std::string config_path, out_dir = "dam_run", checkpoint;
  std::map<std::string, std::string> flag_values;
  std::vector<CLI::App*> subs;
  for (const char* name : {"train", "eval", "gradcheck", "datagen"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--checkpoint", checkpoint, "checkpoint to resume or evaluate");
    for (const auto& [key, _] : base_settings()) {
      sub->add_option("--" + key, flag_values[key], "config key " + key);
    }
    subs.push_back(sub);
  }
  subs[0]->description("train and write metrics.csv plus checkpoints");
  subs[1]->description("evaluate a checkpoint on held-out episodes");
  subs[2]->description("finite-difference gradient check");
  subs[3]->description("write generated episodes to a .damd file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    Settings overrides;
    for (const auto& [key, _] : base_settings()) {
      bool given = false;
      for (auto* sub : subs) given = given || (sub->parsed() && sub->count("--" + key) > 0);
      if (given) overrides[key] = flag_values[key];
    }
    const Settings file = config_path.empty() ? Settings{} : load_config_file(config_path);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gradcheck") return cmd_gradcheck(file, overrides, out);
    const Settings s = resolve(file, overrides);
    if (cmd == "train") return cmd_train(s, out_dir, checkpoint, out);
    if (cmd == "eval") return cmd_eval(s, checkpoint, out);
    return cmd_datagen(s, out_dir, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dam::cli
