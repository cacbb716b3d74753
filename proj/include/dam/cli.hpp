// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, eval, gradcheck and datagen subcommands
// driven by a flat key=value configuration.
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dam/trainer.hpp"

namespace dam::cli {

/// Effective configuration, key -> textual value.
using Settings = std::map<std::string, std::string>;

/// Every accepted key with its task-independent default.
const Settings& base_settings();

/// Full-size hyperparameters for a task, layered over base_settings().
Settings task_defaults(TaskKind kind);

/// key=value per line, '#' starts a comment. Unknown keys throw ConfigError.
Settings parse_config(std::istream& in, const std::string& source);
Settings load_config_file(const std::string& path);

/// Layers defaults for the resolved task, then the file, then overrides.
Settings resolve(const Settings& file, const Settings& overrides);

TrainOptions to_train_options(const Settings& settings);

/// Renders settings as a config file that parses back to the same map.
std::string render(const Settings& settings);

/// Exit status 0 on success; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dam::cli
