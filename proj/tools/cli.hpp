// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace shapenet::cli {

/// A command-line flag mirrored into the resolved configuration.
struct Binding {
  CLI::Option* option = nullptr;
  nlohmann::json::json_pointer key;
  std::function<nlohmann::json()> value;
};

/// Per-subcommand state collected while parsing.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::string* config_path = nullptr;
  std::string* out_dir = nullptr;
  std::vector<Binding> bindings;
  std::function<void(const nlohmann::json& config, std::ostream& log)> run;
};

/// The `shapenet` application with every subcommand registered. The returned
/// object owns all flag storage.
struct Application {
  std::unique_ptr<CLI::App> app;
  std::vector<std::unique_ptr<Command>> commands;
  std::vector<std::shared_ptr<void>> storage;
};

std::unique_ptr<Application> make_application();

/// Built-in defaults for every configuration key.
nlohmann::json default_config();

/// Defaults, overlaid by the config file, overlaid by explicitly given flags.
nlohmann::json resolve_config(const Command& command);

/// Runs the tool; returns the process exit code (0 ok, 1 usage, 2 data, 3 runtime).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace shapenet::cli
