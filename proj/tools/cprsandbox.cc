// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cpr/error.h"
#include "cpr/experiment.h"
#include "cpr/players.h"
#include "cpr/session.h"
#include "cpr/session_server.h"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::string preset;
  bool quiet = false;
};

cpr::ExperimentConfig resolve_config(const GlobalFlags& flags) {
  cpr::ConfigOverrides overrides;
  if (!flags.preset.empty()) overrides.preset = cpr::preset_from_name(flags.preset);
  overrides.seed = flags.seed;
  if (!flags.out.empty()) overrides.out = flags.out;
  if (flags.config.empty()) return cpr::experiment_config_from_json(nlohmann::json::object(), overrides);
  return cpr::load_experiment_config(flags.config, overrides);
}

void print_result(const cpr::StageResult& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  if (r.manifest.is_null()) return;
  std::cout << r.dir.string() << "  artifact " << r.manifest.value("artifact_hash", std::string())
            << "\n";
}

cpr::SessionServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

int serve(const GlobalFlags& flags, const std::string& host, int port, const std::string& ensemble_dir,
          const std::string& log_dir, const std::string& session_file, double tick) {
  cpr::SessionManager::Options options;
  std::filesystem::path ensemble_path = ensemble_dir;
  if (ensemble_path.empty() && !flags.out.empty()) {
    const auto candidate = std::filesystem::path(flags.out) / "clone" / "ensemble";
    if (std::filesystem::exists(candidate / "ensemble.json")) ensemble_path = candidate;
  }
  if (!ensemble_path.empty()) options.clones = cpr::load_ensemble(ensemble_path);
  options.log_dir = log_dir;
  cpr::SessionManager manager(std::move(options));
  if (!session_file.empty()) {
    std::ifstream in(session_file);
    if (!in) throw cpr::Error(cpr::ErrorCode::kMissingArtifact, "cannot open " + session_file);
    cpr::SessionOptions opts = cpr::session_options_from_json(nlohmann::json::parse(in));
    if (flags.seed) opts.seed = *flags.seed;
    std::cout << "session " << manager.create_session(opts) << "\n";
  }
  cpr::SessionServer server(manager, {host, port, tick});
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::cout << "listening on " << host << ":" << port << std::endl;
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Common-pool resource allocation sandbox"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--config", flags.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "Root seed; overrides the config");
  app.add_option("--out", flags.out, "Output directory; overrides the config");
  app.add_option("--preset", flags.preset, "Hyperparameter preset")
      ->check(CLI::IsMember({"paper_exact", "desk_scale"}));
  app.add_flag("-q,--quiet", flags.quiet, "Suppress progress lines");

  using Stage = cpr::StageResult (*)(const cpr::ExperimentConfig&, const cpr::StageLog&);
  const std::pair<const char*, Stage> stages[] = {
      {"simulate", cpr::run_simulate},         {"make-corpus", cpr::run_make_corpus},
      {"train-bc", cpr::run_train_bc},         {"train-planner", cpr::run_train_planner},
      {"evaluate", cpr::run_evaluate},         {"sweep-k", cpr::run_sweep_k},
      {"probe-pool", cpr::run_probe_pool},     {"sweep-params", cpr::run_sweep_params},
  };
  const char* descriptions[] = {
      "Play N games per mechanism and write logs and reports",
      "Generate the synthetic training corpus",
      "Train behavioural clones on the corpus",
      "Train the planner against the clone ensemble",
      "Evaluate mechanisms against the clone ensemble",
      "Sweep the interpolating baseline's exponent",
      "Probe the planner with a rescaled observed pool",
      "Sweep pool size, growth and the Gini penalty",
  };
  std::vector<std::pair<CLI::App*, Stage>> commands;
  for (size_t i = 0; i < std::size(stages); ++i) {
    commands.emplace_back(app.add_subcommand(stages[i].first, descriptions[i]), stages[i].second);
  }
  auto* pipeline = app.add_subcommand("pipeline", "make-corpus, train-bc, train-planner, evaluate");
  auto* print_config = app.add_subcommand("print-config", "Print the resolved config");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ensemble_dir, log_dir, session_file;
  double tick = 0.25;
  auto* serve_cmd = app.add_subcommand("serve", "Host live sessions over HTTP");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--ensemble", ensemble_dir, "Clone ensemble directory for non-human seats");
  serve_cmd->add_option("--log-dir", log_dir, "Persist finished sessions here");
  serve_cmd->add_option("--session", session_file, "Create one session from this JSON at startup");
  serve_cmd->add_option("--tick", tick, "Timeout polling interval in seconds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (serve_cmd->parsed()) return serve(flags, host, port, ensemble_dir, log_dir, session_file, tick);
    const cpr::ExperimentConfig config = resolve_config(flags);
    cpr::StageLog log;
    if (!flags.quiet) log = [](const std::string& line) { std::cerr << line << std::endl; };
    if (print_config->parsed()) {
      std::cout << cpr::experiment_config_to_json(config).dump(2) << "\n";
      return 0;
    }
    if (pipeline->parsed()) {
      for (Stage s : {cpr::run_make_corpus, cpr::run_train_bc, cpr::run_train_planner, cpr::run_evaluate}) {
        print_result(s(config, log));
      }
      return 0;
    }
    for (const auto& [cmd, stage] : commands) {
      if (cmd->parsed()) print_result(stage(config, log));
    }
    return 0;
  } catch (const cpr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == cpr::ErrorCode::kInvalidConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
