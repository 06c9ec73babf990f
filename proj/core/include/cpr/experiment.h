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

#ifndef CPR_EXPERIMENT_H_
#define CPR_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpr/analysis.h"
#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/planner.h"
#include "cpr/players.h"

namespace cpr {

inline constexpr char kManifestSchemaVersion[] = "1";
inline constexpr char kExperimentSchemaVersion[] = "1";
// Stands in for the planner trained by the train-planner stage.
inline constexpr char kStagePlannerCheckpoint[] = "@planner";

enum class Preset { kPaperExact, kDeskScale };
std::string preset_name(Preset preset);
Preset preset_from_name(std::string_view name);

struct CorpusSection {
  int games = 12;
  // Arm sizes of the reference corpus; other totals are split in proportion.
  int reference_total = 537;
  int reference_random = 36;
  int reference_weighted = 303;
  double max_retention = 0.4;
  double interpolating_log_k_min = -5.0;
  double interpolating_log_k_max = 5.0;
};

struct CloneSection {
  CloneConfig model;
  CloneTrainHyper hyper = CloneTrainHyper::DeskScale();
  // One clone per distinct player id in the corpus instead of a pooled model.
  bool per_archetype = true;
  double holdout_fraction = 0.1;
  int ensemble_size = 4;
  int selection_episodes = 40;
};

struct PlannerSection {
  PlannerConfig model;
  PlannerTrainHyper hyper = PlannerTrainHyper::DeskScale();
  int selection_episodes = 16;
};

struct EvaluateSection {
  int games = 16;
  std::vector<MechanismSpec> mechanisms;
  bool write_logs = false;
};

struct SimulateSection {
  int games = 40;
  std::vector<MechanismSpec> mechanisms;
};

struct SweepKSection {
  int episodes_per_k = 8;
};

struct ProbePoolSection {
  std::vector<double> coefficients = default_pool_scaling_grid();
  int episodes = 16;
};

struct SweepParamsSection {
  std::vector<MechanismSpec> mechanisms;
  std::vector<double> pool_grid = {100.0, 200.0, 400.0};
  std::vector<double> growth_grid = {1.2, 1.4, 1.6};
  int episodes = 8;
  // Gini-penalty sweep: one planner per value, trained for lambda_steps.
  std::vector<double> lambdas;
  int lambda_steps = 300;
  int lambda_eval_games = 64;
  // Long fixed-horizon games with the stage planner; 0 disables.
  int long_rounds = 0;
  int long_games = 8;
};

struct ExperimentConfig {
  Preset preset = Preset::kDeskScale;
  std::optional<uint64_t> seed;
  std::filesystem::path out = "runs/default";
  GameConfig game;
  std::vector<Archetype> population;
  // Table for simulate, sweep-k and sweep-params: "scripted" plays the
  // population, "ensemble" the trained clones. Evaluation always uses clones.
  std::string players = "scripted";
  HeadMode head = HeadMode::kCategoricalBin;
  DrawMode draw = DrawMode::kFixedSlots;
  CorpusSection corpus;
  CloneSection clone;
  PlannerSection planner;
  EvaluateSection evaluate;
  SimulateSection simulate;
  SweepKSection sweep_k;
  ProbePoolSection probe_pool;
  SweepParamsSection sweep_params;

  static ExperimentConfig Defaults(Preset preset);
  void validate() const;
  uint64_t root_seed() const;
};

// Mixed scripted population used by corpus generation and simulations.
std::vector<Archetype> default_population();

struct ConfigOverrides {
  std::optional<Preset> preset;
  std::optional<uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

// Keys absent from `j` keep the preset defaults. Errors name the offending field.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             const ConfigOverrides& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const ConfigOverrides& overrides = {});
// Canonical form; the output directory is left out so hashes do not depend on it.
nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);
std::string git_describe();

using StageLog = std::function<void(const std::string&)>;

struct StageResult {
  std::filesystem::path dir;
  nlohmann::ordered_json manifest;
  std::vector<std::string> warnings;
};

// Each stage writes into <out>/<stage>/ and finishes with manifest.json.
// Upstream artifacts are read from their stage directories; a missing one
// throws MissingArtifact naming the expected path.
StageResult run_simulate(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_make_corpus(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_train_bc(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_train_planner(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_evaluate(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_sweep_k(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_probe_pool(const ExperimentConfig& config, const StageLog& log = {});
StageResult run_sweep_params(const ExperimentConfig& config, const StageLog& log = {});

struct CorpusArms {
  int random = 0;
  int weighted = 0;
  int interpolating = 0;
};
CorpusArms corpus_arms(const CorpusSection& corpus);

// Reads every episode file of a stage's games/ directory in name order.
std::vector<EpisodeLog> load_corpus(const std::filesystem::path& corpus_dir);

std::filesystem::path stage_dir(const ExperimentConfig& config, std::string_view stage);

}  // namespace cpr

#endif  // CPR_EXPERIMENT_H_
