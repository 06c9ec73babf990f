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

#include "cpr/experiment.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "cpr/analysis.h"
#include "cpr/episode_io.h"
#include "cpr/error.h"
#include "cpr/nn/checkpoint.h"
#include "cpr/stats.h"

#ifndef CPR_GIT_DESCRIBE
#define CPR_GIT_DESCRIBE "unknown"
#endif

namespace cpr {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing helpers

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kInvalidConfig, path + ": " + what);
}

void check_keys(const nlohmann::json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(path, "expected an object");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) config_error(path + "." + key, "unknown key");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& dst, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    config_error(path + "." + key, e.what());
  }
}

// Runs a module-level parser and prefixes its errors with the field path.
template <typename F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    config_error(path, e.what());
  } catch (const nlohmann::json::exception& e) {
    config_error(path, e.what());
  }
}

nlohmann::json merged(nlohmann::json base, const nlohmann::json& patch) {
  base.merge_patch(patch);
  return base;
}

ojson clone_hyper_to_json(const CloneTrainHyper& h) {
  return {{"batch", h.batch},
          {"steps", h.steps},
          {"schedule", nn::schedule_to_json(h.schedule)},
          {"checkpoint_every", h.checkpoint_every},
          {"clip_norm", h.clip_norm}};
}

void clone_hyper_from_json(const nlohmann::json& j, CloneTrainHyper& h, const std::string& path) {
  check_keys(j, path, {"batch", "steps", "schedule", "checkpoint_every", "clip_norm"});
  read(j, "batch", h.batch, path);
  read(j, "steps", h.steps, path);
  read(j, "checkpoint_every", h.checkpoint_every, path);
  read(j, "clip_norm", h.clip_norm, path);
  if (j.contains("schedule")) {
    h.schedule = with_path(path + ".schedule", [&] {
      return nn::schedule_from_json(merged(nn::schedule_to_json(h.schedule), j.at("schedule")));
    });
  }
}

ojson planner_hyper_to_json(const PlannerTrainHyper& h) {
  return {{"batch", h.batch},
          {"steps", h.steps},
          {"schedule", nn::schedule_to_json(h.schedule)},
          {"checkpoint_every", h.checkpoint_every},
          {"clip_norm", h.clip_norm},
          {"horizon", h.horizon}};
}

void planner_hyper_from_json(const nlohmann::json& j, PlannerTrainHyper& h, const std::string& path) {
  check_keys(j, path, {"batch", "steps", "schedule", "checkpoint_every", "clip_norm", "horizon"});
  read(j, "batch", h.batch, path);
  read(j, "steps", h.steps, path);
  read(j, "checkpoint_every", h.checkpoint_every, path);
  read(j, "clip_norm", h.clip_norm, path);
  read(j, "horizon", h.horizon, path);
  if (j.contains("schedule")) {
    h.schedule = with_path(path + ".schedule", [&] {
      return nn::schedule_from_json(merged(nn::schedule_to_json(h.schedule), j.at("schedule")));
    });
  }
}

std::vector<MechanismSpec> mechanisms_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) config_error(path, "expected an array");
  std::vector<MechanismSpec> out;
  for (size_t i = 0; i < j.size(); ++i) {
    const std::string item = path + "[" + std::to_string(i) + "]";
    nlohmann::json m = j[i];
    if (m.is_object() && !m.contains("checkpoint")) {
      const std::string kind = m.value("kind", std::string());
      if (kind == "planner" || kind == "neural") m["checkpoint"] = kStagePlannerCheckpoint;
    }
    out.push_back(with_path(item, [&] { return mechanism_from_json(m); }));
  }
  return out;
}

ojson mechanisms_to_json(const std::vector<MechanismSpec>& specs) {
  ojson out = ojson::array();
  for (const auto& s : specs) out.push_back(mechanism_to_json(s));
  return out;
}

std::string head_name(HeadMode h) { return h == HeadMode::kArgmaxBin ? "argmax" : "categorical"; }
std::string draw_name(DrawMode d) {
  return d == DrawMode::kFixedSlots ? "fixed_slots" : "with_replacement";
}

// ---------------------------------------------------------------------------
// Artifacts

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

std::ofstream open_csv(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << std::setprecision(12);
  return out;
}

void close_csv(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

std::string file_label(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-';
    if (keep) out += c;
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "unnamed" : out;
}

// Fresh directory for a stage so reruns produce the same file set.
fs::path reset_stage(const ExperimentConfig& config, std::string_view stage) {
  const fs::path dir = stage_dir(config, stage);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kMissingArtifact, "missing upstream artifact: " + path.string());
  }
  std::ifstream in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kMissingArtifact, "missing upstream artifact: " + path.string());
  }
}

uint64_t stage_seed(const ExperimentConfig& config, std::string_view stage) {
  return derive_seed(config.root_seed(), stage);
}

StageResult finalize(const ExperimentConfig& config, const fs::path& dir, std::string_view stage,
                     ojson inputs, ojson summary, std::vector<std::string> warnings) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir);
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });
  ojson outputs = ojson::object();
  std::string combined;
  for (const auto& rel : files) {
    const std::string h = file_sha256(dir / rel);
    outputs[rel.generic_string()] = h;
    combined += rel.generic_string() + "\t" + h + "\n";
  }
  ojson m;
  m["schema_versions"] = {{"manifest", kManifestSchemaVersion},
                          {"experiment", kExperimentSchemaVersion},
                          {"episode", kEpisodeSchemaVersion}};
  m["stage"] = std::string(stage);
  m["preset"] = preset_name(config.preset);
  m["seed"] = config.root_seed();
  m["stage_seed"] = stage_seed(config, stage);
  m["config_hash"] = config_hash(config);
  m["git_describe"] = git_describe();
  m["inputs"] = std::move(inputs);
  m["summary"] = std::move(summary);
  m["warnings"] = warnings;
  m["outputs"] = outputs;
  m["artifact_hash"] = sha256_hex(combined);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return {dir, m, std::move(warnings)};
}

ojson upstream(const ExperimentConfig& config, std::string_view stage) {
  const nlohmann::json m = read_manifest(stage_dir(config, stage));
  return m.value("artifact_hash", std::string());
}

Ensemble load_stage_ensemble(const ExperimentConfig& config) {
  const fs::path dir = stage_dir(config, "clone") / "ensemble";
  require_file(dir / "ensemble.json");
  return load_ensemble(dir);
}

fs::path stage_planner_path(const ExperimentConfig& config) {
  return stage_dir(config, "planner") / "planner.ckpt";
}

std::shared_ptr<const PlannerNet> load_stage_planner(const ExperimentConfig& config) {
  const fs::path path = stage_planner_path(config);
  require_file(path);
  return std::make_shared<PlannerNet>(PlannerNet::from_checkpoint(nn::load_checkpoint(path)));
}

bool uses_stage_planner(const std::vector<MechanismSpec>& specs) {
  return std::any_of(specs.begin(), specs.end(), [](const MechanismSpec& s) {
    const auto* n = std::get_if<NeuralSpec>(&s);
    return n != nullptr && n->checkpoint == kStagePlannerCheckpoint;
  });
}

MechanismSpec resolve(const ExperimentConfig& config, MechanismSpec spec) {
  if (auto* n = std::get_if<NeuralSpec>(&spec); n != nullptr && n->checkpoint == kStagePlannerCheckpoint) {
    n->checkpoint = stage_planner_path(config).string();
    require_file(n->checkpoint);
    n->variant = config.planner.model.variant;
  }
  return spec;
}

struct Table {
  std::vector<std::unique_ptr<PlayerModel>> owned;
  std::vector<PlayerModel*> seats;
  std::string description;
};

Table clone_table(const ExperimentConfig& config, const Ensemble& ensemble, uint64_t seed) {
  Rng rng(derive_seed(seed, "table"));
  const auto draw = ensemble_draw(ensemble, config.game.num_players, rng, config.draw);
  Table t;
  t.owned = make_clone_players(ensemble, draw, config.head);
  for (auto& p : t.owned) t.seats.push_back(p.get());
  t.description = "ensemble";
  return t;
}

Table scripted_table(const ExperimentConfig& config) {
  Table t;
  for (const auto& a : config.population) t.owned.push_back(std::make_unique<ScriptedPlayer>(a));
  for (auto& p : t.owned) t.seats.push_back(p.get());
  t.description = "scripted";
  return t;
}

Table configured_table(const ExperimentConfig& config, uint64_t seed, ojson& inputs) {
  if (config.players == "ensemble") {
    inputs["clone"] = upstream(config, "clone");
    return clone_table(config, load_stage_ensemble(config), seed);
  }
  return scripted_table(config);
}

ojson table_ids(const Table& t) {
  ojson ids = ojson::array();
  for (auto* p : t.seats) ids.push_back(p->id());
  return ids;
}

ojson summary_json(const ConditionSummary& s) {
  return {{"label", s.label},
          {"games", s.games},
          {"mean_surplus", s.mean_surplus},
          {"mean_gini", s.mean_gini},
          {"mean_offer_gini", s.mean_offer_gini},
          {"mean_active", s.mean_active},
          {"sustained_fraction", s.sustained_fraction},
          {"mean_depletion_trial", s.mean_depletion_trial}};
}

void emit(const StageLog& log, const std::string& message) {
  if (log) log(message);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string preset_name(Preset preset) {
  return preset == Preset::kPaperExact ? "paper_exact" : "desk_scale";
}

Preset preset_from_name(std::string_view name) {
  if (name == "paper_exact") return Preset::kPaperExact;
  if (name == "desk_scale") return Preset::kDeskScale;
  throw Error(ErrorCode::kInvalidConfig, "preset: unknown value '" + std::string(name) + "'");
}

std::vector<Archetype> default_population() {
  return {ConditionalCooperator{1.0, 0.05, 1.0 / 1.4}, TitForTat{1, 1.0}, Sustainer{0.25},
          FreeRider{}};
}

ExperimentConfig ExperimentConfig::Defaults(Preset preset) {
  ExperimentConfig c;
  c.preset = preset;
  c.population = default_population();
  c.evaluate.mechanisms = {WeightedSpec{1.0, 0.0}, WeightedSpec{0.0, 0.0},
                           NeuralSpec{kStagePlannerCheckpoint, PlannerVariant::kRecurrent, 1.0}};
  c.simulate.mechanisms = {WeightedSpec{1.0, 0.0}, WeightedSpec{0.5, 0.0}, WeightedSpec{0.0, 0.0}};
  c.sweep_params.mechanisms = {WeightedSpec{1.0, 0.0}, WeightedSpec{0.0, 0.0},
                               InterpolatingSpec{22.0, 0.0}};
  if (preset == Preset::kPaperExact) {
    c.corpus.games = 537;
    c.clone.model = CloneConfig::BC1();
    c.clone.hyper = CloneTrainHyper::PaperBC1();
    c.clone.per_archetype = false;
    c.clone.selection_episodes = 40;
    c.planner.model = PlannerConfig::M1();
    c.planner.hyper = PlannerTrainHyper::PaperM1();
    c.planner.selection_episodes = 64;
    c.evaluate.games = 256;
    c.sweep_k.episodes_per_k = 40;
    c.probe_pool.episodes = 64;
    c.sweep_params.episodes = 40;
  } else {
    c.corpus.games = 12;
    c.clone.model = CloneConfig::BC1();
    c.clone.hyper = CloneTrainHyper::DeskScale();
    c.clone.per_archetype = true;
    c.clone.selection_episodes = 8;
    c.planner.model = PlannerConfig::M1();
    c.planner.hyper = PlannerTrainHyper::DeskScale();
    c.planner.selection_episodes = 16;
    c.evaluate.games = 16;
    c.sweep_k.episodes_per_k = 8;
    c.probe_pool.episodes = 16;
    c.sweep_params.episodes = 8;
  }
  c.clone.model.num_players = c.game.num_players;
  return c;
}

void ExperimentConfig::validate() const {
  if (!seed) {
    throw Error(ErrorCode::kInvalidConfig, "seed: required (set it in the config or pass --seed)");
  }
  with_path("game", [&] { game.validate(); });
  if (static_cast<int>(population.size()) != game.num_players) {
    config_error("population", "needs exactly game.num_players entries");
  }
  if (players != "scripted" && players != "ensemble") {
    config_error("players", "expected 'scripted' or 'ensemble'");
  }
  if (corpus.games < 0) config_error("corpus.games", "must be >= 0");
  if (!(corpus.max_retention >= 0 && corpus.max_retention < 1)) {
    config_error("corpus.max_retention", "must lie in [0, 1)");
  }
  if (corpus.interpolating_log_k_min > corpus.interpolating_log_k_max) {
    config_error("corpus.interpolating_log_k_min", "must not exceed interpolating_log_k_max");
  }
  with_path("clone.model", [&] { clone.model.validate(); });
  if (clone.model.num_players != game.num_players) {
    config_error("clone.model.num_players", "must equal game.num_players");
  }
  if (clone.hyper.batch <= 0 || clone.hyper.steps < 0 || clone.hyper.checkpoint_every <= 0) {
    config_error("clone.hyper", "batch and checkpoint_every must be > 0, steps >= 0");
  }
  if (!(clone.holdout_fraction >= 0 && clone.holdout_fraction < 1)) {
    config_error("clone.holdout_fraction", "must lie in [0, 1)");
  }
  if (clone.ensemble_size <= 0) config_error("clone.ensemble_size", "must be > 0");
  if (clone.selection_episodes <= 0) config_error("clone.selection_episodes", "must be > 0");
  with_path("planner.model", [&] { planner.model.validate(); });
  if (planner.hyper.batch <= 0 || planner.hyper.steps < 0 || planner.hyper.checkpoint_every <= 0) {
    config_error("planner.hyper", "batch and checkpoint_every must be > 0, steps >= 0");
  }
  if (planner.selection_episodes <= 0) config_error("planner.selection_episodes", "must be > 0");
  if (evaluate.games < 0) config_error("evaluate.games", "must be >= 0");
  if (simulate.games < 0) config_error("simulate.games", "must be >= 0");
  if (sweep_k.episodes_per_k <= 0) config_error("sweep_k.episodes_per_k", "must be > 0");
  if (probe_pool.episodes <= 0) config_error("probe_pool.episodes", "must be > 0");
  for (double c : probe_pool.coefficients) {
    if (!(c > 0)) config_error("probe_pool.coefficients", "entries must be > 0");
  }
  if (sweep_params.episodes <= 0) config_error("sweep_params.episodes", "must be > 0");
  for (double r : sweep_params.pool_grid) {
    if (!(r > 0)) config_error("sweep_params.pool_grid", "entries must be > 0");
  }
  for (double m : sweep_params.growth_grid) {
    if (!(m > 0)) config_error("sweep_params.growth_grid", "entries must be > 0");
  }
  for (double l : sweep_params.lambdas) {
    if (!(l >= 0)) config_error("sweep_params.lambdas", "entries must be >= 0");
  }
  if (sweep_params.lambda_steps < 0) config_error("sweep_params.lambda_steps", "must be >= 0");
  if (sweep_params.lambda_eval_games <= 0) config_error("sweep_params.lambda_eval_games", "must be > 0");
  if (sweep_params.long_rounds < 0) config_error("sweep_params.long_rounds", "must be >= 0");
  if (sweep_params.long_games <= 0) config_error("sweep_params.long_games", "must be > 0");
}

uint64_t ExperimentConfig::root_seed() const {
  if (!seed) throw Error(ErrorCode::kInvalidConfig, "seed: required");
  return *seed;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const ConfigOverrides& overrides) {
  check_keys(j, "config",
             {"schema_version", "preset", "seed", "out", "game", "population", "players", "head",
              "draw", "corpus", "clone", "planner", "evaluate", "simulate", "sweep_k", "probe_pool",
              "sweep_params"});
  if (j.contains("schema_version") && j.at("schema_version") != kExperimentSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch,
                "config.schema_version: expected " + std::string(kExperimentSchemaVersion));
  }
  Preset preset = Preset::kDeskScale;
  if (overrides.preset) {
    preset = *overrides.preset;
  } else if (j.contains("preset")) {
    std::string name;
    read(j, "preset", name, "config");
    preset = with_path("config.preset", [&] { return preset_from_name(name); });
  }
  ExperimentConfig c = ExperimentConfig::Defaults(preset);
  if (j.contains("seed")) {
    uint64_t s = 0;
    read(j, "seed", s, "config");
    c.seed = s;
  }
  if (j.contains("out")) {
    std::string out;
    read(j, "out", out, "config");
    c.out = out;
  }
  if (j.contains("game")) {
    c.game = with_path("game", [&] {
      return game_config_from_json(merged(game_config_to_json(c.game), j.at("game")));
    });
    c.clone.model.num_players = c.game.num_players;
  }
  if (j.contains("population")) {
    const auto& pop = j.at("population");
    if (!pop.is_array()) config_error("population", "expected an array");
    c.population.clear();
    for (size_t i = 0; i < pop.size(); ++i) {
      c.population.push_back(with_path("population[" + std::to_string(i) + "]",
                                       [&] { return archetype_from_json(pop[i]); }));
    }
  }
  read(j, "players", c.players, "config");
  if (j.contains("head")) {
    std::string h;
    read(j, "head", h, "config");
    if (h == "argmax") c.head = HeadMode::kArgmaxBin;
    else if (h == "categorical") c.head = HeadMode::kCategoricalBin;
    else config_error("head", "expected 'argmax' or 'categorical'");
  }
  if (j.contains("draw")) {
    std::string d;
    read(j, "draw", d, "config");
    if (d == "fixed_slots") c.draw = DrawMode::kFixedSlots;
    else if (d == "with_replacement") c.draw = DrawMode::kWithReplacement;
    else config_error("draw", "expected 'fixed_slots' or 'with_replacement'");
  }
  if (j.contains("corpus")) {
    const auto& s = j.at("corpus");
    check_keys(s, "corpus",
               {"games", "max_retention", "interpolating_log_k_min", "interpolating_log_k_max"});
    read(s, "games", c.corpus.games, "corpus");
    read(s, "max_retention", c.corpus.max_retention, "corpus");
    read(s, "interpolating_log_k_min", c.corpus.interpolating_log_k_min, "corpus");
    read(s, "interpolating_log_k_max", c.corpus.interpolating_log_k_max, "corpus");
  }
  if (j.contains("clone")) {
    const auto& s = j.at("clone");
    check_keys(s, "clone",
               {"model", "hyper", "per_archetype", "holdout_fraction", "ensemble_size",
                "selection_episodes"});
    if (s.contains("model")) {
      c.clone.model = with_path("clone.model", [&] {
        nlohmann::json base = clone_config_to_json(c.clone.model);
        // A different preset starts from that preset's layer sizes.
        if (s.at("model").contains("preset")) base = nlohmann::json::object();
        base["num_players"] = c.game.num_players;
        return clone_config_from_json(merged(base, s.at("model")));
      });
    }
    if (s.contains("hyper")) clone_hyper_from_json(s.at("hyper"), c.clone.hyper, "clone.hyper");
    read(s, "per_archetype", c.clone.per_archetype, "clone");
    read(s, "holdout_fraction", c.clone.holdout_fraction, "clone");
    read(s, "ensemble_size", c.clone.ensemble_size, "clone");
    read(s, "selection_episodes", c.clone.selection_episodes, "clone");
  }
  if (j.contains("planner")) {
    const auto& s = j.at("planner");
    check_keys(s, "planner", {"model", "hyper", "selection_episodes"});
    if (s.contains("model")) {
      c.planner.model = with_path("planner.model", [&] {
        nlohmann::json base = planner_config_to_json(c.planner.model);
        if (s.at("model").contains("preset")) base = nlohmann::json::object();
        return planner_config_from_json(merged(base, s.at("model")));
      });
    }
    if (s.contains("hyper")) planner_hyper_from_json(s.at("hyper"), c.planner.hyper, "planner.hyper");
    read(s, "selection_episodes", c.planner.selection_episodes, "planner");
  }
  if (j.contains("evaluate")) {
    const auto& s = j.at("evaluate");
    check_keys(s, "evaluate", {"games", "mechanisms", "write_logs"});
    read(s, "games", c.evaluate.games, "evaluate");
    read(s, "write_logs", c.evaluate.write_logs, "evaluate");
    if (s.contains("mechanisms")) {
      c.evaluate.mechanisms = mechanisms_from_json(s.at("mechanisms"), "evaluate.mechanisms");
    }
  }
  if (j.contains("simulate")) {
    const auto& s = j.at("simulate");
    check_keys(s, "simulate", {"games", "mechanisms"});
    read(s, "games", c.simulate.games, "simulate");
    if (s.contains("mechanisms")) {
      c.simulate.mechanisms = mechanisms_from_json(s.at("mechanisms"), "simulate.mechanisms");
    }
  }
  if (j.contains("sweep_k")) {
    const auto& s = j.at("sweep_k");
    check_keys(s, "sweep_k", {"episodes_per_k"});
    read(s, "episodes_per_k", c.sweep_k.episodes_per_k, "sweep_k");
  }
  if (j.contains("probe_pool")) {
    const auto& s = j.at("probe_pool");
    check_keys(s, "probe_pool", {"coefficients", "episodes"});
    read(s, "coefficients", c.probe_pool.coefficients, "probe_pool");
    read(s, "episodes", c.probe_pool.episodes, "probe_pool");
  }
  if (j.contains("sweep_params")) {
    const auto& s = j.at("sweep_params");
    check_keys(s, "sweep_params",
               {"mechanisms", "pool_grid", "growth_grid", "episodes", "lambdas", "lambda_steps",
                "lambda_eval_games", "long_rounds", "long_games"});
    if (s.contains("mechanisms")) {
      c.sweep_params.mechanisms = mechanisms_from_json(s.at("mechanisms"), "sweep_params.mechanisms");
    }
    read(s, "pool_grid", c.sweep_params.pool_grid, "sweep_params");
    read(s, "growth_grid", c.sweep_params.growth_grid, "sweep_params");
    read(s, "episodes", c.sweep_params.episodes, "sweep_params");
    read(s, "lambdas", c.sweep_params.lambdas, "sweep_params");
    read(s, "lambda_steps", c.sweep_params.lambda_steps, "sweep_params");
    read(s, "lambda_eval_games", c.sweep_params.lambda_eval_games, "sweep_params");
    read(s, "long_rounds", c.sweep_params.long_rounds, "sweep_params");
    read(s, "long_games", c.sweep_params.long_games, "sweep_params");
  }
  if (overrides.seed) c.seed = overrides.seed;
  if (overrides.out) c.out = *overrides.out;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, overrides);
}

ojson experiment_config_to_json(const ExperimentConfig& c) {
  ojson j;
  j["schema_version"] = kExperimentSchemaVersion;
  j["preset"] = preset_name(c.preset);
  if (c.seed) j["seed"] = *c.seed;
  j["game"] = game_config_to_json(c.game);
  ojson pop = ojson::array();
  for (const auto& a : c.population) pop.push_back(archetype_to_json(a));
  j["population"] = pop;
  j["players"] = c.players;
  j["head"] = head_name(c.head);
  j["draw"] = draw_name(c.draw);
  j["corpus"] = {{"games", c.corpus.games},
                 {"max_retention", c.corpus.max_retention},
                 {"interpolating_log_k_min", c.corpus.interpolating_log_k_min},
                 {"interpolating_log_k_max", c.corpus.interpolating_log_k_max}};
  j["clone"] = {{"model", clone_config_to_json(c.clone.model)},
                {"hyper", clone_hyper_to_json(c.clone.hyper)},
                {"per_archetype", c.clone.per_archetype},
                {"holdout_fraction", c.clone.holdout_fraction},
                {"ensemble_size", c.clone.ensemble_size},
                {"selection_episodes", c.clone.selection_episodes}};
  j["planner"] = {{"model", planner_config_to_json(c.planner.model)},
                  {"hyper", planner_hyper_to_json(c.planner.hyper)},
                  {"selection_episodes", c.planner.selection_episodes}};
  j["evaluate"] = {{"games", c.evaluate.games},
                   {"mechanisms", mechanisms_to_json(c.evaluate.mechanisms)},
                   {"write_logs", c.evaluate.write_logs}};
  j["simulate"] = {{"games", c.simulate.games},
                   {"mechanisms", mechanisms_to_json(c.simulate.mechanisms)}};
  j["sweep_k"] = {{"episodes_per_k", c.sweep_k.episodes_per_k}};
  j["probe_pool"] = {{"coefficients", c.probe_pool.coefficients},
                     {"episodes", c.probe_pool.episodes}};
  j["sweep_params"] = {{"mechanisms", mechanisms_to_json(c.sweep_params.mechanisms)},
                       {"pool_grid", c.sweep_params.pool_grid},
                       {"growth_grid", c.sweep_params.growth_grid},
                       {"episodes", c.sweep_params.episodes},
                       {"lambdas", c.sweep_params.lambdas},
                       {"lambda_steps", c.sweep_params.lambda_steps},
                       {"lambda_eval_games", c.sweep_params.lambda_eval_games},
                       {"long_rounds", c.sweep_params.long_rounds},
                       {"long_games", c.sweep_params.long_games}};
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  return sha256_hex(experiment_config_to_json(config).dump());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return sha256_hex(buffer.str());
}

std::string git_describe() { return CPR_GIT_DESCRIBE; }

fs::path stage_dir(const ExperimentConfig& config, std::string_view stage) {
  return config.out / std::string(stage);
}

CorpusArms corpus_arms(const CorpusSection& c) {
  CorpusArms arms;
  if (c.games == c.reference_total) {
    arms.random = c.reference_random;
    arms.weighted = c.reference_weighted;
  } else {
    const double scale = static_cast<double>(c.games) / c.reference_total;
    arms.random = static_cast<int>(std::lround(c.reference_random * scale));
    arms.weighted = static_cast<int>(std::lround(c.reference_weighted * scale));
    arms.weighted = std::min(arms.weighted, c.games - arms.random);
  }
  arms.interpolating = c.games - arms.random - arms.weighted;
  return arms;
}

std::vector<EpisodeLog> load_corpus(const fs::path& corpus_dir) {
  const fs::path games = corpus_dir / "games";
  if (!fs::is_directory(games)) {
    throw Error(ErrorCode::kMissingArtifact, "missing upstream artifact: " + games.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(games)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EpisodeLog> logs;
  for (const auto& f : files) logs.push_back(load_episode(f));
  return logs;
}

// ---------------------------------------------------------------------------
// Stages

StageResult run_simulate(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  std::vector<std::string> warnings;
  if (config.simulate.games == 0 || config.simulate.mechanisms.empty()) {
    warnings.push_back("simulate: zero games requested, nothing written");
    emit(log, warnings.back());
    return {stage_dir(config, "simulate"), ojson(), warnings};
  }
  const fs::path dir = reset_stage(config, "simulate");
  const uint64_t seed = stage_seed(config, "simulate");
  ojson inputs = ojson::object();
  if (uses_stage_planner(config.simulate.mechanisms)) inputs["planner"] = upstream(config, "planner");
  Table table = configured_table(config, seed, inputs);
  std::vector<ConditionSummary> summaries;
  std::set<std::string> used;
  for (const auto& raw : config.simulate.mechanisms) {
    auto mechanism = make_mechanism(resolve(config, raw));
    std::string label = file_label(mechanism->id());
    while (!used.insert(label).second) label += "_";
    emit(log, "simulate: " + mechanism->id() + " x " + std::to_string(config.simulate.games));
    // Paired seeds: every mechanism sees the same game seeds.
    const auto logs =
        simulate_games(config.game, *mechanism, table.seats, config.simulate.games, derive_seed(seed, "games"));
    for (size_t g = 0; g < logs.size(); ++g) {
      char name[32];
      std::snprintf(name, sizeof(name), "game_%04zu.jsonl", g);
      save_episode(dir / "logs" / label / name, logs[g]);
    }
    const double threshold = config.game.exclusion_threshold;
    {
      const fs::path p = dir / "reports" / ("games_" + label + ".csv");
      auto out = open_csv(p);
      write_game_table(out, logs, threshold);
      close_csv(out, p);
    }
    {
      const fs::path p = dir / "reports" / ("trials_" + label + ".csv");
      auto out = open_csv(p);
      write_trial_table(out, logs, threshold);
      close_csv(out, p);
    }
    {
      const fs::path p = dir / "reports" / ("exclusions_" + label + ".csv");
      auto out = open_csv(p);
      write_exclusion_table(out, logs, threshold);
      close_csv(out, p);
    }
    {
      const fs::path p = dir / "reports" / ("ratio_" + label + ".csv");
      auto out = open_csv(p);
      write_ratio_table(out, reciprocation_ratio_profile(logs, config.game.growth, threshold));
      close_csv(out, p);
    }
    try {
      const auto lagged = lagged_offer_regression(logs);
      const fs::path p = dir / "reports" / ("lagged_" + label + ".csv");
      auto out = open_csv(p);
      write_lagged_table(out, lagged);
      close_csv(out, p);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularDesign) throw;
      warnings.push_back("lagged regression skipped for " + mechanism->id() + ": " + e.what());
    }
    summaries.push_back(summarize(mechanism->id(), logs, threshold));
  }
  const fs::path p = dir / "reports" / "summary.csv";
  auto out = open_csv(p);
  write_summary_table(out, summaries);
  close_csv(out, p);
  ojson summary;
  summary["players"] = table_ids(table);
  summary["conditions"] = ojson::array();
  for (const auto& s : summaries) summary["conditions"].push_back(summary_json(s));
  return finalize(config, dir, "simulate", inputs, summary, warnings);
}

StageResult run_make_corpus(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  const fs::path dir = reset_stage(config, "corpus");
  const uint64_t seed = stage_seed(config, "corpus");
  const CorpusArms arms = corpus_arms(config.corpus);
  std::vector<std::string> warnings;
  if (config.corpus.games == 0) warnings.push_back("corpus: zero games requested");
  std::map<std::string, int> per_mechanism_kind;
  for (int g = 0; g < config.corpus.games; ++g) {
    const uint64_t game_seed = derive_seed(seed, static_cast<uint64_t>(g));
    Rng arm_rng(derive_seed(game_seed, "arm"));
    MechanismSpec spec;
    std::string arm;
    if (g < arms.random) {
      spec = RandomDirichletSpec{1.0};
      arm = "random";
    } else if (g < arms.random + arms.weighted) {
      const double w = arm_rng.uniform();
      const double retention = arm_rng.uniform() * config.corpus.max_retention;
      spec = WeightedSpec{w, retention};
      arm = "weighted";
    } else {
      const double log_k = config.corpus.interpolating_log_k_min +
                           arm_rng.uniform() * (config.corpus.interpolating_log_k_max -
                                                config.corpus.interpolating_log_k_min);
      spec = InterpolatingSpec{std::exp(log_k), 0.0};
      arm = "interpolating";
    }
    per_mechanism_kind[arm] += 1;
    auto mechanism = make_mechanism(spec);
    // Seating order is shuffled per game.
    std::vector<Archetype> seating = config.population;
    Rng seat_rng(derive_seed(game_seed, "seating"));
    for (size_t i = seating.size(); i > 1; --i) {
      std::swap(seating[i - 1], seating[static_cast<size_t>(seat_rng.uniform_int(static_cast<int>(i)))]);
    }
    std::vector<std::unique_ptr<PlayerModel>> owned;
    std::vector<PlayerModel*> players;
    for (const auto& a : seating) {
      owned.push_back(std::make_unique<ScriptedPlayer>(a));
      players.push_back(owned.back().get());
    }
    const EpisodeLog episode = run_episode(config.game, *mechanism, players, derive_seed(game_seed, "episode"));
    char name[32];
    std::snprintf(name, sizeof(name), "game_%04d.jsonl", g);
    save_episode(dir / "games" / name, episode);
  }
  emit(log, "corpus: " + std::to_string(config.corpus.games) + " games (" +
                std::to_string(arms.random) + " random, " + std::to_string(arms.weighted) +
                " weighted, " + std::to_string(arms.interpolating) + " interpolating)");
  ojson summary;
  summary["games"] = config.corpus.games;
  summary["arms"] = {{"random", arms.random},
                     {"weighted", arms.weighted},
                     {"interpolating", arms.interpolating}};
  ojson pop = ojson::array();
  for (const auto& a : config.population) pop.push_back(archetype_id(a));
  summary["population"] = pop;
  return finalize(config, dir, "corpus", ojson::object(), summary, warnings);
}

namespace {

struct TrainedClone {
  std::string label;
  CloneTrainResult result;
  CloneEvaluation train_eval;
  CloneEvaluation holdout_eval;
};

void write_clone_checkpoints(const fs::path& dir, const CloneConfig& model, const TrainedClone& t) {
  for (const auto& ck : t.result.checkpoints) {
    char name[40];
    std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(ck.step));
    nn::save_checkpoint(dir / "checkpoints" / file_label(t.label) / name,
                        CloneModel(model, ck.params).to_checkpoint(ck.step));
  }
}

}  // namespace

StageResult run_train_bc(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  ojson inputs = {{"corpus", upstream(config, "corpus")}};
  const std::vector<EpisodeLog> logs = load_corpus(stage_dir(config, "corpus"));
  if (logs.empty()) throw Error(ErrorCode::kEmptyInput, "corpus holds no games");
  const fs::path dir = reset_stage(config, "clone");
  const uint64_t seed = stage_seed(config, "clone");
  std::vector<std::string> warnings;

  std::vector<size_t> order(logs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(seed, "split"));
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<size_t>(split_rng.uniform_int(static_cast<int>(i)))]);
  }
  size_t holdout = static_cast<size_t>(std::floor(config.clone.holdout_fraction * logs.size()));
  if (config.clone.holdout_fraction > 0 && holdout == 0 && logs.size() > 1) holdout = 1;
  std::vector<EpisodeLog> train_logs, holdout_logs;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < holdout ? holdout_logs : train_logs).push_back(logs[order[i]]);
  }
  if (holdout_logs.empty()) warnings.push_back("clone: no held-out games; holdout metrics use training games");

  const CloneConfig& model = config.clone.model;
  const int bins = model.bins;
  std::vector<TrainedClone> trained;
  auto train_one = [&](const std::string& label, const std::function<bool(const std::string&)>& filter,
                       uint64_t model_seed) {
    const SupervisedDataset train = build_dataset(train_logs, bins, filter);
    const SupervisedDataset held = build_dataset(holdout_logs.empty() ? train_logs : holdout_logs, bins, filter);
    emit(log, "train-bc: " + label + " on " + std::to_string(train.num_records()) + " records, " +
                  std::to_string(config.clone.hyper.steps) + " steps");
    TrainedClone t;
    t.label = label;
    t.result = train_clone(train, model, config.clone.hyper, model_seed);
    const CloneModel final_model(model, t.result.checkpoints.back().params);
    t.train_eval = evaluate_clone(final_model, train);
    t.holdout_eval = evaluate_clone(final_model, held);
    emit(log, "train-bc: " + label + " holdout accuracy " + std::to_string(t.holdout_eval.accuracy));
    trained.push_back(std::move(t));
  };

  Ensemble ensemble;
  if (config.clone.per_archetype) {
    std::set<std::string> ids;
    for (const auto& l : train_logs) ids.insert(l.player_ids.begin(), l.player_ids.end());
    for (const auto& id : ids) {
      train_one(id, [id](const std::string& pid) { return pid == id; }, derive_seed(seed, id));
    }
    for (const auto& t : trained) {
      ensemble.members.push_back(std::make_shared<CloneModel>(model, t.result.checkpoints.back().params));
      ensemble.labels.push_back(t.label);
      ensemble.scores.push_back(t.holdout_eval.accuracy);
    }
  } else {
    train_one("pooled", {}, derive_seed(seed, "pooled"));
    std::vector<std::shared_ptr<const CloneModel>> candidates;
    std::vector<std::string> labels;
    for (const auto& ck : trained.front().result.checkpoints) {
      candidates.push_back(std::make_shared<CloneModel>(model, ck.params));
      labels.push_back("pooled@" + std::to_string(ck.step));
    }
    CloneSelectionOptions options;
    options.episodes = config.clone.selection_episodes;
    options.ensemble_size = config.clone.ensemble_size;
    options.seed = derive_seed(seed, "selection");
    options.game = config.game;
    ensemble = select_clone_checkpoints(candidates, labels, options);
    for (const auto& w : ensemble.warnings) warnings.push_back(w);
  }
  save_ensemble(dir / "ensemble", ensemble);

  const fs::path loss_path = dir / "losses.csv";
  auto losses = open_csv(loss_path);
  losses << "model,step,loss\n";
  ojson models = ojson::array();
  for (const auto& t : trained) {
    write_clone_checkpoints(dir, model, t);
    for (size_t s = 0; s < t.result.losses.size(); ++s) {
      losses << t.label << "," << s << "," << t.result.losses[s] << "\n";
    }
    models.push_back({{"label", t.label},
                      {"train_loss", t.train_eval.loss},
                      {"train_accuracy", t.train_eval.accuracy},
                      {"holdout_loss", t.holdout_eval.loss},
                      {"holdout_accuracy", t.holdout_eval.accuracy},
                      {"holdout_records", t.holdout_eval.records}});
  }
  close_csv(losses, loss_path);
  ojson summary;
  summary["train_games"] = train_logs.size();
  summary["holdout_games"] = holdout_logs.size();
  summary["models"] = models;
  ojson members = ojson::array();
  for (size_t i = 0; i < ensemble.size(); ++i) {
    members.push_back({{"label", ensemble.labels[i]}, {"score", ensemble.scores[i]}});
  }
  summary["ensemble"] = members;
  return finalize(config, dir, "clone", inputs, summary, warnings);
}

StageResult run_train_planner(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  ojson inputs = {{"clone", upstream(config, "clone")}};
  const Ensemble ensemble = load_stage_ensemble(config);
  const fs::path dir = reset_stage(config, "planner");
  const uint64_t seed = stage_seed(config, "planner");
  PlannerTrainHyper hyper = config.planner.hyper;
  hyper.head = config.head;
  emit(log, "train-planner: " + config.planner.model.preset + ", " + std::to_string(hyper.steps) +
                " steps, batch " + std::to_string(hyper.batch));
  const int report_every = std::max(1, hyper.steps / 20);
  const PlannerTrainResult result =
      train_planner(config.planner.model, ensemble, config.game, hyper, derive_seed(seed, "train"),
                    [&](const TrainingMetrics& m) {
                      if (m.step % report_every == 0) {
                        emit(log, "train-planner: step " + std::to_string(m.step) + " surplus " +
                                      std::to_string(m.surplus) + " gini " + std::to_string(m.gini));
                      }
                    });
  for (const auto& ck : result.checkpoints) {
    char name[40];
    std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(ck.step));
    nn::save_checkpoint(dir / "checkpoints" / name,
                        PlannerNet(config.planner.model, ck.params).to_checkpoint(ck.step));
  }
  const PlannerSelection selection =
      select_planner_checkpoint(result.checkpoints, config.planner.model, ensemble, config.game,
                                config.planner.selection_episodes, derive_seed(seed, "selection"));
  const PlannerCheckpoint& best = result.checkpoints[selection.index];
  nn::save_checkpoint(dir / "planner.ckpt", PlannerNet(config.planner.model, best.params).to_checkpoint(best.step));
  emit(log, "train-planner: selected step " + std::to_string(best.step));

  const fs::path metrics_path = dir / "metrics.csv";
  auto metrics = open_csv(metrics_path);
  metrics << "step,lr,objective,surplus,gini\n";
  for (const auto& m : result.metrics) {
    metrics << m.step << "," << m.lr << "," << m.objective << "," << m.surplus << "," << m.gini << "\n";
  }
  close_csv(metrics, metrics_path);
  const fs::path selection_path = dir / "selection.csv";
  auto sel = open_csv(selection_path);
  sel << "step,mean_surplus\n";
  for (size_t i = 0; i < result.checkpoints.size(); ++i) {
    sel << result.checkpoints[i].step << "," << selection.scores[i] << "\n";
  }
  close_csv(sel, selection_path);
  ojson summary;
  summary["selected_step"] = best.step;
  summary["selected_score"] = selection.scores[selection.index];
  summary["checkpoints"] = result.checkpoints.size();
  if (!result.metrics.empty()) summary["final_train_surplus"] = result.metrics.back().surplus;
  return finalize(config, dir, "planner", inputs, summary, {});
}

StageResult run_evaluate(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  ojson inputs = {{"clone", upstream(config, "clone")}};
  if (uses_stage_planner(config.evaluate.mechanisms)) inputs["planner"] = upstream(config, "planner");
  const Ensemble ensemble = load_stage_ensemble(config);
  const fs::path dir = reset_stage(config, "evaluate");
  const uint64_t seed = stage_seed(config, "evaluate");
  std::vector<std::string> warnings;
  if (config.evaluate.games == 0) warnings.push_back("evaluate: zero games requested");
  Table table = clone_table(config, ensemble, seed);
  const double threshold = config.game.exclusion_threshold;
  std::vector<ConditionSummary> summaries;
  std::vector<std::vector<double>> surpluses;
  std::vector<std::string> ids;
  std::set<std::string> used;
  for (const auto& raw : config.evaluate.mechanisms) {
    auto mechanism = make_mechanism(resolve(config, raw));
    std::string label = file_label(mechanism->id());
    while (!used.insert(label).second) label += "_";
    emit(log, "evaluate: " + mechanism->id() + " x " + std::to_string(config.evaluate.games));
    const auto logs = simulate_games(config.game, *mechanism, table.seats, config.evaluate.games,
                                     derive_seed(seed, "games"));
    const fs::path p = dir / "reports" / (label + ".csv");
    auto out = open_csv(p);
    write_game_table(out, logs, threshold);
    close_csv(out, p);
    if (config.evaluate.write_logs) {
      for (size_t g = 0; g < logs.size(); ++g) {
        char name[32];
        std::snprintf(name, sizeof(name), "game_%04zu.jsonl", g);
        save_episode(dir / "logs" / label / name, logs[g]);
      }
    }
    summaries.push_back(summarize(mechanism->id(), logs, threshold));
    std::vector<double> s;
    for (const auto& l : logs) s.push_back(l.total_surplus());
    surpluses.push_back(std::move(s));
    ids.push_back(mechanism->id());
  }
  {
    const fs::path p = dir / "summary.csv";
    auto out = open_csv(p);
    write_summary_table(out, summaries);
    close_csv(out, p);
  }
  // Every pair of conditions on the paired game seeds.
  ojson comparisons = ojson::array();
  if (surpluses.size() > 1 && config.evaluate.games > 1) {
    struct Row {
      size_t a, b;
      double diff;
      int wins, ties;
      TestResult test;
    };
    std::vector<Row> rows;
    for (size_t a = 0; a < surpluses.size(); ++a) {
      for (size_t b = a + 1; b < surpluses.size(); ++b) {
        Row r{a, b, 0.0, 0, 0, {}};
        for (size_t g = 0; g < surpluses[a].size(); ++g) {
          const double d = surpluses[a][g] - surpluses[b][g];
          r.diff += d;
          r.wins += d > 0 ? 1 : 0;
          r.ties += d == 0 ? 1 : 0;
        }
        r.diff /= static_cast<double>(surpluses[a].size());
        try {
          r.test = rank_sum_test(surpluses[a], surpluses[b]);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kDegenerateInput) throw;
          warnings.push_back("rank-sum test degenerate for " + ids[a] + " vs " + ids[b]);
        }
        rows.push_back(r);
      }
    }
    std::vector<double> ps;
    for (const auto& r : rows) ps.push_back(r.test.p_two_sided);
    const std::vector<double> qs = fdr_adjust(ps);
    const fs::path p = dir / "comparisons.csv";
    auto out = open_csv(p);
    out << "a,b,mean_difference,wins,ties,rank_sum_z,p_value,q_value\n";
    for (size_t i = 0; i < rows.size(); ++i) {
      const Row& r = rows[i];
      out << ids[r.a] << "," << ids[r.b] << "," << r.diff << "," << r.wins << "," << r.ties << ","
          << r.test.statistic << "," << r.test.p_two_sided << "," << qs[i] << "\n";
      comparisons.push_back({{"a", ids[r.a]}, {"b", ids[r.b]}, {"mean_difference", r.diff},
                             {"wins", r.wins}, {"z", r.test.statistic}, {"p", r.test.p_two_sided},
                             {"q", qs[i]}});
    }
    close_csv(out, p);
  }
  ojson summary;
  summary["players"] = table_ids(table);
  summary["conditions"] = ojson::array();
  for (const auto& s : summaries) summary["conditions"].push_back(summary_json(s));
  summary["comparisons"] = comparisons;
  return finalize(config, dir, "evaluate", inputs, summary, warnings);
}

StageResult run_sweep_k(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  ojson inputs = ojson::object();
  const uint64_t seed = stage_seed(config, "sweep_k");
  Table table = configured_table(config, seed, inputs);
  const fs::path dir = reset_stage(config, "sweep_k");
  const auto grid = default_k_grid();
  emit(log, "sweep-k: " + std::to_string(grid.size()) + " values x " +
                std::to_string(config.sweep_k.episodes_per_k) + " games");
  const KSweepResult result = sweep_interpolation_k(grid, table.seats, config.game,
                                                    config.sweep_k.episodes_per_k, derive_seed(seed, "games"));
  const fs::path p = dir / "sweep_k.csv";
  auto out = open_csv(p);
  out << "k,log_k,mean_surplus,mean_gini\n";
  for (const auto& row : result.rows) {
    out << row.k << "," << std::log(row.k) << "," << row.mean_surplus << "," << row.mean_gini << "\n";
  }
  close_csv(out, p);
  ojson summary = {{"best_k", result.best_k}, {"grid_size", grid.size()}, {"players", table_ids(table)}};
  return finalize(config, dir, "sweep_k", inputs, summary, {});
}

StageResult run_probe_pool(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  ojson inputs = {{"clone", upstream(config, "clone")}, {"planner", upstream(config, "planner")}};
  const Ensemble ensemble = load_stage_ensemble(config);
  const auto planner = load_stage_planner(config);
  const fs::path dir = reset_stage(config, "probe_pool");
  const uint64_t seed = stage_seed(config, "probe_pool");
  emit(log, "probe-pool: " + std::to_string(config.probe_pool.coefficients.size()) + " coefficients");
  const auto rows = pool_scaling_probe(planner, ensemble, config.game, config.probe_pool.coefficients,
                                       config.probe_pool.episodes, derive_seed(seed, "games"));
  const fs::path p = dir / "probe_pool.csv";
  auto out = open_csv(p);
  out << "coefficient,mean_offer_gini\n";
  ojson table = ojson::array();
  for (const auto& r : rows) {
    out << r.coefficient << "," << r.mean_offer_gini << "\n";
    table.push_back({{"coefficient", r.coefficient}, {"mean_offer_gini", r.mean_offer_gini}});
  }
  close_csv(out, p);
  return finalize(config, dir, "probe_pool", inputs, {{"rows", table}}, {});
}

StageResult run_sweep_params(const ExperimentConfig& config, const StageLog& log) {
  config.validate();
  ojson inputs = ojson::object();
  const auto& sp = config.sweep_params;
  const bool needs_planner = uses_stage_planner(sp.mechanisms) || sp.long_rounds > 0;
  if (needs_planner) inputs["planner"] = upstream(config, "planner");
  const uint64_t seed = stage_seed(config, "sweep_params");
  Table table = configured_table(config, seed, inputs);
  std::vector<MechanismSpec> mechanisms;
  for (const auto& m : sp.mechanisms) mechanisms.push_back(resolve(config, m));
  const fs::path dir = reset_stage(config, "sweep_params");
  std::vector<std::string> warnings;

  emit(log, "sweep-params: " + std::to_string(mechanisms.size()) + " mechanisms on a " +
                std::to_string(sp.pool_grid.size()) + "x" + std::to_string(sp.growth_grid.size()) + " grid");
  const auto cells = parameter_generalization_sweep(mechanisms, table.seats, config.game, sp.pool_grid,
                                                    sp.growth_grid, sp.episodes, derive_seed(seed, "grid"));
  {
    const fs::path p = dir / "sweep_params.csv";
    auto out = open_csv(p);
    out << "mechanism,max_pool,growth,mean_surplus,mean_gini,games\n";
    for (const auto& c : cells) {
      out << c.mechanism << "," << c.max_pool << "," << c.growth << "," << c.mean_surplus << ","
          << c.mean_gini << "," << c.games << "\n";
    }
    close_csv(out, p);
  }
  ojson summary;
  summary["cells"] = cells.size();

  if (!sp.lambdas.empty()) {
    inputs["clone"] = upstream(config, "clone");
    const Ensemble ensemble = load_stage_ensemble(config);
    Table clones = clone_table(config, ensemble, seed);
    const fs::path p = dir / "lambda_sweep.csv";
    auto out = open_csv(p);
    out << "lambda,mean_surplus,mean_gini\n";
    ojson rows = ojson::array();
    for (double lambda : sp.lambdas) {
      PlannerConfig model = config.planner.model;
      model.gini_weight = lambda;
      PlannerTrainHyper hyper = config.planner.hyper;
      hyper.head = config.head;
      hyper.steps = sp.lambda_steps;
      hyper.checkpoint_every = std::max(1, sp.lambda_steps);
      emit(log, "sweep-params: lambda " + std::to_string(lambda));
      // Same training seed for every lambda so only the penalty differs.
      const auto result = train_planner(model, ensemble, config.game, hyper, derive_seed(seed, "lambda"));
      auto net = std::make_shared<PlannerNet>(model, result.checkpoints.back().params);
      PlannerMechanism mechanism(net);
      const auto logs = simulate_games(config.game, mechanism, clones.seats, sp.lambda_eval_games,
                                       derive_seed(seed, "lambda-eval"));
      const ConditionSummary s = summarize("lambda", logs, config.game.exclusion_threshold);
      out << lambda << "," << s.mean_surplus << "," << s.mean_gini << "\n";
      rows.push_back({{"lambda", lambda}, {"mean_surplus", s.mean_surplus}, {"mean_gini", s.mean_gini}});
    }
    close_csv(out, p);
    summary["lambda_sweep"] = rows;
  }

  if (sp.long_rounds > 0) {
    auto net = load_stage_planner(config);
    PlannerMechanism mechanism(net);
    emit(log, "sweep-params: long unroll of " + std::to_string(sp.long_rounds) + " rounds");
    const auto rows = long_unroll(config.game, mechanism, table.seats, sp.long_rounds, sp.long_games,
                                  derive_seed(seed, "long"));
    const fs::path p = dir / "long_unroll.csv";
    auto out = open_csv(p);
    out << "seed,depletion_trial,total_surplus,gini\n";
    for (const auto& r : rows) {
      out << r.seed << ",";
      if (r.depletion_trial) out << *r.depletion_trial;
      out << "," << r.total_surplus << "," << r.gini << "\n";
    }
    close_csv(out, p);
  }
  return finalize(config, dir, "sweep_params", inputs, summary, warnings);
}

}  // namespace cpr
