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

#ifndef CPR_PLAYERS_H_
#define CPR_PLAYERS_H_

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpr/game.h"
#include "cpr/nn/checkpoint.h"
#include "cpr/nn/layers.h"
#include "cpr/nn/optim.h"
#include "cpr/nn/tape.h"
#include "cpr/rng.h"

namespace cpr {

// ---------------------------------------------------------------------------
// Scripted archetypes

struct FreeRider {};
// Returns (1 - keep_frac) of every offer.
struct Sustainer {
  double keep_frac = 0.0;
};
// Contribution ratio = clip(slope * mean ratio of the others last round + noise).
// opening_ratio is used before any history exists.
struct ConditionalCooperator {
  double slope = 1.0;
  double noise_sd = 0.0;
  double opening_ratio = 1.0 / 1.4;
};
// Mirrors the group's mean reciprocation ratio over the last memory_rounds.
struct TitForTat {
  int memory_rounds = 1;
  double opening_ratio = 1.0;
};
struct UniformRandom {};

using Archetype =
    std::variant<FreeRider, Sustainer, ConditionalCooperator, TitForTat, UniformRandom>;

std::string archetype_id(const Archetype& a);
Archetype archetype_from_json(const nlohmann::json& j);
nlohmann::ordered_json archetype_to_json(const Archetype& a);

class ScriptedPlayer : public PlayerModel {
 public:
  explicit ScriptedPlayer(Archetype archetype) : archetype_(archetype) {}

  void begin_episode(uint64_t seed) override;
  double respond(const SeatView& view) override;
  std::string id() const override { return archetype_id(archetype_); }

  const Archetype& archetype() const { return archetype_; }

 private:
  Archetype archetype_;
  Rng rng_;
  std::deque<double> group_ratios_;
};

// Stateless core of ScriptedPlayer for archetypes that need no memory beyond
// the previous round (all but TitForTat with memory_rounds > 1).
double scripted_act(const Archetype& archetype, const SeatView& view, Rng& rng);

// ---------------------------------------------------------------------------
// Observations, clone networks and the categorical-uniform head

// offers_now[p], contribs_prev[p], pool; all divided by R0. The focal seat is
// rotated into slot 0, the others follow in seat order.
std::vector<double> player_observation(const SeatView& view);
int observation_size(int num_players);

struct CloneConfig {
  std::string preset = "bc1";
  std::vector<int> encoder = {16, 32};
  int memory = 64;
  std::vector<int> projection = {32, 16};
  int bins = 10;
  int num_players = 4;

  static CloneConfig BC1();
  // Layer sizes are carried as listed for the larger preset; its encoder and
  // projection stacks have three entries.
  static CloneConfig BC2();
  void validate() const;
  int input_size() const { return observation_size(num_players); }
};

nlohmann::ordered_json clone_config_to_json(const CloneConfig& c);
CloneConfig clone_config_from_json(const nlohmann::json& j);

// A policy whose bin logits can be recorded on a tape, so planner training
// can differentiate through the players' responses.
class DifferentiablePolicy {
 public:
  virtual ~DifferentiablePolicy() = default;
  virtual int hidden_size() const = 0;
  virtual int bins() const = 0;
  struct Step {
    nn::Var logits;
    nn::Var hidden;
  };
  // obs: rows x observation_size, hidden: rows x hidden_size. Parameters are
  // looked up under "<scope>/...".
  virtual Step step(nn::Tape& tape, const std::string& scope, nn::Var obs,
                    nn::Var hidden) const = 0;
  // Binds this policy's parameters on the tape under "<scope>/...".
  virtual void bind(nn::Tape& tape, const std::string& scope) const = 0;
};

class CloneModel : public DifferentiablePolicy {
 public:
  CloneModel(CloneConfig config, uint64_t init_seed);
  CloneModel(CloneConfig config, nn::ParamTree params);

  const CloneConfig& config() const { return config_; }
  const nn::ParamTree& params() const { return params_; }
  nn::ParamTree& mutable_params() { return params_; }

  int hidden_size() const override { return config_.memory; }
  int bins() const override { return config_.bins; }
  Step step(nn::Tape& tape, const std::string& scope, nn::Var obs,
            nn::Var hidden) const override;
  void bind(nn::Tape& tape, const std::string& scope) const override;
  Step step(nn::Tape& tape, nn::Var obs, nn::Var hidden) const {
    return step(tape, prefix_, obs, hidden);
  }
  void bind(nn::Tape& tape) const { bind(tape, prefix_); }

  // Tape-free forward pass for inference; advances hidden in place.
  nn::Matrix infer(const nn::Matrix& obs, nn::Matrix& hidden) const;

  // Parameters are bound under "<prefix>/..."; default prefix "clone".
  void set_prefix(std::string prefix) { prefix_ = std::move(prefix); }
  const std::string& prefix() const { return prefix_; }

  nn::Checkpoint to_checkpoint(int64_t step) const;
  static CloneModel from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  void build_layers();

  CloneConfig config_;
  nn::ParamTree params_;
  std::string prefix_ = "clone";
  std::vector<nn::Dense> encoder_;
  nn::GruCell memory_;
  std::vector<nn::Dense> projection_;
  nn::Dense output_;
};

enum class HeadMode { kArgmaxBin, kCategoricalBin };

// Picks a bin (argmax or categorical sample), then a fraction uniformly inside
// [b/N, (b+1)/N). Returns fraction * offer clamped to [0, offer]; zero when
// the offer is below the threshold.
double head_sample(std::span<const double> logits, double offer, Rng& rng, HeadMode mode,
                   double exclusion_threshold = 1.0);
int head_bin(std::span<const double> logits, Rng& rng, HeadMode mode);

class ClonePlayer : public PlayerModel {
 public:
  ClonePlayer(std::shared_ptr<const CloneModel> model, HeadMode mode = HeadMode::kArgmaxBin,
              std::string label = {});

  void begin_episode(uint64_t seed) override;
  double respond(const SeatView& view) override;
  std::string id() const override { return label_; }

 private:
  std::shared_ptr<const CloneModel> model_;
  HeadMode mode_;
  std::string label_;
  Rng rng_;
  nn::Matrix hidden_;
};

// ---------------------------------------------------------------------------
// Datasets and training

// floor(N c / e) clamped to [0, N-1].
int target_bin(double contribution, double offer, int bins);

struct SupervisedSequence {
  std::vector<std::vector<double>> observations;
  std::vector<int> target_bins;
  std::vector<double> mask;  // 0 where the offer was below the threshold
  std::vector<double> offers;
  std::string player_id;
};

struct SupervisedDataset {
  int bins = 10;
  int observation_size = 9;
  std::vector<SupervisedSequence> sequences;

  size_t num_records() const;
};

// One sequence per seat per game. When seat_filter is set only seats whose
// player id satisfies it are kept.
SupervisedDataset build_dataset(std::span<const EpisodeLog> logs, int bins,
                                const std::function<bool(const std::string&)>& seat_filter = {});

struct CloneTrainHyper {
  int batch = 64;
  int steps = 20000;
  nn::LrSchedule schedule{5e-4, 5e-6, 0.05, 1000};
  int checkpoint_every = 5000;
  double clip_norm = 0.0;  // 0 disables

  static CloneTrainHyper PaperBC1();
  static CloneTrainHyper PaperBC2();
  static CloneTrainHyper DeskScale();
};

struct CloneCheckpoint {
  int64_t step = 0;
  nn::ParamTree params;
};

struct CloneTrainResult {
  std::vector<CloneCheckpoint> checkpoints;
  std::vector<double> losses;  // per update
  nn::OptimizerState optimizer;
};

CloneTrainResult train_clone(const SupervisedDataset& dataset, const CloneConfig& config,
                             const CloneTrainHyper& hyper, uint64_t seed);

struct CloneEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  size_t records = 0;
};

CloneEvaluation evaluate_clone(const CloneModel& model, const SupervisedDataset& dataset);

// ---------------------------------------------------------------------------
// Ensembles

struct Ensemble {
  std::vector<std::shared_ptr<const CloneModel>> members;
  std::vector<double> scores;
  std::vector<std::string> labels;
  std::vector<std::string> warnings;

  bool empty() const { return members.empty(); }
  size_t size() const { return members.size(); }
};

struct CloneSelectionOptions {
  std::vector<double> baseline_weights = {0.0, 0.5, 1.0};
  int episodes = 40;
  int ensemble_size = 4;
  uint64_t seed = 0;
  GameConfig game;
};

// Score = mean surplus under weighted baselines - mean surplus under the
// random mechanism, with a table made of four copies of the checkpoint.
Ensemble select_clone_checkpoints(std::span<const std::shared_ptr<const CloneModel>> candidates,
                                  std::span<const std::string> labels,
                                  const CloneSelectionOptions& options);

enum class DrawMode { kWithReplacement, kFixedSlots };

// Ensemble member index per seat.
std::vector<int> ensemble_draw(const Ensemble& ensemble, int num_players, Rng& rng,
                               DrawMode mode);

std::vector<std::unique_ptr<PlayerModel>> make_clone_players(const Ensemble& ensemble,
                                                             std::span<const int> seats,
                                                             HeadMode mode);

void save_ensemble(const std::filesystem::path& dir, const Ensemble& ensemble);
Ensemble load_ensemble(const std::filesystem::path& dir);

}  // namespace cpr

#endif  // CPR_PLAYERS_H_
