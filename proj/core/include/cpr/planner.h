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

#ifndef CPR_PLANNER_H_
#define CPR_PLANNER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/nn/checkpoint.h"
#include "cpr/nn/layers.h"
#include "cpr/nn/optim.h"
#include "cpr/players.h"

namespace cpr {

enum class GradientEstimator { kSurrogatePathwise, kScoreFunction };

struct PlannerConfig {
  std::string preset = "m1";
  int width = 32;        // graph-block layer width
  int node_memory = 32;  // GRU size in the second block (recurrent variant)
  PlannerVariant variant = PlannerVariant::kRecurrent;
  GradientEstimator estimator = GradientEstimator::kSurrogatePathwise;
  double gini_weight = 0.0;

  static PlannerConfig M1();
  static PlannerConfig M1Feedforward();
  static PlannerConfig M2();
  void validate() const;
};

nlohmann::ordered_json planner_config_to_json(const PlannerConfig& c);
PlannerConfig planner_config_from_json(const nlohmann::json& j);

// Graph-network allocation policy: two blocks over a fully connected player
// graph, a scalar logit per player node plus one global logit for the
// retained share, softmax over the p + 1 logits.
class PlannerNet {
 public:
  PlannerNet(PlannerConfig config, uint64_t init_seed);
  PlannerNet(PlannerConfig config, nn::ParamTree params);

  const PlannerConfig& config() const { return config_; }
  const nn::ParamTree& params() const { return params_; }
  nn::ParamTree& mutable_params() { return params_; }
  int hidden_size() const;

  struct Step {
    nn::Var logits;  // num_graphs x (p + 1); columns 0..p-1 players, p retained
    nn::Var hidden;  // num_nodes x hidden_size (invalid for feedforward)
  };
  // node_attrs: (num_graphs * p) x 3 = [prev offer, prev contribution, pool] / R0,
  // global_attrs: num_graphs x 1 = pool / R0. Parameters must be bound.
  Step step(nn::Tape& tape, nn::Var node_attrs, nn::Var global_attrs, nn::Var hidden,
            const nn::GraphIndex& index) const;

  nn::Checkpoint to_checkpoint(int64_t step) const;
  static PlannerNet from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  void build_blocks();

  PlannerConfig config_;
  nn::ParamTree params_;
  nn::GraphBlock first_;
  nn::GraphBlock second_;
};

// Inference-only helper for one game: returns the p + 1 fractions and
// advances `hidden`.
std::vector<double> planner_forward(const PlannerNet& net, std::span<const double> prev_offers,
                                    std::span<const double> prev_contribs, double pool,
                                    double max_pool, nn::Matrix& hidden);

class PlannerMechanism : public Mechanism {
 public:
  // pool_scale multiplies only the pool the planner observes.
  explicit PlannerMechanism(std::shared_ptr<const PlannerNet> net, double pool_scale = 1.0,
                            std::string label = "planner");

  void begin_episode(const GameConfig& config, uint64_t seed) override;
  Allocation allocate(const GameState& state, const GameConfig& config) override;
  std::string id() const override { return label_; }

 private:
  std::shared_ptr<const PlannerNet> net_;
  double pool_scale_;
  std::string label_;
  nn::Matrix hidden_;
};

std::unique_ptr<Mechanism> load_planner_mechanism(const NeuralSpec& spec);

// ---------------------------------------------------------------------------
// Differentiable unrolls

struct RolloutOptions {
  GameConfig game;
  GradientEstimator estimator = GradientEstimator::kSurrogatePathwise;
  // Bin selection used by the players during the unroll.
  HeadMode head = HeadMode::kArgmaxBin;
  double gini_weight = 0.0;
  double pool_scale = 1.0;
  DrawMode draw = DrawMode::kWithReplacement;
  int horizon = -1;  // defaults to game.max_rounds
};

// Everything recorded for a batch of games played on one tape.
struct BatchRollout {
  nn::Var objective;     // 1x1: mean over games of the per-game objective
  nn::Var loss;          // 1x1: quantity whose gradient estimates -d objective
  nn::Var surplus;       // num_games x 1 total surplus
  nn::Var gini;          // num_games x 1 smoothed Gini of per-player surplus
  std::vector<nn::Var> planner_logits;  // per round, num_games x (p + 1)
  std::vector<EpisodeLog> trajectories;
};

// Plays `seeds.size()` games of planner vs. ensemble on the tape. Players are
// drawn per game from the ensemble using `options.draw`.
BatchRollout differentiable_rollout(nn::Tape& tape, const PlannerNet& planner,
                                    std::span<const DifferentiablePolicy* const> policies,
                                    std::span<const std::string> policy_labels,
                                    std::span<const uint64_t> seeds,
                                    const RolloutOptions& options);

struct UnrollResult {
  double total_surplus = 0.0;
  EpisodeLog trajectory;
  std::vector<double> per_player_surplus;
};

// One evaluation game; the trajectory is also replayed through game_core and
// must agree with the unrolled pool values.
UnrollResult unroll_and_score(const PlannerNet& planner, const Ensemble& ensemble,
                              const RolloutOptions& options, uint64_t seed);

struct GradientEstimate {
  nn::ParamTree grads;  // d objective / d params (ascent direction)
  double objective = 0.0;
  double mean_surplus = 0.0;
  double mean_gini = 0.0;
};

GradientEstimate estimate_gradient(const PlannerNet& planner, const Ensemble& ensemble,
                                   std::span<const uint64_t> seeds,
                                   const RolloutOptions& options);

struct PlannerTrainHyper {
  int batch = 32;
  int steps = 5000;
  nn::LrSchedule schedule{1e-3, 1e-5, 0.05, 1000};
  int checkpoint_every = 1000;
  double clip_norm = 0.0;
  HeadMode head = HeadMode::kArgmaxBin;
  int horizon = -1;

  static PlannerTrainHyper PaperM1();
  static PlannerTrainHyper PaperM2();
  static PlannerTrainHyper DeskScale();
};

struct PlannerCheckpoint {
  int64_t step = 0;
  nn::ParamTree params;
};

struct TrainingMetrics {
  int64_t step = 0;
  double lr = 0.0;
  double objective = 0.0;
  double surplus = 0.0;
  double gini = 0.0;
};

nlohmann::ordered_json metrics_to_json(const TrainingMetrics& m);

struct PlannerTrainResult {
  std::vector<PlannerCheckpoint> checkpoints;
  std::vector<TrainingMetrics> metrics;
};

PlannerTrainResult train_planner(const PlannerConfig& config, const Ensemble& ensemble,
                                 const GameConfig& game, const PlannerTrainHyper& hyper,
                                 uint64_t seed,
                                 const std::function<void(const TrainingMetrics&)>& on_metrics = {});

struct PlannerSelection {
  size_t index = 0;
  std::vector<double> scores;
};

// Evaluates every checkpoint on fixed-slot tables over seeded games and keeps
// the best mean surplus; ties go to the later step.
PlannerSelection select_planner_checkpoint(std::span<const PlannerCheckpoint> checkpoints,
                                           const PlannerConfig& config, const Ensemble& ensemble,
                                           const GameConfig& game, int episodes, uint64_t seed);

}  // namespace cpr

#endif  // CPR_PLANNER_H_
