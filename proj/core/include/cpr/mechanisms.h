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

#ifndef CPR_MECHANISMS_H_
#define CPR_MECHANISMS_H_

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpr/game.h"
#include "cpr/rng.h"

namespace cpr {

// Mix of an equal split (w = 1) and a split proportional to last round's
// contributions (w = 0). retention leaves that fraction of the pool unallocated.
struct WeightedSpec {
  double w = 1.0;
  double retention = 0.0;
};

struct RandomDirichletSpec {
  double concentration = 1.0;
};

// Weighted baseline whose w = (R / R0)^k follows the pool.
struct InterpolatingSpec {
  double k = 22.0;
  double retention = 0.0;
};

enum class PlannerVariant { kRecurrent, kFeedforward };

struct NeuralSpec {
  std::string checkpoint;  // path to a planner checkpoint
  PlannerVariant variant = PlannerVariant::kRecurrent;
  double pool_scale = 1.0;
};

using MechanismSpec =
    std::variant<WeightedSpec, RandomDirichletSpec, InterpolatingSpec, NeuralSpec>;

void validate(const MechanismSpec& spec);
std::string mechanism_id(const MechanismSpec& spec);
MechanismSpec mechanism_from_json(const nlohmann::json& j);
nlohmann::ordered_json mechanism_to_json(const MechanismSpec& spec);

std::vector<double> equal_first_round(double pool, int num_players, double retention = 0.0);

// e_i = w R / p + (1 - w) R c_i / sum(c). When sum(c) == 0 the proportional
// part is withheld (stays in the pool).
std::vector<double> weighted_offers(double pool, std::span<const double> prev_contribs,
                                    double w, double retention = 0.0);

double interpolation_weight(double pool, double k, double max_pool);
std::vector<double> interpolating_offers(double pool, std::span<const double> prev_contribs,
                                         double k, double max_pool, double retention = 0.0);

// p + 1 proportions from a symmetric Dirichlet; the last one stays in the pool.
Allocation dirichlet_offers(double pool, int num_players, Rng& rng, double concentration = 1.0);

class WeightedMechanism : public Mechanism {
 public:
  explicit WeightedMechanism(WeightedSpec spec);
  void begin_episode(const GameConfig&, uint64_t) override {}
  Allocation allocate(const GameState& state, const GameConfig& config) override;
  std::string id() const override { return mechanism_id(spec_); }

 private:
  WeightedSpec spec_;
};

class InterpolatingMechanism : public Mechanism {
 public:
  explicit InterpolatingMechanism(InterpolatingSpec spec);
  void begin_episode(const GameConfig&, uint64_t) override {}
  Allocation allocate(const GameState& state, const GameConfig& config) override;
  std::string id() const override { return mechanism_id(spec_); }

 private:
  InterpolatingSpec spec_;
};

class RandomMechanism : public Mechanism {
 public:
  explicit RandomMechanism(RandomDirichletSpec spec);
  void begin_episode(const GameConfig& config, uint64_t seed) override;
  Allocation allocate(const GameState& state, const GameConfig& config) override;
  std::string id() const override { return mechanism_id(spec_); }

 private:
  RandomDirichletSpec spec_;
  Rng rng_;
};

// Builds any mechanism, loading planner checkpoints for NeuralSpec.
std::unique_ptr<Mechanism> make_mechanism(const MechanismSpec& spec);

// log(k) = -5.0, -4.9, ..., 5.0 (101 points).
std::vector<double> default_k_grid();

struct KSweepRow {
  double k = 0.0;
  double mean_surplus = 0.0;
  double mean_gini = 0.0;
};

struct KSweepResult {
  std::vector<KSweepRow> rows;
  double best_k = 0.0;  // argmax mean surplus, ties toward larger k
};

KSweepResult sweep_interpolation_k(std::span<const double> grid,
                                   std::span<PlayerModel* const> players,
                                   const GameConfig& config, int episodes_per_k,
                                   uint64_t seed);

}  // namespace cpr

#endif  // CPR_MECHANISMS_H_
