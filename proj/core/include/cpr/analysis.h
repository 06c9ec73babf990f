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

#ifndef CPR_ANALYSIS_H_
#define CPR_ANALYSIS_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/planner.h"
#include "cpr/players.h"

namespace cpr {

// Pairwise population Gini: sum_ij |x_i - x_j| / (2 n sum x). All-zero input
// gives 0; negative entries throw NegativeValue.
double gini(std::span<const double> values);

struct ExclusionEvent {
  int player = 0;
  int start_trial = 0;  // 1-indexed trial of the first sub-threshold offer
  int duration = 0;
  bool permanent = false;
  double prior_reciprocation = 0.0;  // contribution on the trial before exclusion
  std::optional<double> reinclusion_offer;
  std::optional<double> pool_at_reinclusion;
};

struct TrialMetrics {
  int trial = 0;  // 1-indexed
  double pool = 0.0;
  double offer_gini = 0.0;
  int active = 0;
};

struct MetricsReport {
  double total_surplus = 0.0;
  std::vector<double> player_surplus;
  double gini_surplus = 0.0;
  double active_players_mean = 0.0;
  std::optional<int> depletion_trial;  // first trial with pool below threshold
  bool sustained = false;              // pool at the final trial >= threshold
  std::vector<TrialMetrics> trials;
  std::vector<ExclusionEvent> exclusions;
};

// Pool on trial t is the pool at the start of that trial.
MetricsReport game_metrics(const EpisodeLog& log, double threshold = 1.0);
std::vector<ExclusionEvent> exclusion_events(const EpisodeLog& log, double threshold = 1.0);

inline constexpr int kMaxLag = 4;

struct LaggedRegressionResult {
  std::vector<int> lags;  // -4..+4
  std::vector<int> trials;  // 1-indexed trials with a fitted regression
  // Per fitted trial, coefficient per lag (intercept excluded).
  std::vector<std::vector<double>> coefficients;
  std::vector<std::vector<double>> standard_errors;
  std::vector<double> median;  // per lag across trials
  std::vector<int> skipped_trials;  // singular designs
};

// For every trial with a full +-4 window, OLS (with intercept) of offer_{i,t}
// on c_{i,t+k} across players and games.
// Throws SingularDesign when no trial yields a full-rank design.
LaggedRegressionResult lagged_offer_regression(std::span<const EpisodeLog> logs);

struct RatioBucket {
  int active_count = 0;
  double mean_ratio = 0.0;
  int trials = 0;
};

struct ReciprocationProfile {
  std::vector<RatioBucket> buckets;
  double reference = 0.0;  // 1 / m
  int omitted_trials = 0;  // trials with no allocation to active players
};

ReciprocationProfile reciprocation_ratio_profile(std::span<const EpisodeLog> logs, double growth,
                                                 double threshold = 1.0);

// ---------------------------------------------------------------------------
// Simulation-backed reports

struct ConditionSummary {
  std::string label;
  double mean_surplus = 0.0;
  double mean_gini = 0.0;
  double mean_offer_gini = 0.0;
  double mean_active = 0.0;
  double sustained_fraction = 0.0;
  double mean_depletion_trial = 0.0;  // games without depletion count as their length
  int games = 0;
};

ConditionSummary summarize(const std::string& label, std::span<const EpisodeLog> logs,
                           double threshold = 1.0);

std::vector<EpisodeLog> simulate_games(const GameConfig& config, Mechanism& mechanism,
                                       std::span<PlayerModel* const> players, int games,
                                       uint64_t seed);

struct PoolScalingRow {
  double coefficient = 0.0;
  double mean_offer_gini = 0.0;
};

std::vector<double> default_pool_scaling_grid();

// Only the pool the planner observes is scaled; the game pool is untouched.
std::vector<PoolScalingRow> pool_scaling_probe(std::shared_ptr<const PlannerNet> planner,
                                               const Ensemble& ensemble, const GameConfig& game,
                                               std::span<const double> coefficients,
                                               int episodes, uint64_t seed);

struct SweepCell {
  std::string mechanism;
  double max_pool = 0.0;
  double growth = 0.0;
  double mean_surplus = 0.0;
  double mean_gini = 0.0;
  int games = 0;
};

std::vector<SweepCell> parameter_generalization_sweep(std::span<const MechanismSpec> mechanisms,
                                                      std::span<PlayerModel* const> players,
                                                      const GameConfig& base,
                                                      std::span<const double> pool_grid,
                                                      std::span<const double> growth_grid,
                                                      int episodes, uint64_t seed);

struct LongUnrollRow {
  uint64_t seed = 0;
  std::optional<int> depletion_trial;
  double total_surplus = 0.0;
  double gini = 0.0;
};

// Games of `rounds` fixed rounds (sustainability horizon probe).
std::vector<LongUnrollRow> long_unroll(const GameConfig& base, Mechanism& mechanism,
                                       std::span<PlayerModel* const> players, int rounds,
                                       int games, uint64_t seed);

// ---------------------------------------------------------------------------
// CSV reports (header row, fixed column order)

void write_game_table(std::ostream& out, std::span<const EpisodeLog> logs, double threshold = 1.0);
void write_trial_table(std::ostream& out, std::span<const EpisodeLog> logs, double threshold = 1.0);
void write_exclusion_table(std::ostream& out, std::span<const EpisodeLog> logs,
                           double threshold = 1.0);
void write_lagged_table(std::ostream& out, const LaggedRegressionResult& result);
void write_ratio_table(std::ostream& out, const ReciprocationProfile& profile);
void write_summary_table(std::ostream& out, std::span<const ConditionSummary> rows);

}  // namespace cpr

#endif  // CPR_ANALYSIS_H_
