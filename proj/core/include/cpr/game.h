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

#ifndef CPR_GAME_H_
#define CPR_GAME_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpr/rng.h"

namespace cpr {

inline constexpr double kFeasibilityTolerance = 1e-9;
inline constexpr char kEpisodeSchemaVersion[] = "1";

struct Termination {
  enum class Kind { kFixed, kGeometric };

  Kind kind = Kind::kFixed;
  // Geometric mode only: no termination before min_rounds completed rounds,
  // afterwards the game continues with probability continue_prob per round.
  int min_rounds = 25;
  double continue_prob = 0.8;

  static Termination Fixed() { return {}; }
  static Termination Geometric(int min_rounds, double continue_prob) {
    return {Kind::kGeometric, min_rounds, continue_prob};
  }
  bool operator==(const Termination&) const = default;
};

struct GameConfig {
  int num_players = 4;
  double initial_pool = 200.0;
  // Returned contributions are multiplied by this factor (growth rate r = m - 1).
  double growth = 1.4;
  // Episode length in fixed mode; ignored by geometric termination.
  int max_rounds = 40;
  Termination termination;
  bool integer_actions = false;
  // Offers strictly below this force a zero contribution.
  double exclusion_threshold = 1.0;

  void validate() const;
  double growth_rate() const { return growth - 1.0; }
  bool operator==(const GameConfig&) const = default;
};

// Snapshot of the economy between mechanism and player moves. Values are
// immutable once returned; each transition produces a new state.
struct GameState {
  int round = 0;
  double pool = 0.0;
  // Set by apply_offers for the round in progress.
  bool offers_pending = false;
  std::vector<double> offers;
  double retained = 0.0;
  std::vector<double> prev_offers;
  std::vector<double> prev_contribs;
  std::vector<double> cum_surplus;
  bool terminated = false;
};

struct RoundRecord {
  int t = 0;
  double pool_before = 0.0;
  std::vector<double> offers;
  double retained = 0.0;
  std::vector<double> contributions;
  std::vector<double> surpluses;
  double pool_after = 0.0;

  bool operator==(const RoundRecord&) const = default;
};

struct EpisodeLog {
  GameConfig config;
  std::string mechanism_id;
  std::vector<std::string> player_ids;
  std::vector<RoundRecord> rounds;
  uint64_t seed = 0;
  std::string schema_version = kEpisodeSchemaVersion;
  // Free-form annotations such as bot substitutions ("seat 2 -> bot @ t=7").
  std::vector<std::string> events;

  double total_surplus() const;
  std::vector<double> player_surplus() const;
  bool operator==(const EpisodeLog&) const = default;
};

GameState initial_state(const GameConfig& config);

// Mechanism move. Offers are recorded; the pool changes when the round resolves.
GameState apply_offers(const GameConfig& config, GameState state,
                       std::span<const double> offers, double retained);

struct Resolution {
  GameState state;
  RoundRecord record;
};

// Player move: pool_after = min(R0, pool_before - sum(offers) + m * sum(contribs)).
Resolution apply_contributions(const GameConfig& config, GameState state,
                               std::span<const double> contribs);

// Called once per completed round. Fixed mode is deterministic; geometric
// mode draws from rng only once min_rounds have completed.
bool should_terminate(const GameState& state, const GameConfig& config, Rng& rng);

// What a seat sees when asked to respond in the current round.
struct SeatView {
  int seat = 0;
  int round = 0;
  double pool = 0.0;  // pool at the start of the round
  std::span<const double> offers;
  std::span<const double> prev_offers;
  std::span<const double> prev_contribs;
  const GameConfig* config = nullptr;
};

class PlayerModel {
 public:
  virtual ~PlayerModel() = default;
  virtual void begin_episode(uint64_t seed) = 0;
  // Contribution in [0, offer]. The engine forces 0 below the exclusion
  // threshold but still calls respond() so stateful players see every round.
  virtual double respond(const SeatView& view) = 0;
  virtual std::string id() const = 0;
};

struct Allocation {
  std::vector<double> offers;
  double retained = 0.0;
};

class Mechanism {
 public:
  virtual ~Mechanism() = default;
  virtual void begin_episode(const GameConfig& config, uint64_t seed) = 0;
  virtual Allocation allocate(const GameState& state, const GameConfig& config) = 0;
  virtual std::string id() const = 0;
};

// Full round loop until termination. Deterministic in (config, mechanism,
// players, seed).
EpisodeLog run_episode(const GameConfig& config, Mechanism& mechanism,
                       std::span<PlayerModel* const> players, uint64_t seed);

}  // namespace cpr

#endif  // CPR_GAME_H_
