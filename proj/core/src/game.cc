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

#include "cpr/game.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cpr/error.h"

namespace cpr {
namespace {

void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) throw Error(code, message);
}

}  // namespace

void GameConfig::validate() const {
  require(num_players >= 2, ErrorCode::kInvalidConfig, "num_players must be >= 2");
  require(initial_pool > 0 && std::isfinite(initial_pool), ErrorCode::kInvalidConfig,
          "initial_pool must be positive");
  require(growth > 0 && std::isfinite(growth), ErrorCode::kInvalidConfig,
          "growth must be positive");
  require(max_rounds >= 1, ErrorCode::kInvalidConfig, "max_rounds must be >= 1");
  require(exclusion_threshold >= 0, ErrorCode::kInvalidConfig,
          "exclusion_threshold must be >= 0");
  if (termination.kind == Termination::Kind::kGeometric) {
    require(termination.min_rounds >= 1, ErrorCode::kInvalidConfig, "min_rounds must be >= 1");
    require(termination.continue_prob >= 0 && termination.continue_prob < 1,
            ErrorCode::kInvalidConfig, "continue_prob must be in [0, 1)");
  }
}

double EpisodeLog::total_surplus() const {
  double total = 0.0;
  for (double s : player_surplus()) total += s;
  return total;
}

std::vector<double> EpisodeLog::player_surplus() const {
  std::vector<double> out(player_ids.empty() ? config.num_players : player_ids.size(), 0.0);
  for (const auto& r : rounds) {
    for (size_t i = 0; i < r.surpluses.size() && i < out.size(); ++i) out[i] += r.surpluses[i];
  }
  return out;
}

GameState initial_state(const GameConfig& config) {
  config.validate();
  GameState s;
  s.pool = config.initial_pool;
  const auto p = static_cast<size_t>(config.num_players);
  s.prev_offers.assign(p, 0.0);
  s.prev_contribs.assign(p, 0.0);
  s.cum_surplus.assign(p, 0.0);
  return s;
}

GameState apply_offers(const GameConfig& config, GameState state,
                       std::span<const double> offers, double retained) {
  require(!state.terminated, ErrorCode::kGameTerminated, "game already terminated");
  require(!state.offers_pending, ErrorCode::kWrongRoundPhase, "offers already applied this round");
  require(offers.size() == static_cast<size_t>(config.num_players), ErrorCode::kInvalidConfig,
          "expected one offer per player");
  double total = 0.0;
  for (size_t i = 0; i < offers.size(); ++i) {
    if (!(offers[i] >= 0.0) || !std::isfinite(offers[i])) {
      std::ostringstream msg;
      msg << "offer " << i << " is " << offers[i];
      throw Error(ErrorCode::kNegativeOffer, msg.str());
    }
    total += offers[i];
  }
  require(retained >= -kFeasibilityTolerance, ErrorCode::kNegativeOffer, "negative retention");
  if (total + retained > state.pool + kFeasibilityTolerance) {
    std::ostringstream msg;
    msg << "offers " << total << " + retained " << retained << " exceed pool " << state.pool;
    throw Error(ErrorCode::kOverAllocation, msg.str());
  }
  state.offers.assign(offers.begin(), offers.end());
  state.retained = std::max(0.0, retained);
  state.offers_pending = true;
  return state;
}

Resolution apply_contributions(const GameConfig& config, GameState state,
                               std::span<const double> contribs) {
  require(state.offers_pending, ErrorCode::kWrongRoundPhase, "no offers pending");
  require(contribs.size() == state.offers.size(), ErrorCode::kInvalidConfig,
          "expected one contribution per player");
  for (size_t i = 0; i < contribs.size(); ++i) {
    const double c = contribs[i];
    const double e = state.offers[i];
    std::ostringstream where;
    where << "player " << i << ": contribution " << c << ", offer " << e;
    require(std::isfinite(c) && c >= 0.0, ErrorCode::kContributionExceedsOffer,
            "negative contribution, " + where.str());
    require(c <= e, ErrorCode::kContributionExceedsOffer, where.str());
    require(!(e < config.exclusion_threshold && c != 0.0), ErrorCode::kContributionExceedsOffer,
            "offer below exclusion threshold must get 0, " + where.str());
    if (config.integer_actions) {
      require(c == std::floor(c), ErrorCode::kNonIntegerContribution, where.str());
    }
  }

  RoundRecord rec;
  rec.t = state.round;
  rec.pool_before = state.pool;
  rec.offers = state.offers;
  rec.retained = state.retained;
  rec.contributions.assign(contribs.begin(), contribs.end());
  rec.surpluses.resize(contribs.size());

  double offered = 0.0;
  double returned = 0.0;
  for (size_t i = 0; i < contribs.size(); ++i) {
    offered += state.offers[i];
    returned += contribs[i];
    rec.surpluses[i] = state.offers[i] - contribs[i];
    state.cum_surplus[i] += rec.surpluses[i];
  }
  const double next = state.pool - offered + config.growth * returned;
  state.pool = std::clamp(next, 0.0, config.initial_pool);
  rec.pool_after = state.pool;

  state.prev_offers = state.offers;
  state.prev_contribs = rec.contributions;
  state.offers.clear();
  state.retained = 0.0;
  state.offers_pending = false;
  state.round += 1;
  if (config.termination.kind == Termination::Kind::kFixed &&
      state.round >= config.max_rounds) {
    state.terminated = true;
  }
  return {std::move(state), std::move(rec)};
}

bool should_terminate(const GameState& state, const GameConfig& config, Rng& rng) {
  if (config.termination.kind == Termination::Kind::kFixed) {
    return state.round >= config.max_rounds;
  }
  if (state.round < config.termination.min_rounds) return false;
  return rng.uniform() >= config.termination.continue_prob;
}

EpisodeLog run_episode(const GameConfig& config, Mechanism& mechanism,
                       std::span<PlayerModel* const> players, uint64_t seed) {
  config.validate();
  require(players.size() == static_cast<size_t>(config.num_players), ErrorCode::kInvalidConfig,
          "one player model per seat required");

  EpisodeLog log;
  log.config = config;
  log.mechanism_id = mechanism.id();
  log.seed = seed;
  for (auto* player : players) log.player_ids.push_back(player->id());

  mechanism.begin_episode(config, derive_seed(seed, "mechanism"));
  for (size_t i = 0; i < players.size(); ++i) {
    players[i]->begin_episode(derive_seed(derive_seed(seed, "seat"), i));
  }
  Rng termination_rng(derive_seed(seed, "termination"));

  GameState state = initial_state(config);
  std::vector<double> contribs(players.size());
  while (!state.terminated) {
    Allocation alloc = mechanism.allocate(state, config);
    const double pool_before = state.pool;
    state = apply_offers(config, std::move(state), alloc.offers, alloc.retained);
    for (size_t i = 0; i < players.size(); ++i) {
      SeatView view{static_cast<int>(i), state.round, pool_before, state.offers,
                    state.prev_offers, state.prev_contribs, &config};
      double c = players[i]->respond(view);
      const double offer = state.offers[i];
      if (!std::isfinite(c)) c = 0.0;
      c = std::clamp(c, 0.0, offer);
      if (config.integer_actions) c = std::floor(c);
      if (offer < config.exclusion_threshold) c = 0.0;
      contribs[i] = c;
    }
    Resolution res = apply_contributions(config, std::move(state), contribs);
    log.rounds.push_back(std::move(res.record));
    state = std::move(res.state);
    if (config.termination.kind == Termination::Kind::kGeometric) {
      state.terminated = should_terminate(state, config, termination_rng);
    }
  }
  return log;
}

}  // namespace cpr
