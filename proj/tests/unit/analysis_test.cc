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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "cpr/analysis.h"
#include "cpr/error.h"
#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/players.h"

using namespace cpr;

namespace {

double brute_gini(const std::vector<double>& x) {
  double num = 0, total = 0;
  for (double a : x) {
    total += a;
    for (double b : x) num += std::abs(a - b);
  }
  if (total == 0) return 0;
  return num / (2.0 * static_cast<double>(x.size()) * total);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidConfig;
}

// Log built directly from per-trial offers and contributions; pool trace is
// supplied so the metrics can be checked in isolation from the engine.
EpisodeLog synthetic_log(const std::vector<std::vector<double>>& offers,
                         const std::vector<std::vector<double>>& contribs,
                         const std::vector<double>& pools) {
  EpisodeLog log;
  log.config.num_players = static_cast<int>(offers.front().size());
  log.config.max_rounds = static_cast<int>(offers.size());
  log.mechanism_id = "synthetic";
  log.player_ids.assign(offers.front().size(), "p");
  for (size_t t = 0; t < offers.size(); ++t) {
    RoundRecord r;
    r.t = static_cast<int>(t);
    r.pool_before = pools[t];
    r.offers = offers[t];
    r.contributions = contribs[t];
    for (size_t i = 0; i < offers[t].size(); ++i) r.surpluses.push_back(offers[t][i] - contribs[t][i]);
    r.pool_after = t + 1 < pools.size() ? pools[t + 1] : pools[t];
    log.rounds.push_back(r);
  }
  return log;
}

std::vector<EpisodeLog> scripted_logs(const MechanismSpec& spec, const Archetype& archetype,
                                      int games, uint64_t seed) {
  GameConfig c;
  auto m = make_mechanism(spec);
  std::vector<ScriptedPlayer> seats(4, ScriptedPlayer(archetype));
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);
  return simulate_games(c, *m, players, games, seed);
}

}  // namespace

TEST_CASE("gini") {
  CHECK(gini(std::vector<double>{1, 1, 1, 1}) == 0.0);
  CHECK(gini(std::vector<double>{1, 0, 0, 0}) == 0.75);
  CHECK(gini(std::vector<double>{0, 0, 0, 0}) == 0.0);
  CHECK(std::abs(gini(std::vector<double>{36, 50, 50, 22}) - 196.0 / 1264.0) < 1e-15);
  CHECK(code_of([] { gini(std::vector<double>{1, -1, 0, 0}); }) == ErrorCode::kNegativeValue);

  SUBCASE("matches the pairwise oracle on random vectors") {
    Rng rng(17);
    int mismatches = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      std::vector<double> x(static_cast<size_t>(1 + rng.uniform_int(12)));
      for (auto& v : x) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0, 100);
      const double g = gini(x);
      if (std::abs(g - brute_gini(x)) > 1e-12) ++mismatches;
      const double n = static_cast<double>(x.size());
      if (g < 0 || g > (n - 1) / n + 1e-12) ++mismatches;
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("game metrics") {
  const EpisodeLog log = synthetic_log({{50, 0.5, 1, 20}, {30, 30, 30, 30}, {10, 10, 10, 10}, {0.1, 0.1, 0.1, 0.1}},
                                       {{10, 0, 1, 0}, {20, 20, 20, 20}, {0, 0, 0, 0}, {0, 0, 0, 0}},
                                       {200, 80, 0.4, 0.4});
  const MetricsReport m = game_metrics(log);
  REQUIRE(m.trials.size() == 4);
  CHECK(m.trials[0].active == 3);
  CHECK(m.trials[0].trial == 1);
  CHECK(m.trials[1].offer_gini == 0.0);
  REQUIRE(m.depletion_trial.has_value());
  CHECK(*m.depletion_trial == 3);
  CHECK_FALSE(m.sustained);
  CHECK(std::abs(m.total_surplus - log.total_surplus()) < 1e-12);
  CHECK(std::abs(m.active_players_mean - (3 + 4 + 4 + 0) / 4.0) < 1e-12);
  CHECK(m.gini_surplus == gini(m.player_surplus));

  const MetricsReport again = game_metrics(log);
  CHECK(again.gini_surplus == m.gini_surplus);
  CHECK(again.total_surplus == m.total_surplus);

  EpisodeLog stale = log;
  stale.schema_version = "0";
  CHECK(code_of([&] { game_metrics(stale); }) == ErrorCode::kSchemaVersionMismatch);
}

TEST_CASE("exclusion events") {
  const std::vector<double> pools(4, 100);
  const std::vector<std::vector<double>> contribs{{20, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}};
  const EpisodeLog log = synthetic_log({{50, 5, 5, 5}, {0.5, 5, 5, 5}, {0.2, 5, 5, 5}, {30, 5, 5, 5}}, contribs, pools);
  const auto events = exclusion_events(log);
  REQUIRE(events.size() == 1);
  CHECK(events[0].player == 0);
  CHECK(events[0].start_trial == 2);
  CHECK(events[0].duration == 2);
  CHECK_FALSE(events[0].permanent);
  CHECK(events[0].prior_reciprocation == 20);
  CHECK(events[0].reinclusion_offer == 30);
  CHECK(events[0].pool_at_reinclusion == 100);

  const EpisodeLog none = synthetic_log({{5, 5, 5, 5}, {1, 1, 1, 1}}, {{0, 0, 0, 0}, {0, 0, 0, 0}}, {100, 100});
  CHECK(exclusion_events(none).empty());

  SUBCASE("proportional baseline excludes a free rider for good") {
    GameConfig c;
    WeightedMechanism m({0.0, 0.0});
    std::vector<ScriptedPlayer> seats{ScriptedPlayer(FreeRider{}), ScriptedPlayer(Sustainer{0.25}),
                                      ScriptedPlayer(Sustainer{0.25}), ScriptedPlayer(Sustainer{0.25})};
    std::vector<PlayerModel*> players;
    for (auto& s : seats) players.push_back(&s);
    const EpisodeLog game = run_episode(c, m, players, 1);
    const auto ev = exclusion_events(game);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].player == 0);
    CHECK(ev[0].start_trial == 2);
    CHECK(ev[0].permanent);
    CHECK(ev[0].start_trial + ev[0].duration - 1 == 40);
    CHECK_FALSE(ev[0].reinclusion_offer.has_value());
  }

  SUBCASE("durations fit inside the game") {
    Rng rng(4);
    for (int g = 0; g < 200; ++g) {
      std::vector<std::vector<double>> offers(20, std::vector<double>(4)), zero(20, std::vector<double>(4, 0.0));
      for (auto& row : offers) {
        for (auto& o : row) o = rng.uniform() < 0.4 ? rng.uniform(0, 0.99) : rng.uniform(1, 50);
      }
      const auto ev = exclusion_events(synthetic_log(offers, zero, std::vector<double>(20, 100)));
      std::vector<int> total(4, 0);
      for (const auto& e : ev) {
        CHECK(e.duration >= 1);
        total[e.player] += e.duration;
        if (e.permanent) CHECK(e.start_trial + e.duration - 1 == 20);
      }
      for (int t : total) CHECK(t <= 20);
    }
  }
}

TEST_CASE("lagged regression") {
  SUBCASE("recovers a planted lag -1 weight") {
    Rng rng(21);
    std::vector<EpisodeLog> logs;
    for (int g = 0; g < 60; ++g) {
      std::vector<std::vector<double>> offers(20, std::vector<double>(4)), contribs(20, std::vector<double>(4));
      for (auto& row : contribs) {
        for (auto& c : row) c = rng.uniform(0, 20);
      }
      for (int t = 0; t < 20; ++t) {
        for (int i = 0; i < 4; ++i) {
          const double prev = t > 0 ? contribs[t - 1][i] : 0.0;
          offers[t][i] = 2.0 * prev + rng.normal(0, 1);
        }
      }
      logs.push_back(synthetic_log(offers, contribs, std::vector<double>(20, 100)));
    }
    const auto r = lagged_offer_regression(logs);
    REQUIRE(r.lags == std::vector<int>{-4, -3, -2, -1, 0, 1, 2, 3, 4});
    CHECK(r.trials.size() == 12);
    CHECK(std::abs(r.median[3] - 2.0) < 0.1);
    for (size_t k = 0; k < r.lags.size(); ++k) {
      if (k != 3) CHECK(std::abs(r.median[k]) < 0.1);
    }
  }

  SUBCASE("collinear design") {
    std::vector<std::vector<double>> offers(12, std::vector<double>(4, 10.0)),
        contribs(12, std::vector<double>(4, 5.0));
    const std::vector<EpisodeLog> logs{synthetic_log(offers, contribs, std::vector<double>(12, 100))};
    CHECK(code_of([&] { lagged_offer_regression(logs); }) == ErrorCode::kSingularDesign);
  }

  SUBCASE("proportional baseline is dominated by lag -1") {
    const auto logs = scripted_logs(WeightedSpec{0.0, 0.0}, ConditionalCooperator{1.0, 0.2, 1.0 / 1.4}, 64, 5);
    const auto r = lagged_offer_regression(logs);
    for (size_t k = 0; k < r.lags.size(); ++k) {
      INFO("lag " << r.lags[k] << " median " << r.median[k]);
      if (k != 3) CHECK(std::abs(r.median[k]) < std::abs(r.median[3]));
    }
  }
}

TEST_CASE("reciprocation ratio profile") {
  const auto sustain = scripted_logs(WeightedSpec{1.0, 0.0}, Sustainer{1.0 - 1.0 / 1.4}, 3, 1);
  const auto profile = reciprocation_ratio_profile(sustain, 1.4);
  CHECK(std::abs(profile.reference - 1.0 / 1.4) < 1e-15);
  REQUIRE_FALSE(profile.buckets.empty());
  for (const auto& b : profile.buckets) CHECK(std::abs(b.mean_ratio - 1.0 / 1.4) < 1e-12);

  const auto free = reciprocation_ratio_profile(scripted_logs(WeightedSpec{1.0, 0.0}, FreeRider{}, 2, 1), 1.4);
  for (const auto& b : free.buckets) CHECK(b.mean_ratio == 0.0);

  const auto full = reciprocation_ratio_profile(scripted_logs(WeightedSpec{1.0, 0.0}, Sustainer{0.0}, 2, 1), 1.4);
  for (const auto& b : full.buckets) CHECK(std::abs(b.mean_ratio - 1.0) < 1e-12);

  std::ostringstream csv;
  write_ratio_table(csv, profile);
  CHECK(csv.str().rfind("active_count,mean_ratio,trials,reference\n", 0) == 0);
}

TEST_CASE("pool scaling probe") {
  CloneConfig cfg;
  cfg.memory = 8;
  auto clone = std::make_shared<const CloneModel>(cfg, 3);
  Ensemble e;
  e.members = {clone};
  e.labels = {"c"};
  PlannerConfig pc;
  pc.width = 8;
  pc.node_memory = 8;
  auto planner = std::make_shared<const PlannerNet>(pc, 2);
  GameConfig game;
  game.max_rounds = 8;
  const std::vector<double> grid{0.1, 0.5, 1, 2, 6};
  const auto rows = pool_scaling_probe(planner, e, game, grid, 4, 9);
  REQUIRE(rows.size() == 5);
  for (size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].coefficient == grid[i]);

  // Identity intervention equals the plain planner on the same seeds.
  const std::vector<double> one{1.0};
  const auto identity = pool_scaling_probe(planner, e, game, one, 4, 9);
  CHECK(identity[0].mean_offer_gini == rows[2].mean_offer_gini);
  CHECK(default_pool_scaling_grid().front() == 0.1);
  CHECK(default_pool_scaling_grid().back() == 6.0);
}

TEST_CASE("parameter sweep") {
  std::vector<ScriptedPlayer> seats(4, ScriptedPlayer(Sustainer{0.25}));
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);
  const std::vector<MechanismSpec> mechs{WeightedSpec{1.0, 0.0}};
  GameConfig base;
  const std::vector<double> pools{100, 200, 400}, growths{1.2, 1.4, 1.6};
  const auto cells = parameter_generalization_sweep(mechs, players, base, pools, growths, 3, 4);
  REQUIRE(cells.size() == 9);
  for (const auto& c : cells) {
    CHECK(c.games == 3);
    CHECK(c.mechanism == "equal");
  }

  const std::vector<double> one_pool{200}, one_growth{1.4};
  const auto single = parameter_generalization_sweep(mechs, players, base, one_pool, one_growth, 3, 4);
  REQUIRE(single.size() == 1);
  auto m = make_mechanism(mechs[0]);
  const auto logs = simulate_games(base, *m, players, 3, 4);
  const ConditionSummary s = summarize("equal", logs);
  CHECK(single[0].mean_surplus == s.mean_surplus);
  CHECK(single[0].mean_gini == s.mean_gini);

  SUBCASE("no growth bounds the surplus") {
    const std::vector<double> shrink{0.9};
    const auto cells2 = parameter_generalization_sweep(mechs, players, base, one_pool, shrink, 3, 4);
    CHECK(cells2[0].mean_surplus <= 200.0 + 1e-9);
  }
}

TEST_CASE("long unroll and summaries") {
  GameConfig base;
  WeightedMechanism m({1.0, 0.0});
  std::vector<ScriptedPlayer> seats(4, ScriptedPlayer(Sustainer{1.0 - 1.0 / 1.4}));
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);
  const auto rows = long_unroll(base, m, players, 200, 2, 1);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) CHECK_FALSE(r.depletion_trial.has_value());

  std::vector<ScriptedPlayer> riders(4, ScriptedPlayer(FreeRider{}));
  std::vector<PlayerModel*> rp;
  for (auto& s : riders) rp.push_back(&s);
  const auto drained = long_unroll(base, m, rp, 50, 1, 1);
  REQUIRE(drained[0].depletion_trial.has_value());
  CHECK(*drained[0].depletion_trial == 2);
}

TEST_CASE("csv tables") {
  const auto logs = scripted_logs(WeightedSpec{0.5, 0.0}, Sustainer{0.25}, 2, 3);
  std::ostringstream games, trials, excl, summary;
  write_game_table(games, logs);
  write_trial_table(trials, logs);
  write_exclusion_table(excl, logs);
  const std::vector<ConditionSummary> rows{summarize("mixed", logs)};
  write_summary_table(summary, rows);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  CHECK(games.str().rfind("game,seed,mechanism,rounds,total_surplus", 0) == 0);
  CHECK(lines(games.str()) == 3);
  CHECK(trials.str().rfind("game,trial,pool,offer_gini,active\n", 0) == 0);
  CHECK(lines(trials.str()) == 81);
  CHECK(lines(excl.str()) == 1);
  CHECK(lines(summary.str()) == 2);
}
