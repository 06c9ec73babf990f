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
#include <vector>

#include "doctest.h"

#include "cpr/error.h"
#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/players.h"

using namespace cpr;

namespace {

void check_vec(const std::vector<double>& got, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("weighted offers") {
  const std::vector<double> c1{10, 30, 0, 0};
  check_vec(weighted_offers(100, c1, 1.0), {25, 25, 25, 25});
  check_vec(weighted_offers(100, std::vector<double>{10, 0, 0, 0}, 0.0), {100, 0, 0, 0});
  check_vec(weighted_offers(100, c1, 0.5), {25, 50, 12.5, 12.5});
  SUBCASE("no contributions withholds the proportional part") {
    const auto o = weighted_offers(100, std::vector<double>{0, 0, 0, 0}, 0.25);
    check_vec(o, {6.25, 6.25, 6.25, 6.25});
  }
}

TEST_CASE("first round and retention") {
  check_vec(equal_first_round(200, 4), {50, 50, 50, 50});
  check_vec(equal_first_round(0, 4), {0, 0, 0, 0});
  check_vec(equal_first_round(200, 4, 0.4), {30, 30, 30, 30});

  WeightedMechanism m({0.5, 0.4});
  GameConfig c;
  const Allocation a = m.allocate(initial_state(c), c);
  check_vec(a.offers, {30, 30, 30, 30});
  CHECK(std::abs(a.retained - 80.0) < 1e-12);
}

TEST_CASE("interpolation weight") {
  CHECK(interpolation_weight(200, 22, 200) == 1.0);
  double w = 1.0;
  for (int i = 0; i < 22; ++i) w *= 0.95;
  CHECK(std::abs(interpolation_weight(190, 22, 200) - w) < 1e-12);
  CHECK(std::abs(interpolation_weight(190, 22, 200) - 0.3235) < 1e-4);
  double half = 1.0;
  for (int i = 0; i < 22; ++i) half *= 0.5;
  CHECK(std::abs(interpolation_weight(100, 22, 200) - half) < 1e-18);
  CHECK(interpolation_weight(100, 22, 200) < 3e-7);

  SUBCASE("monotone in the pool") {
    for (double k : {0.1, 1.0, 22.0, 100.0}) {
      double prev = -1.0;
      for (int r = 0; r <= 200; ++r) {
        const double x = interpolation_weight(r, k, 200);
        CHECK(x >= prev);
        prev = x;
      }
      CHECK(interpolation_weight(0, k, 200) == 0.0);
      CHECK(interpolation_weight(200, k, 200) == 1.0);
    }
  }
  SUBCASE("offers at a full pool are equal") {
    check_vec(interpolating_offers(200, std::vector<double>{1, 2, 3, 4}, 22, 200), {50, 50, 50, 50});
  }
}

TEST_CASE("k grid") {
  const auto grid = default_k_grid();
  REQUIRE(grid.size() == 101);
  CHECK(grid.front() == std::exp(-5.0));
  CHECK(grid.back() == std::exp(5.0));
  CHECK(grid[50] == 1.0);
  for (size_t i = 0; i < grid.size(); ++i) {
    const double expected = -5.0 + 0.1 * static_cast<double>(i);
    CHECK(std::abs(std::log(grid[i]) - expected) < 1e-12);
  }
}

TEST_CASE("dirichlet offers") {
  Rng rng(99);
  const int draws = 100000;
  std::vector<double> mean(5, 0.0);
  for (int d = 0; d < draws; ++d) {
    const Allocation a = dirichlet_offers(1.0, 4, rng);
    const double total = sum(a.offers) + a.retained;
    if (std::abs(total - 1.0) > 1e-12) FAIL("proportions do not sum to 1");
    for (int i = 0; i < 4; ++i) mean[i] += a.offers[i];
    mean[4] += a.retained;
  }
  for (double m : mean) CHECK(std::abs(m / draws - 0.2) < 0.01);

  const Allocation zero = dirichlet_offers(0.0, 4, rng);
  check_vec(zero.offers, {0, 0, 0, 0});
  CHECK(zero.retained == 0.0);
}

TEST_CASE("allocations are feasible on fuzzed states") {
  Rng rng(5);
  GameConfig c;
  std::vector<MechanismSpec> specs{WeightedSpec{1.0, 0.0}, WeightedSpec{0.0, 0.0},
                                   WeightedSpec{0.3, 0.2}, InterpolatingSpec{22.0, 0.0},
                                   InterpolatingSpec{0.5, 0.1}, RandomDirichletSpec{1.0},
                                   RandomDirichletSpec{0.3}};
  for (const auto& spec : specs) {
    auto m = make_mechanism(spec);
    m->begin_episode(c, 1);
    for (int trial = 0; trial < 2000; ++trial) {
      GameState s = initial_state(c);
      s.round = rng.uniform_int(40);
      s.pool = rng.uniform() < 0.05 ? 0.0 : rng.uniform(0, 200);
      for (auto& x : s.prev_contribs) x = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0, 60);
      const Allocation a = m->allocate(s, c);
      CHECK(a.offers.size() == 4);
      for (double o : a.offers) CHECK(o >= 0.0);
      CHECK(sum(a.offers) + a.retained <= s.pool + 1e-9);
      CHECK_NOTHROW(apply_offers(c, s, a.offers, a.retained));
    }
  }
}

TEST_CASE("weighted offers are permutation equivariant") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> c(4);
    for (auto& x : c) x = rng.uniform(0, 50);
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<double> cp(4);
    for (int i = 0; i < 4; ++i) cp[i] = c[perm[i]];
    const double w = rng.uniform();
    const auto o = weighted_offers(150, c, w);
    const auto op = weighted_offers(150, cp, w);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(op[i] - o[perm[i]]) < 1e-12);
  }
}

TEST_CASE("proportional split excludes a non-contributor") {
  check_vec(weighted_offers(120, std::vector<double>{0, 5, 5, 10}, 0.0), {0, 30, 30, 60});
}

TEST_CASE("mechanism specs") {
  CHECK(mechanism_id(WeightedSpec{1.0, 0.0}) == "equal");
  CHECK(mechanism_id(WeightedSpec{0.0, 0.0}) == "proportional");
  CHECK(mechanism_id(WeightedSpec{0.5, 0.0}) == "mixed");
  CHECK(mechanism_id(InterpolatingSpec{22.0, 0.0}) == "interpolating(k=22)");

  for (const MechanismSpec& spec :
       std::vector<MechanismSpec>{WeightedSpec{0.3, 0.1}, RandomDirichletSpec{2.0},
                                  InterpolatingSpec{3.0, 0.0},
                                  NeuralSpec{"x.ckpt", PlannerVariant::kFeedforward, 2.0}}) {
    CHECK(mechanism_id(mechanism_from_json(mechanism_to_json(spec))) == mechanism_id(spec));
  }
  auto invalid = [](const nlohmann::json& j) {
    try {
      validate(mechanism_from_json(j));
    } catch (const Error& e) {
      return e.code() == ErrorCode::kInvalidConfig;
    }
    return false;
  };
  CHECK(invalid({{"kind", "weighted"}, {"w", 1.5}}));
  CHECK(invalid({{"kind", "nonsense"}}));
  CHECK(invalid({{"kind", "interpolating"}, {"k", -1.0}}));
  CHECK(invalid({{"kind", "random"}, {"concentration", 0.0}}));
}

TEST_CASE("k sweep") {
  GameConfig c;
  std::vector<ScriptedPlayer> seats{ScriptedPlayer(Sustainer{0.4}), ScriptedPlayer(Sustainer{0.1}),
                                    ScriptedPlayer(FreeRider{}), ScriptedPlayer(Sustainer{0.2})};
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);

  const std::vector<double> single{1.0};
  const KSweepResult one = sweep_interpolation_k(single, players, c, 3, 1);
  CHECK(one.rows.size() == 1);
  CHECK(one.best_k == 1.0);

  const std::vector<double> ends{std::exp(-5.0), std::exp(5.0)};
  const KSweepResult r = sweep_interpolation_k(ends, players, c, 4, 2);
  REQUIRE(r.rows.size() == 2);
  CHECK(std::abs(r.rows[0].mean_surplus - r.rows[1].mean_surplus) > 1.0);

  const KSweepResult again = sweep_interpolation_k(ends, players, c, 4, 2);
  CHECK(again.rows[0].mean_surplus == r.rows[0].mean_surplus);
  CHECK(again.best_k == r.best_k);
}
