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

#include "cpr/mechanisms.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cpr/analysis.h"
#include "cpr/error.h"
#include "cpr/planner.h"

namespace cpr {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string format_number(double x) {
  std::ostringstream out;
  out.precision(10);
  out << x;
  return out.str();
}

Allocation with_retained(double pool, std::vector<double> offers) {
  const double total = std::accumulate(offers.begin(), offers.end(), 0.0);
  return {std::move(offers), std::max(0.0, pool - total)};
}

}  // namespace

void validate(const MechanismSpec& spec) {
  std::visit(Overloaded{
                 [](const WeightedSpec& s) {
                   if (!(s.w >= 0 && s.w <= 1) || !(s.retention >= 0 && s.retention <= 1)) {
                     throw Error(ErrorCode::kInvalidConfig,
                                 "weighted: w and retention must lie in [0, 1]");
                   }
                 },
                 [](const RandomDirichletSpec& s) {
                   if (!(s.concentration > 0)) {
                     throw Error(ErrorCode::kInvalidConfig, "random: concentration must be > 0");
                   }
                 },
                 [](const InterpolatingSpec& s) {
                   if (!(s.k > 0) || !(s.retention >= 0 && s.retention <= 1)) {
                     throw Error(ErrorCode::kInvalidConfig,
                                 "interpolating: k must be > 0, retention in [0, 1]");
                   }
                 },
                 [](const NeuralSpec& s) {
                   if (s.checkpoint.empty()) {
                     throw Error(ErrorCode::kInvalidConfig, "neural: checkpoint path required");
                   }
                 },
             },
             spec);
}

std::string mechanism_id(const MechanismSpec& spec) {
  return std::visit(
      Overloaded{
          [](const WeightedSpec& s) {
            std::string id;
            if (s.w == 1.0) id = "equal";
            else if (s.w == 0.0) id = "proportional";
            else if (s.w == 0.5) id = "mixed";
            else id = "weighted(w=" + format_number(s.w) + ")";
            if (s.retention > 0) id += "[retain=" + format_number(s.retention) + "]";
            return id;
          },
          [](const RandomDirichletSpec& s) {
            return std::string("random(alpha=") + format_number(s.concentration) + ")";
          },
          [](const InterpolatingSpec& s) {
            std::string id = "interpolating(k=" + format_number(s.k) + ")";
            if (s.retention > 0) id += "[retain=" + format_number(s.retention) + "]";
            return id;
          },
          [](const NeuralSpec& s) {
            std::string id = s.variant == PlannerVariant::kRecurrent ? "planner" : "planner-ff";
            if (s.pool_scale != 1.0) id += "[pool_scale=" + format_number(s.pool_scale) + "]";
            return id;
          },
      },
      spec);
}

MechanismSpec mechanism_from_json(const nlohmann::json& j) {
  MechanismSpec spec;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "weighted") {
      spec = WeightedSpec{j.at("w").get<double>(), j.value("retention", 0.0)};
    } else if (kind == "equal") {
      spec = WeightedSpec{1.0, j.value("retention", 0.0)};
    } else if (kind == "mixed") {
      spec = WeightedSpec{0.5, j.value("retention", 0.0)};
    } else if (kind == "proportional") {
      spec = WeightedSpec{0.0, j.value("retention", 0.0)};
    } else if (kind == "random") {
      spec = RandomDirichletSpec{j.value("concentration", 1.0)};
    } else if (kind == "interpolating") {
      spec = InterpolatingSpec{j.value("k", 22.0), j.value("retention", 0.0)};
    } else if (kind == "neural" || kind == "planner") {
      NeuralSpec n;
      n.checkpoint = j.at("checkpoint").get<std::string>();
      const std::string variant = j.value("variant", std::string("recurrent"));
      if (variant == "recurrent") n.variant = PlannerVariant::kRecurrent;
      else if (variant == "feedforward") n.variant = PlannerVariant::kFeedforward;
      else throw Error(ErrorCode::kInvalidConfig, "neural.variant: unknown value '" + variant + "'");
      n.pool_scale = j.value("pool_scale", 1.0);
      spec = n;
    } else {
      throw Error(ErrorCode::kInvalidConfig, "mechanism.kind: unknown value '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("mechanism: ") + e.what());
  }
  validate(spec);
  return spec;
}

nlohmann::ordered_json mechanism_to_json(const MechanismSpec& spec) {
  return std::visit(Overloaded{
                        [](const WeightedSpec& s) {
                          nlohmann::ordered_json j;
                          j["kind"] = "weighted";
                          j["w"] = s.w;
                          j["retention"] = s.retention;
                          return j;
                        },
                        [](const RandomDirichletSpec& s) {
                          nlohmann::ordered_json j;
                          j["kind"] = "random";
                          j["concentration"] = s.concentration;
                          return j;
                        },
                        [](const InterpolatingSpec& s) {
                          nlohmann::ordered_json j;
                          j["kind"] = "interpolating";
                          j["k"] = s.k;
                          j["retention"] = s.retention;
                          return j;
                        },
                        [](const NeuralSpec& s) {
                          nlohmann::ordered_json j;
                          j["kind"] = "neural";
                          j["checkpoint"] = s.checkpoint;
                          j["variant"] = s.variant == PlannerVariant::kRecurrent ? "recurrent"
                                                                                 : "feedforward";
                          j["pool_scale"] = s.pool_scale;
                          return j;
                        },
                    },
                    spec);
}

std::vector<double> equal_first_round(double pool, int num_players, double retention) {
  const double share = std::max(0.0, pool) * (1.0 - retention) / num_players;
  return std::vector<double>(static_cast<size_t>(num_players), share);
}

std::vector<double> weighted_offers(double pool, std::span<const double> prev_contribs, double w,
                                    double retention) {
  const double budget = std::max(0.0, pool) * (1.0 - retention);
  const double n = static_cast<double>(prev_contribs.size());
  const double total = std::accumulate(prev_contribs.begin(), prev_contribs.end(), 0.0);
  std::vector<double> offers(prev_contribs.size());
  for (size_t i = 0; i < offers.size(); ++i) {
    const double equal = w * budget / n;
    const double proportional = total > 0.0 ? (1.0 - w) * budget * (prev_contribs[i] / total) : 0.0;
    offers[i] = equal + proportional;
  }
  return offers;
}

double interpolation_weight(double pool, double k, double max_pool) {
  const double fill = std::clamp(pool / max_pool, 0.0, 1.0);
  return std::pow(fill, k);
}

std::vector<double> interpolating_offers(double pool, std::span<const double> prev_contribs,
                                         double k, double max_pool, double retention) {
  return weighted_offers(pool, prev_contribs, interpolation_weight(pool, k, max_pool), retention);
}

Allocation dirichlet_offers(double pool, int num_players, Rng& rng, double concentration) {
  std::vector<double> draws(static_cast<size_t>(num_players) + 1);
  double total = 0.0;
  for (double& d : draws) {
    d = concentration == 1.0 ? rng.exponential() : rng.gamma(concentration);
    total += d;
  }
  const double r = std::max(0.0, pool);
  Allocation alloc;
  alloc.offers.resize(static_cast<size_t>(num_players));
  for (int i = 0; i < num_players; ++i) alloc.offers[i] = r * draws[i] / total;
  alloc.retained = r * draws.back() / total;
  return alloc;
}

WeightedMechanism::WeightedMechanism(WeightedSpec spec) : spec_(spec) { validate(spec_); }

Allocation WeightedMechanism::allocate(const GameState& state, const GameConfig& config) {
  if (state.round == 0) {
    return with_retained(state.pool,
                         equal_first_round(state.pool, config.num_players, spec_.retention));
  }
  return with_retained(state.pool,
                       weighted_offers(state.pool, state.prev_contribs, spec_.w, spec_.retention));
}

InterpolatingMechanism::InterpolatingMechanism(InterpolatingSpec spec) : spec_(spec) {
  validate(spec_);
}

Allocation InterpolatingMechanism::allocate(const GameState& state, const GameConfig& config) {
  if (state.round == 0) {
    return with_retained(state.pool,
                         equal_first_round(state.pool, config.num_players, spec_.retention));
  }
  return with_retained(state.pool,
                       interpolating_offers(state.pool, state.prev_contribs, spec_.k,
                                            config.initial_pool, spec_.retention));
}

RandomMechanism::RandomMechanism(RandomDirichletSpec spec) : spec_(spec) { validate(spec_); }

void RandomMechanism::begin_episode(const GameConfig&, uint64_t seed) { rng_ = Rng(seed); }

Allocation RandomMechanism::allocate(const GameState& state, const GameConfig& config) {
  return dirichlet_offers(state.pool, config.num_players, rng_, spec_.concentration);
}

std::unique_ptr<Mechanism> make_mechanism(const MechanismSpec& spec) {
  validate(spec);
  return std::visit(
      Overloaded{
          [](const WeightedSpec& s) -> std::unique_ptr<Mechanism> {
            return std::make_unique<WeightedMechanism>(s);
          },
          [](const RandomDirichletSpec& s) -> std::unique_ptr<Mechanism> {
            return std::make_unique<RandomMechanism>(s);
          },
          [](const InterpolatingSpec& s) -> std::unique_ptr<Mechanism> {
            return std::make_unique<InterpolatingMechanism>(s);
          },
          [](const NeuralSpec& s) -> std::unique_ptr<Mechanism> {
            return load_planner_mechanism(s);
          },
      },
      spec);
}

std::vector<double> default_k_grid() {
  std::vector<double> grid;
  grid.reserve(101);
  for (int i = -50; i <= 50; ++i) grid.push_back(std::exp(i / 10.0));
  return grid;
}

KSweepResult sweep_interpolation_k(std::span<const double> grid,
                                   std::span<PlayerModel* const> players,
                                   const GameConfig& config, int episodes_per_k, uint64_t seed) {
  KSweepResult result;
  for (double k : grid) {
    InterpolatingMechanism mechanism(InterpolatingSpec{k, 0.0});
    KSweepRow row;
    row.k = k;
    for (int e = 0; e < episodes_per_k; ++e) {
      // Same episode seeds for every k, so rows are paired comparisons.
      const EpisodeLog log = run_episode(config, mechanism, players, derive_seed(seed, e));
      const auto per_player = log.player_surplus();
      row.mean_surplus += log.total_surplus();
      row.mean_gini += gini(per_player);
    }
    if (episodes_per_k > 0) {
      row.mean_surplus /= episodes_per_k;
      row.mean_gini /= episodes_per_k;
    }
    result.rows.push_back(row);
  }
  double best = -1.0;
  for (const auto& row : result.rows) {
    if (row.mean_surplus > best || (row.mean_surplus == best && row.k > result.best_k)) {
      best = row.mean_surplus;
      result.best_k = row.k;
    }
  }
  return result;
}

}  // namespace cpr
