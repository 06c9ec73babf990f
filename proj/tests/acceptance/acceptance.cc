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

// Acceptance runner: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cpr/analysis.h"
#include "cpr/error.h"
#include "cpr/experiment.h"
#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/planner.h"
#include "cpr/players.h"
#include "gradcheck.h"
#include "toy_economy.h"

using namespace cpr;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double brute_gini(const std::vector<double>& x) {
  double num = 0, total = 0;
  for (double a : x) {
    total += a;
    for (double b : x) num += std::abs(a - b);
  }
  if (total == 0) return 0;
  return num / (2.0 * static_cast<double>(x.size()) * total);
}

PlannerNet random_planner(PlannerConfig config, uint64_t seed, double noise) {
  PlannerNet net(config, seed);
  Rng rng(derive_seed(seed, "noise"));
  for (auto& [name, value] : net.mutable_params()) {
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] += rng.uniform(-noise, noise);
  }
  return net;
}

// The toy closed form scales with the retained share, so it must not vanish.
PlannerNet planner_with_retained_share(double lo, double hi) {
  for (uint64_t seed = 0;; ++seed) {
    PlannerNet net = random_planner(PlannerConfig::M1(), seed, 0.2);
    nn::Matrix hidden;
    const std::vector<double> zeros(4, 0.0);
    const double retained = planner_forward(net, zeros, zeros, 200, 200, hidden)[4];
    if (retained >= lo && retained <= hi) return net;
  }
}

std::vector<EpisodeLog> scripted_games(const Archetype& archetype, int games, uint64_t seed) {
  std::vector<EpisodeLog> logs;
  Rng rng(seed);
  std::vector<ScriptedPlayer> seats(4, ScriptedPlayer(archetype));
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);
  GameConfig c;
  for (int g = 0; g < games; ++g) {
    WeightedMechanism m(WeightedSpec{rng.uniform(0, 1), rng.uniform(0, 0.4)});
    logs.push_back(run_episode(c, m, players, derive_seed(seed, static_cast<uint64_t>(g))));
  }
  return logs;
}

struct CloneRun {
  CloneEvaluation holdout;
  double cpu_seconds = 0;
};

CloneRun train_and_hold_out(const std::vector<EpisodeLog>& logs, uint64_t seed) {
  const size_t cut = logs.size() * 9 / 10;
  const std::vector<EpisodeLog> train(logs.begin(), logs.begin() + static_cast<long>(cut));
  const std::vector<EpisodeLog> held(logs.begin() + static_cast<long>(cut), logs.end());
  const SupervisedDataset train_set = build_dataset(train, 10);
  const SupervisedDataset held_set = build_dataset(held, 10);
  const CloneConfig config = CloneConfig::BC1();
  const std::clock_t start = std::clock();
  const CloneTrainResult r = train_clone(train_set, config, CloneTrainHyper::DeskScale(), seed);
  CloneRun out;
  out.cpu_seconds = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
  out.holdout = evaluate_clone(CloneModel(config, r.checkpoints.back().params), held_set);
  return out;
}

double condition_surplus(const json& manifest, const std::string& label) {
  for (const auto& c : manifest["summary"]["conditions"]) {
    if (c["label"] == label) return c["mean_surplus"].get<double>();
  }
  throw Error(ErrorCode::kMissingArtifact, "no condition " + label);
}

// Every stage on a small config.
json reduced_config(const std::string& out) {
  return {
      {"seed", 23},
      {"out", out},
      {"game", {{"max_rounds", 12}}},
      {"corpus", {{"games", 12}}},
      {"clone",
       {{"model", {{"encoder", {8}}, {"memory", 8}, {"projection", {8}}}},
        {"hyper", {{"batch", 8}, {"steps", 40}, {"checkpoint_every", 20}}},
        {"selection_episodes", 2},
        {"ensemble_size", 2}}},
      {"planner",
       {{"model", {{"width", 8}, {"node_memory", 8}}},
        {"hyper", {{"batch", 4}, {"steps", 6}, {"checkpoint_every", 3}}},
        {"selection_episodes", 2}}},
      {"evaluate", {{"games", 8}}},
      {"simulate", {{"games", 8}}},
      {"sweep_k", {{"episodes_per_k", 1}}},
      {"probe_pool", {{"coefficients", {0.5, 1.0, 2.0}}, {"episodes", 2}}},
      {"sweep_params",
       {{"pool_grid", {100, 200}},
        {"growth_grid", {1.4}},
        {"episodes", 2},
        {"lambdas", {0.0, 1.0}},
        {"lambda_steps", 3},
        {"lambda_eval_games", 4}}},
  };
}

using Stage = StageResult (*)(const ExperimentConfig&, const StageLog&);

std::vector<std::pair<std::string, std::string>> run_all_stages(const ExperimentConfig& c) {
  const std::vector<std::pair<std::string, Stage>> stages{
      {"simulate", run_simulate},       {"make-corpus", run_make_corpus}, {"train-bc", run_train_bc},
      {"train-planner", run_train_planner}, {"evaluate", run_evaluate},   {"sweep-k", run_sweep_k},
      {"probe-pool", run_probe_pool},   {"sweep-params", run_sweep_params}};
  std::vector<std::pair<std::string, std::string>> hashes;
  for (const auto& [name, stage] : stages) {
    hashes.emplace_back(name, stage(c, {}).manifest["artifact_hash"].get<std::string>());
  }
  return hashes;
}

// ---------------------------------------------------------------------------

Outcome pool_update() {
  GameConfig c;
  GameState s = initial_state(c);
  const std::vector<double> offers(4, 50.0), contribs{14, 0, 0, 28};
  s = apply_offers(c, s, offers, 0.0);
  const double pool = apply_contributions(c, s, contribs).record.pool_after;
  return {std::abs(pool - 58.80) <= 1e-9, "pool " + fmt(pool, 17)};
}

Outcome sustainability() {
  GameConfig c;
  c.max_rounds = 1000;
  WeightedMechanism equal(WeightedSpec{1.0, 0.0});
  std::vector<ScriptedPlayer> seats(4, ScriptedPlayer(Sustainer{1.0 - 1.0 / 1.4}));
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);
  const EpisodeLog log = run_episode(c, equal, players, 1);
  double drift = 0;
  for (const auto& r : log.rounds) drift = std::max(drift, std::abs(r.pool_after - c.initial_pool));
  const bool ok = log.rounds.size() == 1000 && drift < 1e-6;
  return {ok, std::to_string(log.rounds.size()) + " rounds, max |pool - 200| " + fmt(drift)};
}

Outcome gini_oracle() {
  Rng rng(5);
  double worst = 0;
  for (int v = 0; v < 10000; ++v) {
    std::vector<double> x(static_cast<size_t>(1 + rng.uniform_int(30)));
    for (auto& e : x) e = rng.uniform_int(4) == 0 ? 0.0 : rng.uniform(0, 100);
    const double expected = brute_gini(x);
    worst = std::max(worst, std::abs(gini(x) - expected) / std::max(1.0, expected));
  }
  const std::vector<double> surplus{36, 50, 50, 22};
  const double fig = gini(surplus);
  const bool ok = worst <= 1e-12 && std::abs(fig - 196.0 / 1264.0) <= 1e-15;
  return {ok, "max rel diff " + fmt(worst) + " over 1e4 vectors, (36,50,50,22) -> " + fmt(fig, 12)};
}

Outcome planner_structure() {
  double spread = 0, equivariance = 0;
  Rng rng(17);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    for (PlannerConfig cfg : {PlannerConfig::M1(), PlannerConfig::M1Feedforward()}) {
      const PlannerNet net = random_planner(cfg, seed, 0.5);
      nn::Matrix h0;
      const std::vector<double> zeros(4, 0.0);
      const auto f0 = planner_forward(net, zeros, zeros, 200, 200, h0);
      const auto [lo, hi] = std::minmax_element(f0.begin(), f0.begin() + 4);
      spread = std::max(spread, *hi - *lo);

      std::vector<int> perm{0, 1, 2, 3};
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      nn::Matrix h, hp;
      for (int t = 0; t < 5; ++t) {
        std::vector<double> offers(4), contribs(4), po(4), pc(4);
        for (int i = 0; i < 4; ++i) {
          offers[i] = rng.uniform(0, 50);
          contribs[i] = rng.uniform(0, 1) * offers[i];
        }
        for (int i = 0; i < 4; ++i) {
          po[i] = offers[perm[i]];
          pc[i] = contribs[perm[i]];
        }
        const double pool = rng.uniform(20, 200);
        const auto f = planner_forward(net, offers, contribs, pool, 200, h);
        const auto fp = planner_forward(net, po, pc, pool, 200, hp);
        for (int i = 0; i < 4; ++i) equivariance = std::max(equivariance, std::abs(fp[i] - f[perm[i]]));
        equivariance = std::max(equivariance, std::abs(fp[4] - f[4]));
      }
    }
  }
  return {spread < 1e-9 && equivariance < 1e-6,
          "opening spread " + fmt(spread) + ", equivariance " + fmt(equivariance) + " (100 seeds x 2 variants)"};
}

Outcome gradient_integrity() {
  auto checks = testing::op_gradient_suite();
  checks.push_back(testing::gru_bptt_check());
  double worst_fd = 0;
  std::string worst_name;
  bool fd_ok = true;
  for (const auto& c : checks) {
    if (c.check.rel_error > worst_fd) {
      worst_fd = c.check.rel_error;
      worst_name = c.name;
    }
    fd_ok = fd_ok && c.check.coordinates > 0 && c.check.rel_error < std::min(c.tolerance, 1e-4);
  }
  const PlannerNet net = planner_with_retained_share(0.15, 0.45);
  const testing::ToyPolicy fixed(10, 3, 3, 0.0);
  const testing::ToyPolicy responsive(10, 2, 7, 12.0);
  const double e1 = testing::toy_gradient(net, fixed, GradientEstimator::kSurrogatePathwise, 20000, 2000, 1).rel_error;
  const double e2 = testing::toy_gradient(net, fixed, GradientEstimator::kScoreFunction, 20000, 2000, 1).rel_error;
  const double e3 = testing::toy_gradient(net, responsive, GradientEstimator::kSurrogatePathwise, 20000, 2000, 2).rel_error;
  const double e4 = testing::toy_gradient(net, responsive, GradientEstimator::kScoreFunction, 100000, 2000, 3).rel_error;
  const double toy = std::max({e1, e2, e3, e4});
  return {fd_ok && toy < 0.05, std::to_string(checks.size()) + " finite-difference checks, worst " + fmt(worst_fd) +
                                   " (" + worst_name + "); toy estimator rel errors " + fmt(e1, 3) + ", " +
                                   fmt(e2, 3) + ", " + fmt(e3, 3) + ", " + fmt(e4, 3)};
}

Outcome bc_pipeline() {
  const CloneRun sustain = train_and_hold_out(scripted_games(Sustainer{0.25}, 60, 31), 7);
  const CloneRun uniform = train_and_hold_out(scripted_games(UniformRandom{}, 4000, 32), 8);
  const double ln10 = std::log(10.0);
  const double loss_gap = std::abs(uniform.holdout.loss - ln10) / ln10;
  const bool ok = sustain.holdout.accuracy > 0.9 && sustain.cpu_seconds < 300 && loss_gap < 0.01;
  return {ok, "sustainer held-out accuracy " + fmt(sustain.holdout.accuracy, 4) + " in " +
                  fmt(sustain.cpu_seconds, 4) + " s CPU; uniform held-out loss " + fmt(uniform.holdout.loss, 5) +
                  " (" + fmt(100 * loss_gap, 3) + "% from ln 10)"};
}

Outcome desk_pipeline(const fs::path& out, ExperimentConfig& config) {
  config = experiment_config_from_json({{"seed", 1}, {"out", out.string()}}, {Preset::kDeskScale, {}, {}});
  const auto start = std::chrono::steady_clock::now();
  run_make_corpus(config);
  run_train_bc(config);
  run_train_planner(config);
  const StageResult eval = run_evaluate(config);
  const double elapsed = seconds_since(start);
  return {elapsed < 600, "corpus " + std::to_string(config.corpus.games) + " games, BC " +
                             std::to_string(config.clone.hyper.steps) + " steps, planner " +
                             std::to_string(config.planner.hyper.steps) + " steps, evaluation " +
                             std::to_string(config.evaluate.games) + " games: " + fmt(elapsed, 4) + " s wall"};
}

Outcome end_to_end(ExperimentConfig config) {
  config.evaluate.games = 256;
  const StageResult eval = run_evaluate(config);
  const double equal = condition_surplus(eval.manifest, "equal");
  const double proportional = condition_surplus(eval.manifest, "proportional");
  const double planner = condition_surplus(eval.manifest, "planner");

  config.sweep_params.lambdas = {0.0, 0.5, 2.0, 8.0};
  config.sweep_params.lambda_steps = 300;
  config.sweep_params.lambda_eval_games = 64;
  config.sweep_params.pool_grid = {200.0};
  config.sweep_params.growth_grid = {1.4};
  config.sweep_params.episodes = 2;
  const StageResult sweep = run_sweep_params(config);
  std::vector<double> ginis;
  for (const auto& row : sweep.manifest["summary"]["lambda_sweep"]) ginis.push_back(row["mean_gini"].get<double>());
  bool monotone = ginis.size() == 4;
  for (size_t i = 1; i < ginis.size(); ++i) monotone = monotone && ginis[i] <= ginis[i - 1];

  std::string gini_text;
  for (double g : ginis) gini_text += (gini_text.empty() ? "" : ", ") + fmt(g, 3);
  const bool ok = planner > equal && planner > proportional && monotone;
  return {ok, "256 games: planner " + fmt(planner, 6) + ", equal " + fmt(equal, 6) + ", proportional " +
                  fmt(proportional, 6) + "; gini at lambda 0, 0.5, 2, 8: " + gini_text};
}

Outcome lagged_regression() {
  Rng rng(21);
  std::vector<EpisodeLog> synthetic;
  for (int g = 0; g < 60; ++g) {
    EpisodeLog log;
    log.config.max_rounds = 20;
    log.mechanism_id = "synthetic";
    log.player_ids.assign(4, "p");
    std::vector<std::vector<double>> contribs(20, std::vector<double>(4));
    for (auto& row : contribs) {
      for (auto& c : row) c = rng.uniform(0, 20);
    }
    for (int t = 0; t < 20; ++t) {
      RoundRecord r;
      r.t = t;
      r.pool_before = r.pool_after = 100;
      r.contributions = contribs[t];
      for (int i = 0; i < 4; ++i) {
        const double prev = t > 0 ? contribs[t - 1][i] : 0.0;
        r.offers.push_back(2.0 * prev + rng.normal(0, 1));
        r.surpluses.push_back(r.offers.back() - contribs[t][i]);
      }
      log.rounds.push_back(r);
    }
    synthetic.push_back(log);
  }
  const auto planted = lagged_offer_regression(synthetic);
  const size_t lag1 = static_cast<size_t>(std::find(planted.lags.begin(), planted.lags.end(), -1) - planted.lags.begin());
  const double weight = planted.median.at(lag1);

  GameConfig c;
  WeightedMechanism proportional(WeightedSpec{0.0, 0.0});
  std::vector<ScriptedPlayer> seats(4, ScriptedPlayer(ConditionalCooperator{1.0, 0.2, 1.0 / 1.4}));
  std::vector<PlayerModel*> players;
  for (auto& s : seats) players.push_back(&s);
  const auto logs = simulate_games(c, proportional, players, 64, 5);
  const auto baseline = lagged_offer_regression(logs);
  bool dominant = true;
  double runner_up = 0;
  for (size_t k = 0; k < baseline.lags.size(); ++k) {
    if (k == lag1) continue;
    runner_up = std::max(runner_up, std::abs(baseline.median[k]));
    dominant = dominant && std::abs(baseline.median[k]) < std::abs(baseline.median[lag1]);
  }
  return {std::abs(weight - 2.0) <= 0.1 && dominant,
          "synthetic lag -1 median " + fmt(weight, 5) + "; proportional baseline lag -1 median " +
              fmt(baseline.median[lag1], 4) + " vs largest other " + fmt(runner_up, 4)};
}

Outcome interpolating() {
  const double w200 = interpolation_weight(200, 22, 200);
  const double w190 = interpolation_weight(190, 22, 200);
  bool monotone = true;
  double prev = -1;
  for (int i = 0; i <= 400; ++i) {
    const double w = interpolation_weight(0.5 * i, 22, 200);
    monotone = monotone && w >= prev;
    prev = w;
  }
  const auto grid = default_k_grid();
  double spacing = 0;
  for (size_t i = 0; i < grid.size(); ++i) {
    spacing = std::max(spacing, std::abs(std::log(grid[i]) - (-5.0 + 0.1 * static_cast<double>(i))));
  }
  const bool ok = w200 == 1.0 && std::abs(w190 - 0.3235) <= 1e-4 && monotone && grid.size() == 101 &&
                  spacing < 1e-12;
  return {ok, "w(200) " + fmt(w200) + ", w(190) " + fmt(w190, 6) + ", grid " + std::to_string(grid.size()) +
                  " points, max log-spacing error " + fmt(spacing)};
}

Outcome determinism(const fs::path& work) {
  const auto first = run_all_stages(experiment_config_from_json(reduced_config((work / "det_a").string())));
  const auto second = run_all_stages(experiment_config_from_json(reduced_config((work / "det_b").string())));
  std::string mismatched;
  for (size_t i = 0; i < first.size(); ++i) {
    if (first[i].second != second[i].second) mismatched += " " + first[i].first;
  }
  return {mismatched.empty(), mismatched.empty()
                                  ? std::to_string(first.size()) + " stages rerun in a fresh directory, identical hashes"
                                  : "hash mismatch:" + mismatched};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance"};
  fs::path work = "acceptance_runs";
  std::vector<std::string> only;
  app.add_option("--work-dir", work, "scratch directory for pipeline runs");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  ExperimentConfig desk;
  bool desk_ready = false;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      // Timed first, on a cold start.
      {"desk-pipeline-time",
       [&] {
         const Outcome o = desk_pipeline(work / "desk", desk);
         desk_ready = true;
         return o;
       }},
      {"pool-update", pool_update},
      {"sustainability-fixed-point", sustainability},
      {"gini-oracle", gini_oracle},
      {"planner-structure", planner_structure},
      {"gradient-integrity", gradient_integrity},
      {"bc-pipeline", bc_pipeline},
      {"end-to-end-ordering",
       [&] {
         if (!desk_ready) desk_pipeline(work / "desk", desk);
         return end_to_end(desk);
       }},
      {"lagged-regression", lagged_regression},
      {"interpolating-math", interpolating},
      {"determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(seconds_since(start), 4)
              << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
