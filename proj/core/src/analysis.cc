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

#include "cpr/analysis.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <Eigen/QR>

#include "cpr/error.h"

namespace cpr {

double gini(std::span<const double> values) {
  for (double v : values) {
    if (v < 0.0 || std::isnan(v)) throw Error(ErrorCode::kNegativeValue, "gini of a negative value");
  }
  const size_t n = values.size();
  if (n == 0) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0, weighted = 0.0;
  for (size_t i = 0; i < n; ++i) {
    total += sorted[i];
    weighted += (2.0 * static_cast<double>(i + 1) - static_cast<double>(n) - 1.0) * sorted[i];
  }
  if (total == 0.0) return 0.0;
  return weighted / (static_cast<double>(n) * total);
}

std::vector<ExclusionEvent> exclusion_events(const EpisodeLog& log, double threshold) {
  std::vector<ExclusionEvent> events;
  const int p = log.config.num_players;
  const int trials = static_cast<int>(log.rounds.size());
  for (int i = 0; i < p; ++i) {
    for (int t = 1; t < trials; ++t) {
      const double offer = log.rounds[t].offers[i];
      if (!(offer < threshold && log.rounds[t - 1].offers[i] >= threshold)) continue;
      ExclusionEvent ev;
      ev.player = i;
      ev.start_trial = t + 1;
      ev.prior_reciprocation = log.rounds[t - 1].contributions[i];
      int end = t;
      while (end < trials && log.rounds[end].offers[i] < threshold) ++end;
      ev.duration = end - t;
      ev.permanent = end == trials;
      if (!ev.permanent) {
        ev.reinclusion_offer = log.rounds[end].offers[i];
        ev.pool_at_reinclusion = log.rounds[end].pool_before;
      }
      events.push_back(ev);
      t = end;
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const ExclusionEvent& a, const ExclusionEvent& b) {
    return a.start_trial < b.start_trial;
  });
  return events;
}

MetricsReport game_metrics(const EpisodeLog& log, double threshold) {
  if (log.schema_version != kEpisodeSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch,
                "episode schema " + log.schema_version + ", expected " + kEpisodeSchemaVersion);
  }
  MetricsReport report;
  report.player_surplus = log.player_surplus();
  report.total_surplus = log.total_surplus();
  report.gini_surplus = gini(report.player_surplus);
  double active_total = 0.0;
  for (const RoundRecord& r : log.rounds) {
    TrialMetrics tm;
    tm.trial = r.t + 1;
    tm.pool = r.pool_before;
    tm.offer_gini = gini(r.offers);
    tm.active = static_cast<int>(
        std::count_if(r.offers.begin(), r.offers.end(), [&](double e) { return e >= threshold; }));
    active_total += tm.active;
    if (!report.depletion_trial && r.pool_before < threshold) report.depletion_trial = tm.trial;
    report.trials.push_back(tm);
  }
  if (!log.rounds.empty()) {
    report.active_players_mean = active_total / static_cast<double>(log.rounds.size());
    report.sustained = log.rounds.back().pool_before >= threshold;
  }
  report.exclusions = exclusion_events(log, threshold);
  return report;
}

LaggedRegressionResult lagged_offer_regression(std::span<const EpisodeLog> logs) {
  LaggedRegressionResult result;
  for (int k = -kMaxLag; k <= kMaxLag; ++k) result.lags.push_back(k);
  const int num_lags = static_cast<int>(result.lags.size());
  int max_trials = 0;
  for (const auto& log : logs) max_trials = std::max(max_trials, static_cast<int>(log.rounds.size()));

  for (int t = kMaxLag; t + kMaxLag < max_trials; ++t) {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (const auto& log : logs) {
      if (t + kMaxLag >= static_cast<int>(log.rounds.size())) continue;
      for (int i = 0; i < log.config.num_players; ++i) {
        std::vector<double> row{1.0};
        for (int k = -kMaxLag; k <= kMaxLag; ++k) row.push_back(log.rounds[t + k].contributions[i]);
        rows.push_back(std::move(row));
        y.push_back(log.rounds[t].offers[i]);
      }
    }
    const int n = static_cast<int>(rows.size());
    const int cols = num_lags + 1;
    if (n <= cols) {
      result.skipped_trials.push_back(t + 1);
      continue;
    }
    Eigen::MatrixXd x(n, cols);
    Eigen::VectorXd target(n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < cols; ++c) x(r, c) = rows[r][c];
      target(r) = y[r];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < cols) {
      result.skipped_trials.push_back(t + 1);
      continue;
    }
    const Eigen::VectorXd beta = qr.solve(target);
    const double rss = (target - x * beta).squaredNorm();
    const double sigma2 = rss / static_cast<double>(n - cols);
    const Eigen::MatrixXd xtx_inv =
        (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(cols, cols));
    std::vector<double> coef, se;
    for (int c = 1; c < cols; ++c) {
      coef.push_back(beta(c));
      se.push_back(std::sqrt(std::max(0.0, sigma2 * xtx_inv(c, c))));
    }
    result.trials.push_back(t + 1);
    result.coefficients.push_back(std::move(coef));
    result.standard_errors.push_back(std::move(se));
  }
  if (result.trials.empty()) {
    throw Error(ErrorCode::kSingularDesign,
                "no trial with a full-rank lag design (" +
                    std::to_string(result.skipped_trials.size()) + " skipped)");
  }
  for (int k = 0; k < num_lags; ++k) {
    std::vector<double> column;
    for (const auto& c : result.coefficients) column.push_back(c[k]);
    std::sort(column.begin(), column.end());
    const size_t m = column.size();
    result.median.push_back(m % 2 == 1 ? column[m / 2] : 0.5 * (column[m / 2 - 1] + column[m / 2]));
  }
  return result;
}

ReciprocationProfile reciprocation_ratio_profile(std::span<const EpisodeLog> logs, double growth,
                                                 double threshold) {
  if (!(growth > 1.0)) throw Error(ErrorCode::kInvalidConfig, "reciprocation profile needs m > 1");
  ReciprocationProfile profile;
  profile.reference = 1.0 / growth;
  std::map<int, std::pair<double, int>> buckets;
  for (const auto& log : logs) {
    for (const auto& r : log.rounds) {
      double offered = 0.0, returned = 0.0;
      int active = 0;
      for (size_t i = 0; i < r.offers.size(); ++i) {
        if (r.offers[i] < threshold) continue;
        ++active;
        offered += r.offers[i];
        returned += r.contributions[i];
      }
      if (offered == 0.0) {
        ++profile.omitted_trials;
        continue;
      }
      auto& b = buckets[active];
      b.first += returned / offered;
      b.second += 1;
    }
  }
  for (const auto& [active, b] : buckets) {
    profile.buckets.push_back({active, b.first / b.second, b.second});
  }
  return profile;
}

ConditionSummary summarize(const std::string& label, std::span<const EpisodeLog> logs,
                           double threshold) {
  ConditionSummary s;
  s.label = label;
  s.games = static_cast<int>(logs.size());
  if (logs.empty()) return s;
  for (const auto& log : logs) {
    const MetricsReport m = game_metrics(log, threshold);
    s.mean_surplus += m.total_surplus;
    s.mean_gini += m.gini_surplus;
    double offer_gini = 0.0;
    for (const auto& t : m.trials) offer_gini += t.offer_gini;
    if (!m.trials.empty()) offer_gini /= static_cast<double>(m.trials.size());
    s.mean_offer_gini += offer_gini;
    s.mean_active += m.active_players_mean;
    s.sustained_fraction += m.sustained ? 1.0 : 0.0;
    s.mean_depletion_trial += m.depletion_trial ? *m.depletion_trial : static_cast<double>(log.rounds.size());
  }
  const double n = static_cast<double>(logs.size());
  s.mean_surplus /= n;
  s.mean_gini /= n;
  s.mean_offer_gini /= n;
  s.mean_active /= n;
  s.sustained_fraction /= n;
  s.mean_depletion_trial /= n;
  return s;
}

std::vector<EpisodeLog> simulate_games(const GameConfig& config, Mechanism& mechanism,
                                       std::span<PlayerModel* const> players, int games,
                                       uint64_t seed) {
  std::vector<EpisodeLog> logs;
  for (int g = 0; g < games; ++g) {
    logs.push_back(run_episode(config, mechanism, players, derive_seed(seed, static_cast<uint64_t>(g))));
  }
  return logs;
}

std::vector<double> default_pool_scaling_grid() { return {0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 6.0}; }

std::vector<PoolScalingRow> pool_scaling_probe(std::shared_ptr<const PlannerNet> planner,
                                               const Ensemble& ensemble, const GameConfig& game,
                                               std::span<const double> coefficients,
                                               int episodes, uint64_t seed) {
  Rng unused(0);
  const auto seats = ensemble_draw(ensemble, game.num_players, unused, DrawMode::kFixedSlots);
  std::vector<PoolScalingRow> rows;
  for (double coef : coefficients) {
    PlannerMechanism mechanism(planner, coef);
    auto owned = make_clone_players(ensemble, seats, HeadMode::kArgmaxBin);
    std::vector<PlayerModel*> table;
    for (auto& p : owned) table.push_back(p.get());
    const auto logs = simulate_games(game, mechanism, table, episodes, seed);
    rows.push_back({coef, summarize("", logs, game.exclusion_threshold).mean_offer_gini});
  }
  return rows;
}

std::vector<SweepCell> parameter_generalization_sweep(std::span<const MechanismSpec> mechanisms,
                                                      std::span<PlayerModel* const> players,
                                                      const GameConfig& base,
                                                      std::span<const double> pool_grid,
                                                      std::span<const double> growth_grid,
                                                      int episodes, uint64_t seed) {
  if (pool_grid.empty() || growth_grid.empty() || mechanisms.empty()) {
    throw Error(ErrorCode::kEmptyInput, "parameter sweep needs nonempty grids");
  }
  std::vector<SweepCell> cells;
  for (const auto& spec : mechanisms) {
    for (double pool : pool_grid) {
      for (double growth : growth_grid) {
        GameConfig config = base;
        config.initial_pool = pool;
        config.growth = growth;
        auto mechanism = make_mechanism(spec);
        const auto logs = simulate_games(config, *mechanism, players, episodes, seed);
        const auto s = summarize("", logs, config.exclusion_threshold);
        cells.push_back({mechanism->id(), pool, growth, s.mean_surplus, s.mean_gini, s.games});
      }
    }
  }
  return cells;
}

std::vector<LongUnrollRow> long_unroll(const GameConfig& base, Mechanism& mechanism,
                                       std::span<PlayerModel* const> players, int rounds,
                                       int games, uint64_t seed) {
  GameConfig config = base;
  config.termination = Termination::Fixed();
  config.max_rounds = rounds;
  std::vector<LongUnrollRow> rows;
  for (int g = 0; g < games; ++g) {
    const uint64_t s = derive_seed(seed, static_cast<uint64_t>(g));
    const EpisodeLog log = run_episode(config, mechanism, players, s);
    const MetricsReport m = game_metrics(log, config.exclusion_threshold);
    rows.push_back({s, m.depletion_trial, m.total_surplus, m.gini_surplus});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

void prepare(std::ostream& out) { out.precision(12); }

}  // namespace

void write_game_table(std::ostream& out, std::span<const EpisodeLog> logs, double threshold) {
  prepare(out);
  const int p = logs.empty() ? 0 : logs.front().config.num_players;
  out << "game,seed,mechanism,rounds,total_surplus,gini_surplus,active_players_mean,"
         "depletion_trial,sustained";
  for (int i = 0; i < p; ++i) out << ",surplus_p" << i;
  out << "\n";
  for (size_t g = 0; g < logs.size(); ++g) {
    const MetricsReport m = game_metrics(logs[g], threshold);
    out << g << "," << logs[g].seed << "," << logs[g].mechanism_id << "," << logs[g].rounds.size()
        << "," << m.total_surplus << "," << m.gini_surplus << "," << m.active_players_mean << ",";
    if (m.depletion_trial) out << *m.depletion_trial;
    out << "," << (m.sustained ? 1 : 0);
    for (double s : m.player_surplus) out << "," << s;
    out << "\n";
  }
}

void write_trial_table(std::ostream& out, std::span<const EpisodeLog> logs, double threshold) {
  prepare(out);
  out << "game,trial,pool,offer_gini,active\n";
  for (size_t g = 0; g < logs.size(); ++g) {
    for (const auto& t : game_metrics(logs[g], threshold).trials) {
      out << g << "," << t.trial << "," << t.pool << "," << t.offer_gini << "," << t.active << "\n";
    }
  }
}

void write_exclusion_table(std::ostream& out, std::span<const EpisodeLog> logs, double threshold) {
  prepare(out);
  out << "game,player,start_trial,duration,permanent,prior_reciprocation,reinclusion_offer,"
         "pool_at_reinclusion\n";
  for (size_t g = 0; g < logs.size(); ++g) {
    for (const auto& e : exclusion_events(logs[g], threshold)) {
      out << g << "," << e.player << "," << e.start_trial << "," << e.duration << ","
          << (e.permanent ? 1 : 0) << "," << e.prior_reciprocation << ",";
      if (e.reinclusion_offer) out << *e.reinclusion_offer;
      out << ",";
      if (e.pool_at_reinclusion) out << *e.pool_at_reinclusion;
      out << "\n";
    }
  }
}

void write_lagged_table(std::ostream& out, const LaggedRegressionResult& result) {
  prepare(out);
  out << "trial,lag,coefficient,standard_error\n";
  for (size_t t = 0; t < result.trials.size(); ++t) {
    for (size_t k = 0; k < result.lags.size(); ++k) {
      out << result.trials[t] << "," << result.lags[k] << "," << result.coefficients[t][k] << ","
          << result.standard_errors[t][k] << "\n";
    }
  }
  for (size_t k = 0; k < result.median.size(); ++k) {
    out << "median," << result.lags[k] << "," << result.median[k] << ",\n";
  }
}

void write_ratio_table(std::ostream& out, const ReciprocationProfile& profile) {
  prepare(out);
  out << "active_count,mean_ratio,trials,reference\n";
  for (const auto& b : profile.buckets) {
    out << b.active_count << "," << b.mean_ratio << "," << b.trials << "," << profile.reference
        << "\n";
  }
}

void write_summary_table(std::ostream& out, std::span<const ConditionSummary> rows) {
  prepare(out);
  out << "label,games,mean_surplus,mean_gini,mean_offer_gini,mean_active,sustained_fraction,"
         "mean_depletion_trial\n";
  for (const auto& r : rows) {
    out << r.label << "," << r.games << "," << r.mean_surplus << "," << r.mean_gini << ","
        << r.mean_offer_gini << "," << r.mean_active << "," << r.sustained_fraction << ","
        << r.mean_depletion_trial << "\n";
  }
}

}  // namespace cpr
