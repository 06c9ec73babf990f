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

#include "cpr/planner.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpr/error.h"

namespace cpr {

using nn::Matrix;
using nn::Tape;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

PlannerConfig PlannerConfig::M1() { return {}; }

PlannerConfig PlannerConfig::M1Feedforward() {
  PlannerConfig c;
  c.preset = "m1ff";
  c.variant = PlannerVariant::kFeedforward;
  return c;
}

PlannerConfig PlannerConfig::M2() {
  PlannerConfig c;
  c.preset = "m2";
  c.node_memory = 64;
  return c;
}

void PlannerConfig::validate() const {
  if (width <= 0) throw Error(ErrorCode::kInvalidConfig, "planner.width must be > 0");
  if (variant == PlannerVariant::kRecurrent && node_memory <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "planner.node_memory must be > 0");
  }
  if (!(gini_weight >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "planner.gini_weight must be >= 0");
  }
}

nlohmann::ordered_json planner_config_to_json(const PlannerConfig& c) {
  return {{"preset", c.preset},
          {"width", c.width},
          {"node_memory", c.node_memory},
          {"variant", c.variant == PlannerVariant::kRecurrent ? "recurrent" : "feedforward"},
          {"estimator", c.estimator == GradientEstimator::kSurrogatePathwise ? "surrogate_pathwise"
                                                                              : "score_function"},
          {"gini_weight", c.gini_weight}};
}

PlannerConfig planner_config_from_json(const nlohmann::json& j) {
  PlannerConfig c;
  try {
    const std::string preset = j.value("preset", std::string("m1"));
    if (preset == "m1") c = PlannerConfig::M1();
    else if (preset == "m1ff") c = PlannerConfig::M1Feedforward();
    else if (preset == "m2") c = PlannerConfig::M2();
    else throw Error(ErrorCode::kInvalidConfig, "planner.preset: unknown value '" + preset + "'");
    c.width = j.value("width", c.width);
    c.node_memory = j.value("node_memory", c.node_memory);
    if (j.contains("variant")) {
      const std::string v = j.at("variant").get<std::string>();
      if (v == "recurrent") c.variant = PlannerVariant::kRecurrent;
      else if (v == "feedforward") c.variant = PlannerVariant::kFeedforward;
      else throw Error(ErrorCode::kInvalidConfig, "planner.variant: unknown value '" + v + "'");
    }
    if (j.contains("estimator")) {
      const std::string e = j.at("estimator").get<std::string>();
      if (e == "surrogate_pathwise") c.estimator = GradientEstimator::kSurrogatePathwise;
      else if (e == "score_function") c.estimator = GradientEstimator::kScoreFunction;
      else throw Error(ErrorCode::kInvalidConfig, "planner.estimator: unknown value '" + e + "'");
    }
    c.gini_weight = j.value("gini_weight", c.gini_weight);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("planner: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Network

PlannerNet::PlannerNet(PlannerConfig config, uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  build_blocks();
  Rng rng(init_seed);
  first_.init(params_, rng);
  second_.init(params_, rng);
}

PlannerNet::PlannerNet(PlannerConfig config, nn::ParamTree params) : config_(std::move(config)) {
  config_.validate();
  build_blocks();
  PlannerNet reference(config_, uint64_t{0});
  nn::validate_shapes(reference.params_, params);
  params_ = std::move(params);
}

void PlannerNet::build_blocks() {
  const int w = config_.width;
  first_ = {};
  first_.name = "gn1";
  first_.edge_in = 0;
  first_.node_in = 3;
  first_.global_in = 1;
  first_.edge_sizes = {w};
  first_.node_sizes = {w};
  first_.global_sizes = {w};

  second_ = {};
  second_.name = "gn2";
  second_.edge_in = w;
  second_.node_in = w;
  second_.global_in = w;
  second_.edge_sizes = {w};
  if (config_.variant == PlannerVariant::kRecurrent) {
    second_.node_memory = config_.node_memory;
    second_.node_sizes = {w, 1};
  } else {
    second_.node_sizes = {w, w, 1};
  }
  second_.global_sizes = {w, 1};
  second_.linear_node_head = true;
  second_.linear_global_head = true;
}

int PlannerNet::hidden_size() const {
  return config_.variant == PlannerVariant::kRecurrent ? config_.node_memory : 0;
}

PlannerNet::Step PlannerNet::step(Tape& tape, Var node_attrs, Var global_attrs, Var hidden,
                                  const nn::GraphIndex& index) const {
  if (node_attrs.rows() != index.num_nodes() || node_attrs.cols() != 3 ||
      global_attrs.rows() != index.num_graphs || global_attrs.cols() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "planner step: attribute shapes");
  }
  const nn::GraphBatch input{node_attrs, Var(), global_attrs};
  const auto h1 = first_(tape, input, index);
  const auto h2 = second_(tape, h1.graph, index, hidden);
  const Var node_logits = nn::reshape(h2.graph.nodes, index.num_graphs, index.nodes_per_graph);
  return {nn::concat_cols({node_logits, h2.graph.globals}), h2.node_hidden};
}

nn::Checkpoint PlannerNet::to_checkpoint(int64_t step) const {
  nn::Checkpoint ckpt;
  ckpt.descriptor = {{"kind", "planner"}, {"config", planner_config_to_json(config_)}};
  ckpt.step = step;
  ckpt.params = params_;
  return ckpt;
}

PlannerNet PlannerNet::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.descriptor.value("kind", std::string()) != "planner") {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint is not a planner checkpoint");
  }
  return PlannerNet(planner_config_from_json(ckpt.descriptor.at("config")), ckpt.params);
}

std::vector<double> planner_forward(const PlannerNet& net, std::span<const double> prev_offers,
                                    std::span<const double> prev_contribs, double pool,
                                    double max_pool, Matrix& hidden) {
  const int p = static_cast<int>(prev_offers.size());
  if (prev_contribs.size() != prev_offers.size() || p == 0) {
    throw Error(ErrorCode::kShapeMismatch, "planner_forward: history sizes");
  }
  Tape tape(false);
  tape.bind(net.params());
  Matrix nodes(p, 3);
  for (int i = 0; i < p; ++i) {
    nodes(i, 0) = prev_offers[i] / max_pool;
    nodes(i, 1) = prev_contribs[i] / max_pool;
    nodes(i, 2) = pool / max_pool;
  }
  const auto index = nn::GraphIndex::fully_connected(1, p);
  Var h;
  if (net.hidden_size() > 0) {
    if (hidden.rows() != p || hidden.cols() != net.hidden_size()) {
      hidden = Matrix::Zero(p, net.hidden_size());
    }
    h = tape.constant(hidden);
  }
  const auto out = net.step(tape, tape.constant(nodes), tape.constant(pool / max_pool), h, index);
  if (out.hidden.valid()) hidden = out.hidden.value();
  const Matrix fractions = nn::softmax_rows(out.logits).value();
  return {fractions.data(), fractions.data() + fractions.size()};
}

PlannerMechanism::PlannerMechanism(std::shared_ptr<const PlannerNet> net, double pool_scale,
                                   std::string label)
    : net_(std::move(net)), pool_scale_(pool_scale), label_(std::move(label)) {}

void PlannerMechanism::begin_episode(const GameConfig&, uint64_t) { hidden_.resize(0, 0); }

Allocation PlannerMechanism::allocate(const GameState& state, const GameConfig& config) {
  const auto fractions = planner_forward(*net_, state.prev_offers, state.prev_contribs,
                                         state.pool * pool_scale_, config.initial_pool, hidden_);
  Allocation alloc;
  const double pool = std::max(0.0, state.pool);
  for (int i = 0; i < config.num_players; ++i) alloc.offers.push_back(fractions[i] * pool);
  alloc.retained = fractions[config.num_players] * pool;
  return alloc;
}

std::unique_ptr<Mechanism> load_planner_mechanism(const NeuralSpec& spec) {
  auto net = std::make_shared<const PlannerNet>(
      PlannerNet::from_checkpoint(nn::load_checkpoint(spec.checkpoint)));
  if (net->config().variant != spec.variant) {
    throw Error(ErrorCode::kInvalidConfig, "checkpoint variant does not match mechanism spec");
  }
  return std::make_unique<PlannerMechanism>(net, spec.pool_scale, mechanism_id(spec));
}

// ---------------------------------------------------------------------------
// Differentiable unrolls

namespace {

constexpr double kGiniSmoothing = 1e-8;

std::string member_scope(size_t m) { return "policy" + std::to_string(m); }

// Smoothed Gini of each row of x (games x p).
Var smoothed_gini(Var x, int p) {
  Tape& tape = *x.tape();
  Var pairs = tape.constant(Matrix::Zero(x.rows(), 1));
  for (int i = 0; i < p; ++i) {
    for (int j = i + 1; j < p; ++j) {
      const Var d = nn::slice_cols(x, i, 1) - nn::slice_cols(x, j, 1);
      pairs = pairs + nn::scale(nn::sqrt(nn::add_scalar(nn::square(d), kGiniSmoothing)), 2.0);
    }
  }
  const Var total = nn::add_scalar(nn::scale(nn::sum_rows(x), 2.0 * p), kGiniSmoothing);
  return pairs * nn::exp(nn::neg(nn::log(total)));
}

}  // namespace

BatchRollout differentiable_rollout(Tape& tape, const PlannerNet& planner,
                                    std::span<const DifferentiablePolicy* const> policies,
                                    std::span<const std::string> policy_labels,
                                    std::span<const uint64_t> seeds,
                                    const RolloutOptions& options) {
  const GameConfig& game = options.game;
  game.validate();
  if (policies.empty()) throw Error(ErrorCode::kEmptyInput, "rollout needs at least one policy");
  const int p = game.num_players;
  const int batch = static_cast<int>(seeds.size());
  const int horizon = options.horizon < 0 ? game.max_rounds : options.horizon;
  const double r0 = game.initial_pool;
  const bool score_function = options.estimator == GradientEstimator::kScoreFunction;
  const HeadMode head = score_function ? HeadMode::kCategoricalBin : options.head;
  const int bins = policies[0]->bins();
  for (const auto* policy : policies) {
    if (policy->bins() != bins) throw Error(ErrorCode::kShapeMismatch, "policies disagree on bins");
  }

  if (!tape.has_param(planner.params().begin()->first)) tape.bind(planner.params());
  for (size_t m = 0; m < policies.size(); ++m) policies[m]->bind(tape, member_scope(m));

  // Seating: member index per (game, seat) and per-member row lists.
  Ensemble shape;
  for (size_t m = 0; m < policies.size(); ++m) shape.members.push_back(nullptr);
  std::vector<int> seat_member(static_cast<size_t>(batch * p));
  std::vector<Rng> head_rngs;
  BatchRollout out;
  for (int g = 0; g < batch; ++g) {
    Rng rng(seeds[g]);
    Rng draw_rng = rng.substream("draw");
    const auto draw = ensemble_draw(shape, p, draw_rng, options.draw);
    EpisodeLog log;
    log.config = game;
    log.mechanism_id = "planner";
    log.seed = seeds[g];
    for (int i = 0; i < p; ++i) {
      seat_member[g * p + i] = draw[i];
      log.player_ids.push_back(static_cast<size_t>(draw[i]) < policy_labels.size()
                                   ? policy_labels[draw[i]]
                                   : member_scope(draw[i]));
    }
    out.trajectories.push_back(std::move(log));
    head_rngs.push_back(rng.substream("head"));
  }
  std::vector<std::vector<int>> member_rows(policies.size());
  for (int r = 0; r < batch * p; ++r) member_rows[seat_member[r]].push_back(r);

  const auto index = nn::GraphIndex::fully_connected(batch, p);
  // Rotated seat order: row g*p+i, column k reads seat (i+k) % p of game g.
  std::vector<int> rotation(static_cast<size_t>(batch * p * p));
  for (int g = 0; g < batch; ++g) {
    for (int i = 0; i < p; ++i) {
      for (int k = 0; k < p; ++k) rotation[(g * p + i) * p + k] = g * p + (i + k) % p;
    }
  }

  Var pool = tape.constant(Matrix::Constant(batch, 1, r0));
  Var prev_offers = tape.constant(Matrix::Zero(batch, p));
  Var prev_contribs = tape.constant(Matrix::Zero(batch, p));
  Var planner_hidden;
  std::vector<Var> member_hidden;
  for (size_t m = 0; m < policies.size(); ++m) {
    member_hidden.push_back(tape.constant(
        Matrix::Zero(static_cast<Eigen::Index>(member_rows[m].size()), policies[m]->hidden_size())));
  }
  Var surplus = tape.constant(Matrix::Zero(batch, p));
  Var log_prob = tape.constant(Matrix::Zero(batch, 1));
  const double inv_r0 = 1.0 / r0;

  for (int t = 0; t < horizon; ++t) {
    // Mechanism move.
    const Var flat_offers_prev = nn::reshape(prev_offers, batch * p, 1);
    const Var flat_contribs_prev = nn::reshape(prev_contribs, batch * p, 1);
    const Var node_pool = nn::gather_rows(pool, index.node_graph);
    const Var node_attrs =
        nn::scale(nn::concat_cols({flat_offers_prev, flat_contribs_prev, node_pool}), inv_r0);
    const Var global_attrs = nn::scale(pool, options.pool_scale * inv_r0);
    const auto step = planner.step(tape, node_attrs, global_attrs, planner_hidden, index);
    planner_hidden = step.hidden;
    out.planner_logits.push_back(step.logits);
    const Var fractions = nn::softmax_rows(step.logits);
    const Var offers = nn::slice_cols(fractions, 0, p) * pool;
    const Var retained = nn::slice_cols(fractions, p, 1) * pool;

    // Player move.
    const Matrix& offer_values = offers.value();
    Matrix included(batch, p);
    for (int g = 0; g < batch; ++g) {
      for (int i = 0; i < p; ++i) {
        included(g, i) = offer_values(g, i) >= game.exclusion_threshold ? 1.0 : 0.0;
      }
    }
    const Var flat_offers = nn::reshape(offers, batch * p, 1);
    const Var obs = nn::scale(
        nn::concat_cols({nn::gather_elements(flat_offers, rotation, batch * p, p),
                         nn::gather_elements(flat_contribs_prev, rotation, batch * p, p),
                         node_pool}),
        inv_r0);
    Var fraction = tape.constant(Matrix::Zero(batch * p, 1));
    Matrix hard_fraction = Matrix::Zero(batch * p, 1);
    for (size_t m = 0; m < policies.size(); ++m) {
      const auto& rows = member_rows[m];
      if (rows.empty()) continue;
      const auto ps = policies[m]->step(tape, member_scope(m), nn::gather_rows(obs, rows),
                                        member_hidden[m]);
      member_hidden[m] = ps.hidden;
      const Matrix& logits = ps.logits.value();
      const auto n = static_cast<Eigen::Index>(rows.size());
      Matrix midpoints(n, bins);
      Matrix hard(n, 1);
      std::vector<int> chosen(rows.size());
      for (Eigen::Index k = 0; k < n; ++k) {
        const int r = rows[k];
        Rng& rng = head_rngs[r / p];
        const std::span<const double> row(logits.row(k).data(), static_cast<size_t>(bins));
        const int b = head_bin(row, rng, head);
        const double u = rng.uniform();
        chosen[k] = b;
        hard(k, 0) = (b + u) / bins;
        for (int j = 0; j < bins; ++j) midpoints(k, j) = (j + u) / bins;
      }
      Var f;
      if (score_function) {
        f = tape.constant(hard);
        const Var lp = nn::pick(nn::log_softmax_rows(ps.logits), chosen);
        std::vector<int> game_of_row;
        // Only seats above the threshold actually act.
        Matrix seat_mask(n, 1);
        for (Eigen::Index k = 0; k < n; ++k) {
          const int r = rows[k];
          seat_mask(k, 0) = included(r / p, r % p);
          game_of_row.push_back(r / p);
        }
        log_prob = log_prob + nn::scatter_rows(lp * tape.constant(seat_mask), game_of_row, batch);
      } else {
        const Var soft = nn::sum_rows(nn::softmax_rows(ps.logits) * tape.constant(midpoints));
        f = tape.constant(hard) + soft - nn::stop_gradient(soft);
      }
      for (Eigen::Index k = 0; k < n; ++k) hard_fraction(rows[k], 0) = hard(k, 0);
      fraction = fraction + nn::scatter_rows(f, rows, batch * p);
    }
    const Var contribs = nn::reshape(fraction, batch, p) * offers * tape.constant(included);
    const Var round_surplus = offers - contribs;
    surplus = surplus + round_surplus;
    const Var next_pool =
        pool - nn::sum_rows(offers) + nn::scale(nn::sum_rows(contribs), game.growth);
    const Var clamped = nn::minimum(next_pool, r0);

    const Matrix& pool_v = pool.value();
    const Matrix& contrib_v = contribs.value();
    const Matrix& retained_v = retained.value();
    const Matrix& surplus_v = round_surplus.value();
    for (int g = 0; g < batch; ++g) {
      RoundRecord rec;
      rec.t = t;
      rec.pool_before = pool_v(g, 0);
      rec.retained = retained_v(g, 0);
      for (int i = 0; i < p; ++i) {
        rec.offers.push_back(offer_values(g, i));
        rec.contributions.push_back(contrib_v(g, i));
        rec.surpluses.push_back(surplus_v(g, i));
      }
      rec.pool_after = std::max(0.0, clamped.value()(g, 0));
      out.trajectories[g].rounds.push_back(std::move(rec));
    }
    pool = clamped;
    prev_offers = offers;
    prev_contribs = contribs;
  }

  const Var totals = nn::sum_rows(surplus);
  const Var gini = smoothed_gini(surplus, p);
  Var per_game = totals;
  if (options.gini_weight > 0.0) {
    per_game = totals - nn::scale(nn::stop_gradient(totals) * gini, options.gini_weight);
  }
  out.surplus = totals;
  out.gini = gini;
  out.objective = nn::mean(per_game);
  if (score_function && batch > 0) {
    const Matrix& j = per_game.value();
    const double baseline = j.mean();
    const Var advantage = tape.constant(j.array() - baseline);
    out.loss = nn::neg(nn::add(out.objective, nn::mean(advantage * log_prob)));
  } else {
    out.loss = nn::neg(out.objective);
  }
  return out;
}

UnrollResult unroll_and_score(const PlannerNet& planner, const Ensemble& ensemble,
                              const RolloutOptions& options, uint64_t seed) {
  if (ensemble.empty()) throw Error(ErrorCode::kEmptyInput, "empty ensemble");
  Tape tape(false);
  std::vector<const DifferentiablePolicy*> policies;
  for (const auto& m : ensemble.members) policies.push_back(m.get());
  const uint64_t seeds[] = {seed};
  BatchRollout rollout =
      differentiable_rollout(tape, planner, policies, ensemble.labels, seeds, options);
  UnrollResult result;
  result.trajectory = std::move(rollout.trajectories.front());

  GameConfig replay = options.game;
  replay.integer_actions = false;
  replay.termination = Termination::Fixed();
  replay.max_rounds = std::max(1, static_cast<int>(result.trajectory.rounds.size()));
  GameState state = initial_state(replay);
  for (const RoundRecord& rec : result.trajectory.rounds) {
    state = apply_offers(replay, std::move(state), rec.offers, rec.retained);
    Resolution res = apply_contributions(replay, std::move(state), rec.contributions);
    if (std::abs(res.record.pool_after - rec.pool_after) > 1e-9) {
      throw Error(ErrorCode::kMalformedRecord,
                  "unrolled pool diverges from engine replay at t=" + std::to_string(rec.t));
    }
    state = std::move(res.state);
  }
  result.per_player_surplus = result.trajectory.player_surplus();
  result.total_surplus = result.trajectory.total_surplus();
  return result;
}

GradientEstimate estimate_gradient(const PlannerNet& planner, const Ensemble& ensemble,
                                   std::span<const uint64_t> seeds, const RolloutOptions& options) {
  if (ensemble.empty()) throw Error(ErrorCode::kEmptyInput, "empty ensemble");
  Tape tape;
  tape.bind(planner.params());
  std::vector<const DifferentiablePolicy*> policies;
  for (const auto& m : ensemble.members) policies.push_back(m.get());
  const BatchRollout rollout =
      differentiable_rollout(tape, planner, policies, ensemble.labels, seeds, options);
  tape.backward(rollout.loss);
  GradientEstimate est;
  for (const auto& [name, value] : planner.params()) {
    est.grads.add(name, -tape.grad(tape.param(name)));
  }
  est.objective = rollout.objective.scalar();
  est.mean_surplus = rollout.surplus.value().mean();
  est.mean_gini = rollout.gini.value().mean();
  return est;
}

// ---------------------------------------------------------------------------
// Training

PlannerTrainHyper PlannerTrainHyper::PaperM1() {
  PlannerTrainHyper h;
  h.batch = 256;
  h.steps = 500000;
  h.schedule = {1e-3, 1e-5, 0.05, 1000};
  h.checkpoint_every = 50000;
  return h;
}

PlannerTrainHyper PlannerTrainHyper::PaperM2() {
  PlannerTrainHyper h;
  h.batch = 1024;
  h.steps = 800000;
  h.schedule = nn::LrSchedule::Constant(1e-5);
  h.checkpoint_every = 50000;
  return h;
}

PlannerTrainHyper PlannerTrainHyper::DeskScale() {
  PlannerTrainHyper h;
  h.batch = 32;
  h.steps = 1000;
  h.schedule = {1e-3, 1e-5, 0.05, 1000};
  h.checkpoint_every = 250;
  return h;
}

nlohmann::ordered_json metrics_to_json(const TrainingMetrics& m) {
  return {{"record", "planner_metrics"}, {"step", m.step},       {"lr", m.lr},
          {"objective", m.objective},    {"surplus", m.surplus}, {"gini", m.gini}};
}

PlannerTrainResult train_planner(const PlannerConfig& config, const Ensemble& ensemble,
                                 const GameConfig& game, const PlannerTrainHyper& hyper,
                                 uint64_t seed,
                                 const std::function<void(const TrainingMetrics&)>& on_metrics) {
  if (ensemble.empty()) throw Error(ErrorCode::kEmptyInput, "train_planner: empty ensemble");
  if (hyper.batch <= 0 || hyper.steps < 0 || hyper.checkpoint_every <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "train_planner: batch, steps and checkpoint_every");
  }
  PlannerNet net(config, derive_seed(seed, "init"));
  nn::OptimizerState opt = nn::OptimizerState::For(net.params(), hyper.schedule);
  RolloutOptions options;
  options.game = game;
  options.game.termination = Termination::Fixed();
  options.estimator = config.estimator;
  options.head = hyper.head;
  options.gini_weight = config.gini_weight;
  options.draw = DrawMode::kWithReplacement;
  options.horizon = hyper.horizon;

  PlannerTrainResult result;
  result.checkpoints.push_back({0, net.params()});
  const uint64_t stream = derive_seed(seed, "episodes");
  std::vector<uint64_t> seeds(static_cast<size_t>(hyper.batch));
  for (int step = 1; step <= hyper.steps; ++step) {
    for (int b = 0; b < hyper.batch; ++b) {
      seeds[b] = derive_seed(stream, static_cast<uint64_t>(step - 1) * hyper.batch + b);
    }
    GradientEstimate est = estimate_gradient(net, ensemble, seeds, options);
    if (!std::isfinite(est.objective)) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  "planner objective is not finite at step " + std::to_string(step));
    }
    for (auto& [_, g] : est.grads) g = -g;
    if (hyper.clip_norm > 0) nn::clip_by_global_norm(est.grads, hyper.clip_norm);
    TrainingMetrics metrics{step, opt.schedule.at(opt.step), est.objective, est.mean_surplus,
                            est.mean_gini};
    nn::adam_step(opt, net.mutable_params(), est.grads);
    result.metrics.push_back(metrics);
    if (on_metrics) on_metrics(metrics);
    if (step % hyper.checkpoint_every == 0 || step == hyper.steps) {
      result.checkpoints.push_back({step, net.params()});
    }
  }
  return result;
}

PlannerSelection select_planner_checkpoint(std::span<const PlannerCheckpoint> checkpoints,
                                           const PlannerConfig& config, const Ensemble& ensemble,
                                           const GameConfig& game, int episodes, uint64_t seed) {
  if (checkpoints.empty()) throw Error(ErrorCode::kEmptyInput, "no planner checkpoints");
  if (ensemble.empty()) throw Error(ErrorCode::kEmptyInput, "empty ensemble");
  PlannerSelection selection;
  Rng unused(0);
  const auto seats = ensemble_draw(ensemble, game.num_players, unused, DrawMode::kFixedSlots);
  double best = -std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < checkpoints.size(); ++c) {
    auto net = std::make_shared<const PlannerNet>(config, checkpoints[c].params);
    PlannerMechanism mechanism(net);
    auto owned = make_clone_players(ensemble, seats, HeadMode::kArgmaxBin);
    std::vector<PlayerModel*> table;
    for (auto& pl : owned) table.push_back(pl.get());
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
      total += run_episode(game, mechanism, table, derive_seed(seed, e)).total_surplus();
    }
    const double score = episodes > 0 ? total / episodes : 0.0;
    selection.scores.push_back(score);
    if (score >= best) {
      best = score;
      selection.index = c;
    }
  }
  return selection;
}

}  // namespace cpr
