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

#include "cpr/players.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cpr/error.h"
#include "cpr/mechanisms.h"

namespace cpr {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string fmt(double x) {
  std::ostringstream out;
  out.precision(6);
  out << x;
  return out.str();
}

double others_mean_ratio(const SeatView& view, bool* found) {
  const double threshold = view.config->exclusion_threshold;
  double total = 0.0;
  int n = 0;
  for (size_t j = 0; j < view.prev_offers.size(); ++j) {
    if (static_cast<int>(j) == view.seat || view.prev_offers[j] < threshold) continue;
    total += view.prev_contribs[j] / view.prev_offers[j];
    ++n;
  }
  *found = n > 0;
  return n > 0 ? total / n : 0.0;
}

double group_ratio(const SeatView& view, bool* found) {
  const double threshold = view.config->exclusion_threshold;
  double offered = 0.0, returned = 0.0;
  for (size_t j = 0; j < view.prev_offers.size(); ++j) {
    if (view.prev_offers[j] < threshold) continue;
    offered += view.prev_offers[j];
    returned += view.prev_contribs[j];
  }
  *found = offered > 0.0;
  return offered > 0.0 ? returned / offered : 0.0;
}

double offer_of(const SeatView& view) { return view.offers[view.seat]; }

std::string strip_prefix(const std::string& name, const std::string& prefix) {
  return name.substr(prefix.size() + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scripted archetypes

std::string archetype_id(const Archetype& a) {
  return std::visit(
      Overloaded{
          [](const FreeRider&) { return std::string("free_rider"); },
          [](const Sustainer& s) { return "sustainer(keep=" + fmt(s.keep_frac) + ")"; },
          [](const ConditionalCooperator& c) {
            return "conditional_cooperator(slope=" + fmt(c.slope) + ",noise=" + fmt(c.noise_sd) +
                   ")";
          },
          [](const TitForTat& t) {
            return "tit_for_tat(memory=" + std::to_string(t.memory_rounds) + ")";
          },
          [](const UniformRandom&) { return std::string("uniform_random"); },
      },
      a);
}

Archetype archetype_from_json(const nlohmann::json& j) {
  Archetype a;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "free_rider") {
      a = FreeRider{};
    } else if (kind == "sustainer") {
      a = Sustainer{j.value("keep_frac", 0.0)};
    } else if (kind == "conditional_cooperator") {
      ConditionalCooperator c;
      c.slope = j.value("slope", c.slope);
      c.noise_sd = j.value("noise_sd", c.noise_sd);
      c.opening_ratio = j.value("opening_ratio", c.opening_ratio);
      a = c;
    } else if (kind == "tit_for_tat") {
      TitForTat t;
      t.memory_rounds = j.value("memory_rounds", t.memory_rounds);
      t.opening_ratio = j.value("opening_ratio", t.opening_ratio);
      a = t;
    } else if (kind == "uniform_random") {
      a = UniformRandom{};
    } else {
      throw Error(ErrorCode::kInvalidConfig, "archetype.kind: unknown value '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("archetype: ") + e.what());
  }
  const bool ok = std::visit(
      Overloaded{
          [](const Sustainer& s) { return s.keep_frac >= 0 && s.keep_frac <= 1; },
          [](const ConditionalCooperator& c) {
            return c.noise_sd >= 0 && c.opening_ratio >= 0 && c.opening_ratio <= 1;
          },
          [](const TitForTat& t) {
            return t.memory_rounds >= 1 && t.opening_ratio >= 0 && t.opening_ratio <= 1;
          },
          [](const auto&) { return true; },
      },
      a);
  if (!ok) throw Error(ErrorCode::kInvalidConfig, "archetype parameters out of range");
  return a;
}

nlohmann::ordered_json archetype_to_json(const Archetype& a) {
  return std::visit(
      Overloaded{
          [](const FreeRider&) { return nlohmann::ordered_json{{"kind", "free_rider"}}; },
          [](const Sustainer& s) {
            return nlohmann::ordered_json{{"kind", "sustainer"}, {"keep_frac", s.keep_frac}};
          },
          [](const ConditionalCooperator& c) {
            return nlohmann::ordered_json{{"kind", "conditional_cooperator"},
                                          {"slope", c.slope},
                                          {"noise_sd", c.noise_sd},
                                          {"opening_ratio", c.opening_ratio}};
          },
          [](const TitForTat& t) {
            return nlohmann::ordered_json{{"kind", "tit_for_tat"},
                                          {"memory_rounds", t.memory_rounds},
                                          {"opening_ratio", t.opening_ratio}};
          },
          [](const UniformRandom&) { return nlohmann::ordered_json{{"kind", "uniform_random"}}; },
      },
      a);
}

double scripted_act(const Archetype& archetype, const SeatView& view, Rng& rng) {
  const double offer = offer_of(view);
  const double c = std::visit(
      Overloaded{
          [](const FreeRider&) { return 0.0; },
          [&](const Sustainer& s) { return (1.0 - s.keep_frac) * offer; },
          [&](const ConditionalCooperator& cc) {
            bool found = false;
            const double mean = others_mean_ratio(view, &found);
            double ratio = view.round > 0 && found ? cc.slope * mean : cc.opening_ratio;
            if (cc.noise_sd > 0) ratio += rng.normal(0.0, cc.noise_sd);
            return std::clamp(ratio, 0.0, 1.0) * offer;
          },
          [&](const TitForTat& t) {
            bool found = false;
            const double ratio = group_ratio(view, &found);
            return (view.round > 0 && found ? std::clamp(ratio, 0.0, 1.0) : t.opening_ratio) *
                   offer;
          },
          [&](const UniformRandom&) { return rng.uniform() * offer; },
      },
      archetype);
  return std::clamp(c, 0.0, std::max(0.0, offer));
}

void ScriptedPlayer::begin_episode(uint64_t seed) {
  rng_ = Rng(seed);
  group_ratios_.clear();
}

double ScriptedPlayer::respond(const SeatView& view) {
  const auto* tft = std::get_if<TitForTat>(&archetype_);
  if (tft == nullptr || tft->memory_rounds <= 1) return scripted_act(archetype_, view, rng_);
  bool found = false;
  const double ratio = group_ratio(view, &found);
  if (view.round > 0 && found) {
    group_ratios_.push_back(std::clamp(ratio, 0.0, 1.0));
    while (static_cast<int>(group_ratios_.size()) > tft->memory_rounds) group_ratios_.pop_front();
  }
  const double offer = std::max(0.0, offer_of(view));
  if (group_ratios_.empty()) return tft->opening_ratio * offer;
  const double mean = std::accumulate(group_ratios_.begin(), group_ratios_.end(), 0.0) /
                      static_cast<double>(group_ratios_.size());
  return mean * offer;
}

// ---------------------------------------------------------------------------
// Observations

int observation_size(int num_players) { return 2 * num_players + 1; }

std::vector<double> player_observation(const SeatView& view) {
  const int p = static_cast<int>(view.offers.size());
  const double r0 = view.config->initial_pool;
  std::vector<double> obs(static_cast<size_t>(observation_size(p)));
  for (int k = 0; k < p; ++k) {
    const int j = (view.seat + k) % p;
    obs[k] = view.offers[j] / r0;
    obs[p + k] = view.prev_contribs.empty() ? 0.0 : view.prev_contribs[j] / r0;
  }
  obs[2 * p] = view.pool / r0;
  return obs;
}

// ---------------------------------------------------------------------------
// Clone configuration and network

CloneConfig CloneConfig::BC1() { return {}; }

CloneConfig CloneConfig::BC2() {
  CloneConfig c;
  c.preset = "bc2";
  c.encoder = {128, 256, 512};
  c.memory = 512;
  c.projection = {512, 256, 128};
  return c;
}

void CloneConfig::validate() const {
  if (bins < 2) throw Error(ErrorCode::kInvalidConfig, "clone.bins must be >= 2");
  if (memory <= 0) throw Error(ErrorCode::kInvalidConfig, "clone.memory must be > 0");
  if (num_players < 2) throw Error(ErrorCode::kInvalidConfig, "clone.num_players must be >= 2");
  for (int s : encoder) {
    if (s <= 0) throw Error(ErrorCode::kInvalidConfig, "clone.encoder sizes must be > 0");
  }
  for (int s : projection) {
    if (s <= 0) throw Error(ErrorCode::kInvalidConfig, "clone.projection sizes must be > 0");
  }
}

nlohmann::ordered_json clone_config_to_json(const CloneConfig& c) {
  return {{"preset", c.preset},       {"encoder", c.encoder}, {"memory", c.memory},
          {"projection", c.projection}, {"bins", c.bins},     {"num_players", c.num_players}};
}

CloneConfig clone_config_from_json(const nlohmann::json& j) {
  CloneConfig c;
  try {
    const std::string preset = j.value("preset", std::string("bc1"));
    if (preset == "bc1") c = CloneConfig::BC1();
    else if (preset == "bc2") c = CloneConfig::BC2();
    else throw Error(ErrorCode::kInvalidConfig, "clone.preset: unknown value '" + preset + "'");
    c.encoder = j.value("encoder", c.encoder);
    c.memory = j.value("memory", c.memory);
    c.projection = j.value("projection", c.projection);
    c.bins = j.value("bins", c.bins);
    c.num_players = j.value("num_players", c.num_players);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("clone: ") + e.what());
  }
  c.validate();
  return c;
}

CloneModel::CloneModel(CloneConfig config, uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  build_layers();
  Rng rng(init_seed);
  for (const auto& d : encoder_) d.init(params_, rng);
  memory_.init(params_, rng);
  for (const auto& d : projection_) d.init(params_, rng);
  output_.init(params_, rng);
}

CloneModel::CloneModel(CloneConfig config, nn::ParamTree params) : config_(std::move(config)) {
  config_.validate();
  build_layers();
  CloneModel reference(config_, uint64_t{0});
  nn::validate_shapes(reference.params_, params);
  params_ = std::move(params);
}

void CloneModel::build_layers() {
  encoder_.clear();
  projection_.clear();
  int width = config_.input_size();
  for (size_t i = 0; i < config_.encoder.size(); ++i) {
    encoder_.push_back({"enc" + std::to_string(i), width, config_.encoder[i], nn::Activation::kTanh});
    width = config_.encoder[i];
  }
  memory_ = {"gru", width, config_.memory};
  width = config_.memory;
  for (size_t i = 0; i < config_.projection.size(); ++i) {
    projection_.push_back(
        {"proj" + std::to_string(i), width, config_.projection[i], nn::Activation::kTanh});
    width = config_.projection[i];
  }
  output_ = {"out", width, config_.bins, nn::Activation::kIdentity};
}

void CloneModel::bind(nn::Tape& tape, const std::string& scope) const {
  nn::ParamTree prefixed;
  for (const auto& [name, m] : params_) prefixed.add(scope + "/" + name, m);
  tape.bind(prefixed);
}

DifferentiablePolicy::Step CloneModel::step(nn::Tape& tape, const std::string& scope, nn::Var obs,
                                            nn::Var hidden) const {
  if (obs.cols() != config_.input_size() || hidden.cols() != config_.memory ||
      obs.rows() != hidden.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "clone step: observation or hidden shape");
  }
  auto prefixed = [&scope](nn::Dense d) {
    d.name = scope + "/" + d.name;
    return d;
  };
  nn::Var x = obs;
  for (const auto& d : encoder_) x = prefixed(d)(tape, x);
  nn::GruCell gru = memory_;
  gru.name = scope + "/" + gru.name;
  const nn::Var h = gru(tape, x, hidden);
  x = h;
  for (const auto& d : projection_) x = prefixed(d)(tape, x);
  return {prefixed(output_)(tape, x), h};
}

nn::Matrix CloneModel::infer(const nn::Matrix& obs, nn::Matrix& hidden) const {
  if (obs.cols() != config_.input_size() || hidden.cols() != config_.memory ||
      obs.rows() != hidden.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "clone infer: observation or hidden shape");
  }
  auto dense = [this](const nn::Dense& d, const nn::Matrix& x) -> nn::Matrix {
    nn::Matrix y = x * params_.at(d.name + "/w");
    y.rowwise() += params_.at(d.name + "/b").row(0);
    if (d.activation == nn::Activation::kTanh) return y.array().tanh();
    if (d.activation == nn::Activation::kRelu) return y.cwiseMax(0.0);
    return y;
  };
  nn::Matrix x = obs;
  for (const auto& d : encoder_) x = dense(d, x);
  const int hs = config_.memory;
  nn::Matrix xw = x * params_.at("gru/w");
  xw.rowwise() += params_.at("gru/b").row(0);
  const nn::Matrix hu = hidden * params_.at("gru/u_zr");
  const nn::Matrix z =
      (1.0 + (-(xw.leftCols(hs) + hu.leftCols(hs))).array().exp()).inverse().matrix();
  const nn::Matrix r =
      (1.0 + (-(xw.middleCols(hs, hs) + hu.rightCols(hs))).array().exp()).inverse().matrix();
  const nn::Matrix rh = r.cwiseProduct(hidden);
  const nn::Matrix n = (xw.rightCols(hs) + rh * params_.at("gru/u_n")).array().tanh().matrix();
  hidden = n + z.cwiseProduct(hidden - n);
  x = hidden;
  for (const auto& d : projection_) x = dense(d, x);
  return dense(output_, x);
}

nn::Checkpoint CloneModel::to_checkpoint(int64_t step) const {
  nn::Checkpoint ckpt;
  ckpt.descriptor = {{"kind", "clone"}, {"config", clone_config_to_json(config_)}};
  ckpt.step = step;
  ckpt.params = params_;
  return ckpt;
}

CloneModel CloneModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.descriptor.value("kind", std::string()) != "clone") {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint is not a clone checkpoint");
  }
  return CloneModel(clone_config_from_json(ckpt.descriptor.at("config")), ckpt.params);
}

// ---------------------------------------------------------------------------
// Categorical-uniform head

int head_bin(std::span<const double> logits, Rng& rng, HeadMode mode) {
  const auto best = std::max_element(logits.begin(), logits.end());
  if (mode == HeadMode::kArgmaxBin) return static_cast<int>(best - logits.begin());
  std::vector<double> weights(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) weights[i] = std::exp(logits[i] - *best);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

double head_sample(std::span<const double> logits, double offer, Rng& rng, HeadMode mode,
                   double exclusion_threshold) {
  if (offer < exclusion_threshold || offer <= 0.0) return 0.0;
  const int b = head_bin(logits, rng, mode);
  const double n = static_cast<double>(logits.size());
  const double fraction = (b + rng.uniform()) / n;
  return std::clamp(fraction * offer, 0.0, offer);
}

ClonePlayer::ClonePlayer(std::shared_ptr<const CloneModel> model, HeadMode mode, std::string label)
    : model_(std::move(model)), mode_(mode), label_(std::move(label)) {
  if (label_.empty()) label_ = "clone";
}

void ClonePlayer::begin_episode(uint64_t seed) {
  rng_ = Rng(seed);
  hidden_ = nn::Matrix::Zero(1, model_->hidden_size());
}

double ClonePlayer::respond(const SeatView& view) {
  const std::vector<double> obs = player_observation(view);
  const nn::Matrix x = Eigen::Map<const nn::Matrix>(obs.data(), 1, static_cast<Eigen::Index>(obs.size()));
  const nn::Matrix logits = model_->infer(x, hidden_);
  return head_sample(std::span<const double>(logits.data(), static_cast<size_t>(logits.size())),
                     offer_of(view), rng_, mode_, view.config->exclusion_threshold);
}

// ---------------------------------------------------------------------------
// Datasets

int target_bin(double contribution, double offer, int bins) {
  if (!(offer > 0.0)) return 0;
  const int b = static_cast<int>(std::floor(bins * contribution / offer));
  return std::clamp(b, 0, bins - 1);
}

size_t SupervisedDataset::num_records() const {
  size_t n = 0;
  for (const auto& s : sequences) n += s.target_bins.size();
  return n;
}

SupervisedDataset build_dataset(std::span<const EpisodeLog> logs, int bins,
                                const std::function<bool(const std::string&)>& seat_filter) {
  SupervisedDataset ds;
  ds.bins = bins;
  bool first = true;
  for (const EpisodeLog& log : logs) {
    if (log.schema_version != kEpisodeSchemaVersion) {
      throw Error(ErrorCode::kSchemaVersionMismatch,
                  "episode schema " + log.schema_version + ", expected " + kEpisodeSchemaVersion);
    }
    const int p = log.config.num_players;
    if (first) {
      ds.observation_size = observation_size(p);
      first = false;
    } else if (ds.observation_size != observation_size(p)) {
      throw Error(ErrorCode::kShapeMismatch, "episodes with different player counts");
    }
    for (int seat = 0; seat < p; ++seat) {
      const std::string id = seat < static_cast<int>(log.player_ids.size()) ? log.player_ids[seat]
                                                                             : std::string();
      if (seat_filter && !seat_filter(id)) continue;
      SupervisedSequence seq;
      seq.player_id = id;
      std::vector<double> prev_contribs(static_cast<size_t>(p), 0.0);
      for (const RoundRecord& r : log.rounds) {
        SeatView view{seat, r.t, r.pool_before, r.offers, {}, prev_contribs, &log.config};
        seq.observations.push_back(player_observation(view));
        const double e = r.offers[seat];
        const bool included = e >= log.config.exclusion_threshold;
        seq.target_bins.push_back(included ? target_bin(r.contributions[seat], e, bins) : 0);
        seq.mask.push_back(included ? 1.0 : 0.0);
        seq.offers.push_back(e);
        prev_contribs = r.contributions;
      }
      ds.sequences.push_back(std::move(seq));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training

CloneTrainHyper CloneTrainHyper::PaperBC1() {
  CloneTrainHyper h;
  h.batch = 256;
  h.steps = 700000;
  h.schedule = {5e-4, 5e-6, 0.05, 1000};
  h.checkpoint_every = 100000;
  return h;
}

CloneTrainHyper CloneTrainHyper::PaperBC2() {
  CloneTrainHyper h;
  h.batch = 1024;
  h.steps = 1500000;
  h.schedule = {1e-4, 1e-6, 0.01, 1000};
  h.checkpoint_every = 50000;
  return h;
}

CloneTrainHyper CloneTrainHyper::DeskScale() {
  CloneTrainHyper h;
  h.batch = 32;
  h.steps = 2000;
  h.schedule = {3e-3, 3e-5, 0.05, 100};
  h.checkpoint_every = 500;
  return h;
}

namespace {

struct BatchTensors {
  std::vector<nn::Matrix> obs;  // per time step, B x obs
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<double>> mask;
  double total = 0.0;
};

BatchTensors make_batch(const SupervisedDataset& ds, std::span<const size_t> rows) {
  BatchTensors b;
  size_t horizon = 0;
  for (size_t r : rows) horizon = std::max(horizon, ds.sequences[r].target_bins.size());
  const Eigen::Index batch = static_cast<Eigen::Index>(rows.size());
  for (size_t t = 0; t < horizon; ++t) {
    nn::Matrix obs = nn::Matrix::Zero(batch, ds.observation_size);
    std::vector<int> targets(rows.size(), 0);
    std::vector<double> mask(rows.size(), 0.0);
    for (size_t i = 0; i < rows.size(); ++i) {
      const SupervisedSequence& s = ds.sequences[rows[i]];
      if (t >= s.target_bins.size()) continue;
      for (int k = 0; k < ds.observation_size; ++k) obs(static_cast<Eigen::Index>(i), k) = s.observations[t][k];
      targets[i] = s.target_bins[t];
      mask[i] = s.mask[t];
      b.total += s.mask[t];
    }
    b.obs.push_back(std::move(obs));
    b.targets.push_back(std::move(targets));
    b.mask.push_back(std::move(mask));
  }
  return b;
}

}  // namespace

CloneTrainResult train_clone(const SupervisedDataset& dataset, const CloneConfig& config,
                             const CloneTrainHyper& hyper, uint64_t seed) {
  if (dataset.sequences.empty() || dataset.num_records() == 0) {
    throw Error(ErrorCode::kEmptyInput, "train_clone: empty dataset");
  }
  if (dataset.observation_size != config.input_size()) {
    throw Error(ErrorCode::kShapeMismatch, "train_clone: observation size does not match config");
  }
  if (dataset.bins != config.bins) {
    throw Error(ErrorCode::kShapeMismatch, "train_clone: dataset bins do not match config");
  }
  if (hyper.batch <= 0 || hyper.steps < 0 || hyper.checkpoint_every <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "train_clone: batch, steps and checkpoint_every");
  }
  CloneModel model(config, derive_seed(seed, "init"));
  Rng rng(derive_seed(seed, "batches"));
  CloneTrainResult result;
  result.optimizer = nn::OptimizerState::For(model.params(), hyper.schedule);
  result.checkpoints.push_back({0, model.params()});
  const std::string& prefix = model.prefix();
  std::vector<size_t> rows(static_cast<size_t>(hyper.batch));
  for (int step = 1; step <= hyper.steps; ++step) {
    for (auto& r : rows) r = static_cast<size_t>(rng.uniform_int(static_cast<int>(dataset.sequences.size())));
    const BatchTensors batch = make_batch(dataset, rows);
    nn::Tape tape;
    model.bind(tape);
    nn::Var h = tape.constant(nn::Matrix::Zero(hyper.batch, config.memory));
    nn::Var loss = tape.constant(0.0);
    for (size_t t = 0; t < batch.obs.size(); ++t) {
      const auto out = model.step(tape, tape.constant(batch.obs[t]), h);
      h = out.hidden;
      double count = 0.0;
      for (double m : batch.mask[t]) count += m;
      if (count == 0.0 || batch.total == 0.0) continue;
      loss = loss + nn::scale(nn::cross_entropy(out.logits, batch.targets[t], batch.mask[t]),
                              count / batch.total);
    }
    const double value = loss.scalar();
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kNonFiniteLoss, "clone loss is not finite at step " + std::to_string(step));
    }
    tape.backward(loss);
    nn::ParamTree grads;
    for (const auto& [name, g] : tape.param_grads()) grads.add(strip_prefix(name, prefix), g);
    if (hyper.clip_norm > 0) nn::clip_by_global_norm(grads, hyper.clip_norm);
    nn::adam_step(result.optimizer, model.mutable_params(), grads);
    result.losses.push_back(value);
    if (step % hyper.checkpoint_every == 0 || step == hyper.steps) {
      result.checkpoints.push_back({step, model.params()});
    }
  }
  return result;
}

CloneEvaluation evaluate_clone(const CloneModel& model, const SupervisedDataset& dataset) {
  CloneEvaluation ev;
  if (dataset.observation_size != model.config().input_size() ||
      dataset.bins != model.config().bins) {
    throw Error(ErrorCode::kShapeMismatch, "evaluate_clone: dataset does not match model");
  }
  std::vector<size_t> rows(dataset.sequences.size());
  std::iota(rows.begin(), rows.end(), 0);
  if (rows.empty()) return ev;
  const BatchTensors batch = make_batch(dataset, rows);
  nn::Matrix hidden = nn::Matrix::Zero(static_cast<Eigen::Index>(rows.size()), model.hidden_size());
  double loss = 0.0, correct = 0.0, weight = 0.0;
  for (size_t t = 0; t < batch.obs.size(); ++t) {
    const nn::Matrix logits = model.infer(batch.obs[t], hidden);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double m = batch.mask[t][i];
      if (m <= 0.0) continue;
      const double mx = logits.row(i).maxCoeff();
      const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
      loss += m * (lse - logits(i, batch.targets[t][i]));
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      correct += m * (best == batch.targets[t][i] ? 1.0 : 0.0);
      weight += m;
      ++ev.records;
    }
  }
  if (weight > 0) {
    ev.loss = loss / weight;
    ev.accuracy = correct / weight;
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Ensembles

Ensemble select_clone_checkpoints(std::span<const std::shared_ptr<const CloneModel>> candidates,
                                  std::span<const std::string> labels,
                                  const CloneSelectionOptions& options) {
  if (candidates.empty()) throw Error(ErrorCode::kEmptyInput, "no clone checkpoints to select from");
  const int p = options.game.num_players;
  auto mean_surplus = [&](const std::shared_ptr<const CloneModel>& model, Mechanism& mechanism) {
    std::vector<std::unique_ptr<PlayerModel>> owned;
    std::vector<PlayerModel*> table;
    for (int s = 0; s < p; ++s) {
      owned.push_back(std::make_unique<ClonePlayer>(model, HeadMode::kArgmaxBin));
      table.push_back(owned.back().get());
    }
    double total = 0.0;
    for (int e = 0; e < options.episodes; ++e) {
      total += run_episode(options.game, mechanism, table, derive_seed(options.seed, e)).total_surplus();
    }
    return options.episodes > 0 ? total / options.episodes : 0.0;
  };
  std::vector<double> scores;
  for (const auto& candidate : candidates) {
    double baseline = 0.0;
    for (double w : options.baseline_weights) {
      WeightedMechanism mechanism(WeightedSpec{w, 0.0});
      baseline += mean_surplus(candidate, mechanism);
    }
    if (!options.baseline_weights.empty()) baseline /= static_cast<double>(options.baseline_weights.size());
    RandomMechanism random(RandomDirichletSpec{1.0});
    scores.push_back(baseline - mean_surplus(candidate, random));
  }
  std::vector<size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  Ensemble ens;
  const size_t keep = std::min(order.size(), static_cast<size_t>(std::max(1, options.ensemble_size)));
  for (size_t i = 0; i < keep; ++i) {
    ens.members.push_back(candidates[order[i]]);
    ens.scores.push_back(scores[order[i]]);
    ens.labels.push_back(order[i] < labels.size() ? labels[order[i]] : "clone" + std::to_string(order[i]));
  }
  if (static_cast<int>(keep) < options.ensemble_size) {
    ens.warnings.push_back("only " + std::to_string(keep) + " checkpoint(s) available, ensemble size " +
                           std::to_string(options.ensemble_size) + " requested");
  }
  return ens;
}

std::vector<int> ensemble_draw(const Ensemble& ensemble, int num_players, Rng& rng, DrawMode mode) {
  if (ensemble.empty()) throw Error(ErrorCode::kEmptyInput, "empty ensemble");
  std::vector<int> seats(static_cast<size_t>(num_players));
  const int n = static_cast<int>(ensemble.size());
  for (int i = 0; i < num_players; ++i) {
    seats[i] = mode == DrawMode::kFixedSlots ? i % n : rng.uniform_int(n);
  }
  return seats;
}

std::vector<std::unique_ptr<PlayerModel>> make_clone_players(const Ensemble& ensemble,
                                                             std::span<const int> seats,
                                                             HeadMode mode) {
  std::vector<std::unique_ptr<PlayerModel>> players;
  for (int m : seats) {
    if (m < 0 || m >= static_cast<int>(ensemble.size())) {
      throw Error(ErrorCode::kOutOfRange, "ensemble member index out of range");
    }
    const std::string label = m < static_cast<int>(ensemble.labels.size()) ? ensemble.labels[m]
                                                                            : "clone" + std::to_string(m);
    players.push_back(std::make_unique<ClonePlayer>(ensemble.members[m], mode, label));
  }
  return players;
}

void save_ensemble(const std::filesystem::path& dir, const Ensemble& ensemble) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json index;
  index["record"] = "ensemble";
  index["members"] = nlohmann::ordered_json::array();
  for (size_t i = 0; i < ensemble.size(); ++i) {
    const std::string file = "member_" + std::to_string(i) + ".ckpt";
    nn::save_checkpoint(dir / file, ensemble.members[i]->to_checkpoint(0));
    index["members"].push_back({{"file", file},
                                {"label", i < ensemble.labels.size() ? ensemble.labels[i] : ""},
                                {"score", i < ensemble.scores.size() ? ensemble.scores[i] : 0.0}});
  }
  index["warnings"] = ensemble.warnings;
  std::ofstream out(dir / "ensemble.json");
  out << index.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / "ensemble.json").string());
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
  std::ifstream in(dir / "ensemble.json");
  if (!in) throw Error(ErrorCode::kMissingArtifact, "no ensemble at " + dir.string());
  Ensemble ens;
  try {
    const nlohmann::json index = nlohmann::json::parse(in);
    for (const auto& m : index.at("members")) {
      const auto ckpt = nn::load_checkpoint(dir / m.at("file").get<std::string>());
      ens.members.push_back(std::make_shared<const CloneModel>(CloneModel::from_checkpoint(ckpt)));
      ens.labels.push_back(m.value("label", std::string()));
      ens.scores.push_back(m.value("score", 0.0));
    }
    ens.warnings = index.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("ensemble.json: ") + e.what());
  }
  if (ens.empty()) throw Error(ErrorCode::kEmptyInput, "ensemble at " + dir.string() + " is empty");
  return ens;
}

}  // namespace cpr
