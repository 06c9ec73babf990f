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

#include "cpr/session.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cpr/episode_io.h"
#include "cpr/error.h"
#include "cpr/resources.h"

namespace cpr {

namespace {

constexpr double kNever = std::numeric_limits<double>::infinity();

std::string money(double pounds) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "\xC2\xA3%.2f", pounds);
  return buffer;
}

double round_pennies(double pounds) { return std::round(pounds * 100.0) / 100.0; }

}  // namespace

std::string phase_name(SessionPhase phase) {
  switch (phase) {
    case SessionPhase::kLobby: return "lobby";
    case SessionPhase::kAwaitingContributions: return "awaiting_contributions";
    case SessionPhase::kOverview: return "overview";
    case SessionPhase::kQuestionnaire: return "questionnaire";
    case SessionPhase::kEnded: return "ended";
  }
  return "unknown";
}

std::string seat_kind_name(SeatKind kind) {
  switch (kind) {
    case SeatKind::kHuman: return "human";
    case SeatKind::kClone: return "clone";
    case SeatKind::kBot: return "bot";
  }
  return "unknown";
}

void SessionOptions::validate() const {
  game.validate();
  cpr::validate(mechanism);
  if (human_seats < 0 || human_seats > game.num_players) {
    throw Error(ErrorCode::kInvalidSeatCount,
                "human_seats must lie in [0, " + std::to_string(game.num_players) + "]");
  }
  if (!(timeout_seconds > 0)) throw Error(ErrorCode::kInvalidConfig, "timeout_seconds must be > 0");
  if (!(currency_per_point >= 0)) {
    throw Error(ErrorCode::kInvalidConfig, "currency_per_point must be >= 0");
  }
  if (games_in_a_row < 1) throw Error(ErrorCode::kInvalidConfig, "games_in_a_row must be >= 1");
}

nlohmann::ordered_json session_options_to_json(const SessionOptions& o) {
  return {{"game", game_config_to_json(o.game)},
          {"mechanism", mechanism_to_json(o.mechanism)},
          {"human_seats", o.human_seats},
          {"timeout_seconds", o.timeout_seconds},
          {"currency_per_point", o.currency_per_point},
          {"questionnaire", o.questionnaire},
          {"games_in_a_row", o.games_in_a_row},
          {"sustainability_hint", o.sustainability_hint},
          {"clone_head", o.clone_head == HeadMode::kArgmaxBin ? "argmax" : "categorical"},
          {"seed", o.seed}};
}

SessionOptions session_options_from_json(const nlohmann::json& j) {
  SessionOptions o;
  try {
    if (j.contains("game")) {
      o.game = game_config_from_json(j.at("game"));
      if (!j.at("game").contains("integer_actions")) o.game.integer_actions = true;
    }
    if (j.contains("mechanism")) o.mechanism = mechanism_from_json(j.at("mechanism"));
    o.human_seats = j.value("human_seats", o.human_seats);
    o.timeout_seconds = j.value("timeout_seconds", o.timeout_seconds);
    o.currency_per_point = j.value("currency_per_point", o.currency_per_point);
    o.questionnaire = j.value("questionnaire", o.questionnaire);
    o.games_in_a_row = j.value("games_in_a_row", o.games_in_a_row);
    o.sustainability_hint = j.value("sustainability_hint", o.sustainability_hint);
    const std::string head = j.value("clone_head", std::string("argmax"));
    if (head == "argmax") o.clone_head = HeadMode::kArgmaxBin;
    else if (head == "categorical") o.clone_head = HeadMode::kCategoricalBin;
    else throw Error(ErrorCode::kInvalidConfig, "clone_head: unknown value '" + head + "'");
    o.seed = j.value("seed", o.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("session options: ") + e.what());
  }
  o.validate();
  return o;
}

SessionClock steady_session_clock() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

// ---------------------------------------------------------------------------
// Session state machine

struct SeatState {
  SeatKind kind = SeatKind::kHuman;
  std::string token;
  bool joined = false;
  std::unique_ptr<PlayerModel> model;
  int timeouts = 0;
  int staged = 0;
  std::optional<double> contribution;
  bool timed_out_this_round = false;
  bool continued = false;
  std::optional<std::vector<int>> ratings;
  std::string label;
};

class Session {
 public:
  Session(std::string id, SessionOptions options, std::unique_ptr<Mechanism> mechanism,
          const SessionManager::Options& manager)
      : id_(std::move(id)),
        options_(std::move(options)),
        mechanism_(std::move(mechanism)),
        manager_(manager) {}

  std::mutex mutex;
  mutable std::condition_variable changed;
  uint64_t version = 0;

  void init_seats() {
    const int p = options_.game.num_players;
    Rng draw(derive_seed(options_.seed, "clone-seats"));
    for (int i = 0; i < p; ++i) {
      SeatState seat;
      if (i < options_.human_seats) {
        seat.kind = SeatKind::kHuman;
        seat.label = "human";
      } else if (!manager_.clones.empty()) {
        seat.kind = SeatKind::kClone;
        const int fixed = (i - options_.human_seats) % static_cast<int>(manager_.clones.size());
        seat.model = std::make_unique<ClonePlayer>(
            manager_.clones.members[fixed], options_.clone_head,
            fixed < static_cast<int>(manager_.clones.labels.size()) ? manager_.clones.labels[fixed]
                                                                    : "clone");
        seat.label = seat.model->id();
      } else {
        seat.kind = SeatKind::kBot;
        seat.model = std::make_unique<ScriptedPlayer>(UniformRandom{});
        seat.label = seat.model->id();
      }
      seats_.push_back(std::move(seat));
    }
    points_.assign(static_cast<size_t>(p), 0.0);
  }

  const std::string& id() const { return id_; }
  const SessionOptions& options() const { return options_; }
  SessionPhase phase() const { return phase_; }

  int join(const std::string& token, double now) {
    if (phase_ != SessionPhase::kLobby) throw Error(ErrorCode::kSessionFull, "session " + id_ + " is full");
    for (size_t i = 0; i < seats_.size(); ++i) {
      SeatState& seat = seats_[i];
      if (seat.kind != SeatKind::kHuman || seat.joined) continue;
      seat.joined = true;
      seat.token = token;
      const bool all = std::all_of(seats_.begin(), seats_.end(), [](const SeatState& s) {
        return s.kind != SeatKind::kHuman || s.joined;
      });
      if (all) start_game(now);
      touch();
      return static_cast<int>(i);
    }
    throw Error(ErrorCode::kSessionFull, "session " + id_ + " is full");
  }

  void start_if_no_humans(double now) {
    if (options_.human_seats == 0) {
      start_game(now);
      touch();
    }
  }

  int seat_of(const std::string& token) const {
    for (size_t i = 0; i < seats_.size(); ++i) {
      if (seats_[i].token == token) return static_cast<int>(i);
    }
    throw Error(ErrorCode::kUnknownToken, "unknown token");
  }

  void stage(int seat, int amount) {
    require_phase(SessionPhase::kAwaitingContributions);
    check_amount(seat, amount);
    seats_[seat].staged = amount;
  }

  SubmitAck submit(int seat, int amount, std::optional<int> round, double now) {
    SeatState& s = seats_[seat];
    if (round && *round < state_.round) {
      throw Error(ErrorCode::kExpired, "round " + std::to_string(*round) + " already resolved");
    }
    require_phase(SessionPhase::kAwaitingContributions);
    if (round && *round != state_.round) {
      throw Error(ErrorCode::kWrongPhase, "round " + std::to_string(*round) + " has not started");
    }
    if (s.kind != SeatKind::kHuman) throw Error(ErrorCode::kExpired, "seat was handed to a bot");
    if (s.timed_out_this_round) {
      throw Error(ErrorCode::kExpired, "the timeout for this round already fired");
    }
    SubmitAck ack;
    ack.round = state_.round;
    if (s.contribution) {
      ack.duplicate = true;
      return ack;
    }
    check_amount(seat, amount);
    s.staged = amount;
    s.contribution = static_cast<double>(amount);
    ack.accepted = true;
    pump(now);
    touch();
    return ack;
  }

  void continue_round(int seat, double now) {
    require_phase(SessionPhase::kOverview);
    seats_[seat].continued = true;
    pump(now);
    touch();
  }

  void questionnaire(int seat, const std::vector<int>& ratings, double now) {
    require_phase(SessionPhase::kQuestionnaire);
    const size_t expected = questionnaire_statements().size();
    if (ratings.size() != expected) {
      throw Error(ErrorCode::kBadRating, "expected " + std::to_string(expected) + " ratings");
    }
    for (int r : ratings) {
      if (r < 1 || r > 5) throw Error(ErrorCode::kBadRating, "ratings must lie in 1..5");
    }
    SeatState& s = seats_[seat];
    if (s.kind != SeatKind::kHuman) throw Error(ErrorCode::kWrongPhase, "seat was handed to a bot");
    if (s.ratings) throw Error(ErrorCode::kWrongPhase, "questionnaire already submitted");
    s.ratings = ratings;
    const bool done = std::all_of(seats_.begin(), seats_.end(), [](const SeatState& x) {
      return x.kind != SeatKind::kHuman || x.ratings.has_value();
    });
    if (done) finish(now);
    touch();
  }

  void tick(double now) {
    if (now < deadline_) return;
    if (phase_ == SessionPhase::kAwaitingContributions) {
      for (size_t i = 0; i < seats_.size(); ++i) {
        SeatState& s = seats_[i];
        if (s.kind != SeatKind::kHuman || s.contribution) continue;
        s.timeouts += 1;
        if (s.timeouts == 1) {
          s.timed_out_this_round = true;
          s.contribution = static_cast<double>(std::clamp(s.staged, 0, max_contribution(static_cast<int>(i))));
          log_.events.push_back("seat " + std::to_string(i) + " timeout @ t=" + std::to_string(state_.round) +
                                ", staged value recorded");
        } else {
          s.timed_out_this_round = true;
          to_bot(static_cast<int>(i));
          act(static_cast<int>(i));
        }
      }
      pump(now);
      touch();
    } else if (phase_ == SessionPhase::kOverview) {
      advance(now);
      pump(now);
      touch();
    }
  }

  nlohmann::ordered_json view(int seat, double now) const {
    const int p = options_.game.num_players;
    nlohmann::ordered_json v;
    v["schema_version"] = kSessionSchemaVersion;
    v["session_id"] = id_;
    v["phase"] = phase_name(phase_);
    v["seat"] = seat;
    v["game_index"] = game_index_;
    v["games_in_a_row"] = options_.games_in_a_row;
    v["round"] = state_.round;
    v["config"] = {{"num_players", p},
                   {"initial_pool", options_.game.initial_pool},
                   {"growth", options_.game.growth},
                   {"exclusion_threshold", options_.game.exclusion_threshold},
                   {"timeout_seconds", options_.timeout_seconds},
                   {"currency_per_point", options_.currency_per_point}};
    v["instructions"] = mechanism_instructions(options_.mechanism, options_.sustainability_hint);
    v["remaining_seconds"] = std::isfinite(deadline_) ? nlohmann::ordered_json(std::max(0.0, deadline_ - now))
                                                      : nlohmann::ordered_json(nullptr);
    const RoundRecord* last = log_.rounds.empty() ? nullptr : &log_.rounds.back();
    auto label = [&](int k) { return k == 0 ? std::string("You") : std::to_string(k + 1); };
    auto kept = [&](int i) {
      double total = 0.0;
      for (const auto& r : log_.rounds) total += r.surpluses[i];
      return total;
    };
    if (phase_ == SessionPhase::kAwaitingContributions) {
      v["pool"] = state_.pool;
      v["retained"] = state_.retained;
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (int k = 0; k < p; ++k) {
        const int i = (seat + k) % p;
        nlohmann::ordered_json row;
        row["label"] = label(k);
        row["offer"] = state_.offers[i];
        row["previous_contribution"] =
            last ? nlohmann::ordered_json(last->contributions[i]) : nlohmann::ordered_json(nullptr);
        row["kept_total"] = kept(i);
        rows.push_back(row);
      }
      v["players"] = rows;
      const SeatState& s = seats_[seat];
      v["own"] = {{"offer", state_.offers[seat]},
                  {"max_contribution", max_contribution(seat)},
                  {"staged", s.staged},
                  {"submitted", s.contribution.has_value()},
                  {"timed_out", s.timed_out_this_round}};
    }
    if (last != nullptr && phase_ != SessionPhase::kLobby) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (int k = 0; k < p; ++k) {
        const int i = (seat + k) % p;
        rows.push_back({{"label", label(k)},
                        {"offer", last->offers[i]},
                        {"contribution", last->contributions[i]},
                        {"kept_total", kept(i)}});
      }
      v["last_round"] = {{"round", last->t},
                         {"pool_before", last->pool_before},
                         {"pool_after", last->pool_after},
                         {"retained", last->retained},
                         {"players", rows}};
    }
    const double points = points_.empty() ? 0.0 : points_[seat];
    const double bonus = round_pennies(points * options_.currency_per_point);
    v["points"] = points;
    v["bonus"] = bonus;
    v["bonus_text"] = money(bonus);
    if (phase_ == SessionPhase::kQuestionnaire) {
      v["questionnaire"] = {{"statements", questionnaire_statements()},
                            {"submitted", seats_[seat].ratings.has_value()}};
    }
    return v;
  }

  nlohmann::ordered_json summary() const {
    nlohmann::ordered_json j;
    j["session_id"] = id_;
    j["phase"] = phase_name(phase_);
    j["mechanism_id"] = mechanism_->id();
    j["game_index"] = game_index_;
    j["round"] = state_.round;
    j["dropout"] = dropout_;
    int joined = 0;
    for (const auto& s : seats_) joined += s.kind == SeatKind::kHuman && s.joined ? 1 : 0;
    j["human_seats"] = options_.human_seats;
    j["joined"] = joined;
    return j;
  }

  nlohmann::ordered_json sidecar() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kSessionSchemaVersion;
    j["record"] = "session";
    j["session_id"] = id_;
    j["mechanism_id"] = mechanism_->id();
    j["options"] = session_options_to_json(options_);
    j["phase"] = phase_name(phase_);
    j["dropout"] = dropout_;
    j["exclude_from_analysis"] = dropout_;
    nlohmann::ordered_json seats = nlohmann::ordered_json::array();
    for (size_t i = 0; i < seats_.size(); ++i) {
      const SeatState& s = seats_[i];
      nlohmann::ordered_json seat{{"seat", i},
                                  {"kind", seat_kind_name(s.kind)},
                                  {"label", s.label},
                                  {"timeouts", s.timeouts},
                                  {"points", points_.empty() ? 0.0 : points_[i]}};
      if (s.ratings) {
        seat["questionnaire"] = {{"mechanism_id", mechanism_->id()}, {"ratings", *s.ratings}};
      }
      seats.push_back(seat);
    }
    j["seats"] = seats;
    j["games"] = logs_.size();
    return j;
  }

  nlohmann::ordered_json inspect() const {
    nlohmann::ordered_json j = sidecar();
    nlohmann::ordered_json games = nlohmann::ordered_json::array();
    for (const auto& log : logs_) games.push_back(episode_to_string(log));
    if (phase_ != SessionPhase::kEnded && phase_ != SessionPhase::kQuestionnaire &&
        phase_ != SessionPhase::kLobby) {
      games.push_back(episode_to_string(log_));
    }
    j["episodes"] = games;
    return j;
  }

  std::vector<EpisodeLog> logs() const { return logs_; }

 private:
  void touch() {
    ++version;
    changed.notify_all();
  }

  void require_phase(SessionPhase expected) const {
    if (phase_ != expected) {
      throw Error(ErrorCode::kWrongPhase,
                  "session is in phase " + phase_name(phase_) + ", expected " + phase_name(expected));
    }
  }

  int max_contribution(int seat) const {
    const double offer = state_.offers[seat];
    if (offer < options_.game.exclusion_threshold) return 0;
    return static_cast<int>(std::floor(offer + kFeasibilityTolerance));
  }

  void check_amount(int seat, int amount) const {
    const int max = max_contribution(seat);
    if (amount < 0 || amount > max) {
      throw Error(ErrorCode::kOutOfRange,
                  "contribution " + std::to_string(amount) + " outside [0, " + std::to_string(max) + "]");
    }
  }

  void to_bot(int seat) {
    SeatState& s = seats_[seat];
    s.kind = SeatKind::kBot;
    s.model = std::make_unique<ScriptedPlayer>(UniformRandom{});
    s.model->begin_episode(derive_seed(derive_seed(game_seed(), "dropout"), static_cast<uint64_t>(seat)));
    dropout_ = true;
    log_.events.push_back("seat " + std::to_string(seat) + " -> bot @ t=" + std::to_string(state_.round));
  }

  uint64_t game_seed() const { return derive_seed(options_.seed, static_cast<uint64_t>(game_index_)); }

  void act(int seat) {
    SeatState& s = seats_[seat];
    const GameConfig& game = options_.game;
    SeatView view{seat, state_.round, state_.pool, state_.offers, state_.prev_offers,
                  state_.prev_contribs, &game};
    double c = s.model->respond(view);
    const double offer = state_.offers[seat];
    if (!std::isfinite(c)) c = 0.0;
    c = std::clamp(c, 0.0, offer);
    if (game.integer_actions) c = std::floor(c);
    if (offer < game.exclusion_threshold) c = 0.0;
    s.contribution = c;
  }

  void start_game(double now) {
    const GameConfig& game = options_.game;
    state_ = initial_state(game);
    log_ = EpisodeLog{};
    log_.config = game;
    log_.mechanism_id = mechanism_->id();
    log_.seed = game_seed();
    for (auto& s : seats_) log_.player_ids.push_back(s.kind == SeatKind::kHuman ? "human" : s.label);
    mechanism_->begin_episode(game, derive_seed(game_seed(), "mechanism"));
    for (size_t i = 0; i < seats_.size(); ++i) {
      if (seats_[i].model) {
        seats_[i].model->begin_episode(derive_seed(derive_seed(game_seed(), "seat"), i));
      }
    }
    termination_ = Rng(derive_seed(game_seed(), "termination"));
    start_round(now);
  }

  void start_round(double now) {
    const Allocation alloc = mechanism_->allocate(state_, options_.game);
    state_ = apply_offers(options_.game, std::move(state_), alloc.offers, alloc.retained);
    for (auto& s : seats_) {
      s.contribution.reset();
      s.timed_out_this_round = false;
      s.staged = 0;
    }
    for (size_t i = 0; i < seats_.size(); ++i) {
      if (seats_[i].kind != SeatKind::kHuman) act(static_cast<int>(i));
    }
    phase_ = SessionPhase::kAwaitingContributions;
    deadline_ = now + options_.timeout_seconds;
    pump(now);
  }

  void resolve(double now) {
    std::vector<double> contribs;
    for (const auto& s : seats_) contribs.push_back(*s.contribution);
    Resolution res = apply_contributions(options_.game, std::move(state_), contribs);
    for (size_t i = 0; i < points_.size(); ++i) points_[i] += res.record.surpluses[i];
    log_.rounds.push_back(std::move(res.record));
    state_ = std::move(res.state);
    if (options_.game.termination.kind == Termination::Kind::kGeometric) {
      state_.terminated = should_terminate(state_, options_.game, termination_);
    }
    for (auto& s : seats_) s.continued = false;
    phase_ = SessionPhase::kOverview;
    deadline_ = now + options_.timeout_seconds;
  }

  void advance(double now) {
    if (!state_.terminated) {
      start_round(now);
      return;
    }
    logs_.push_back(log_);
    game_index_ += 1;
    if (game_index_ < options_.games_in_a_row) {
      start_game(now);
      return;
    }
    const bool humans = std::any_of(seats_.begin(), seats_.end(),
                                    [](const SeatState& s) { return s.kind == SeatKind::kHuman; });
    if (options_.questionnaire && humans) {
      phase_ = SessionPhase::kQuestionnaire;
      deadline_ = kNever;
    } else {
      finish(now);
    }
  }

  // Runs every transition that needs no further human input.
  void pump(double now) {
    while (true) {
      if (phase_ == SessionPhase::kAwaitingContributions) {
        const bool all = std::all_of(seats_.begin(), seats_.end(),
                                     [](const SeatState& s) { return s.contribution.has_value(); });
        if (!all) return;
        resolve(now);
      } else if (phase_ == SessionPhase::kOverview) {
        const bool ready = std::all_of(seats_.begin(), seats_.end(), [](const SeatState& s) {
          return s.kind != SeatKind::kHuman || s.continued;
        });
        if (!ready) return;
        advance(now);
      } else {
        return;
      }
    }
  }

  void finish(double) {
    phase_ = SessionPhase::kEnded;
    deadline_ = kNever;
    if (manager_.log_dir.empty()) return;
    const auto dir = manager_.log_dir / id_;
    std::filesystem::create_directories(dir);
    for (size_t g = 0; g < logs_.size(); ++g) {
      save_episode(dir / ("game_" + std::to_string(g) + ".jsonl"), logs_[g]);
    }
    std::ofstream out(dir / "session.json");
    out << sidecar().dump(2) << "\n";
    if (!out) throw Error(ErrorCode::kIo, "cannot write session sidecar in " + dir.string());
  }

  std::string id_;
  SessionOptions options_;
  std::unique_ptr<Mechanism> mechanism_;
  const SessionManager::Options& manager_;
  std::vector<SeatState> seats_;
  SessionPhase phase_ = SessionPhase::kLobby;
  GameState state_;
  EpisodeLog log_;
  std::vector<EpisodeLog> logs_;
  std::vector<double> points_;
  int game_index_ = 0;
  double deadline_ = kNever;
  bool dropout_ = false;
  Rng termination_;
};

// ---------------------------------------------------------------------------
// Manager

SessionManager::SessionManager(Options options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = steady_session_clock();
  if (!options_.mechanism_factory) options_.mechanism_factory = make_mechanism;
}

SessionManager::~SessionManager() = default;

std::string SessionManager::create_session(const SessionOptions& options) {
  options.validate();
  auto mechanism = options_.mechanism_factory(options.mechanism);
  std::string id;
  {
    std::lock_guard lock(mutex_);
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "s%06llu", static_cast<unsigned long long>(next_id_++));
    id = buffer;
  }
  auto session = std::make_shared<Session>(id, options, std::move(mechanism), options_);
  {
    std::lock_guard lock(session->mutex);
    session->init_seats();
    session->start_if_no_humans(options_.clock());
  }
  std::lock_guard lock(mutex_);
  sessions_[id] = session;
  return id;
}

SessionManager::JoinResult SessionManager::join(const std::string& session_id,
                                                const std::optional<std::string>& requested_token) {
  auto session = find_session(session_id);
  std::string token;
  {
    std::lock_guard lock(mutex_);
    if (requested_token) {
      if (requested_token->empty()) throw Error(ErrorCode::kUnknownToken, "empty token");
      if (tokens_.count(*requested_token) > 0) {
        throw Error(ErrorCode::kDuplicateToken, "token already in use");
      }
      token = *requested_token;
    } else {
      Rng rng(derive_seed(derive_seed(session->options().seed, session_id), next_id_++));
      char buffer[40];
      std::snprintf(buffer, sizeof(buffer), "%016llx%016llx",
                    static_cast<unsigned long long>(rng.next_u64()),
                    static_cast<unsigned long long>(rng.next_u64()));
      token = buffer;
    }
    tokens_[token] = session_id;
  }
  try {
    std::lock_guard lock(session->mutex);
    const int seat = session->join(token, options_.clock());
    return {token, seat};
  } catch (...) {
    std::lock_guard lock(mutex_);
    tokens_.erase(token);
    throw;
  }
}

void SessionManager::stage(const std::string& token, int amount) {
  auto session = find_token(token);
  std::lock_guard lock(session->mutex);
  session->stage(session->seat_of(token), amount);
}

SubmitAck SessionManager::submit_contribution(const std::string& token, int amount,
                                              std::optional<int> round) {
  auto session = find_token(token);
  std::lock_guard lock(session->mutex);
  return session->submit(session->seat_of(token), amount, round, options_.clock());
}

void SessionManager::continue_round(const std::string& token) {
  auto session = find_token(token);
  std::lock_guard lock(session->mutex);
  session->continue_round(session->seat_of(token), options_.clock());
}

void SessionManager::submit_questionnaire(const std::string& token, const std::vector<int>& ratings) {
  auto session = find_token(token);
  std::lock_guard lock(session->mutex);
  session->questionnaire(session->seat_of(token), ratings, options_.clock());
}

nlohmann::ordered_json SessionManager::view(const std::string& token) const {
  auto session = find_token(token);
  std::lock_guard lock(session->mutex);
  return session->view(session->seat_of(token), options_.clock());
}

void SessionManager::tick() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mutex_);
    for (auto& [_, s] : sessions_) all.push_back(s);
  }
  const double now = options_.clock();
  for (auto& s : all) {
    std::lock_guard lock(s->mutex);
    s->tick(now);
  }
}

std::vector<std::string> SessionManager::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

nlohmann::ordered_json SessionManager::list_sessions() const {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& id : session_ids()) {
    auto s = find_session(id);
    std::lock_guard lock(s->mutex);
    out.push_back(s->summary());
  }
  return out;
}

nlohmann::ordered_json SessionManager::inspect(const std::string& session_id) const {
  auto s = find_session(session_id);
  std::lock_guard lock(s->mutex);
  return s->inspect();
}

std::vector<EpisodeLog> SessionManager::session_logs(const std::string& session_id) const {
  auto s = find_session(session_id);
  std::lock_guard lock(s->mutex);
  return s->logs();
}

uint64_t SessionManager::version(const std::string& token) const {
  auto s = find_token(token);
  std::lock_guard lock(s->mutex);
  return s->version;
}

uint64_t SessionManager::wait_for_update(const std::string& token, uint64_t seen,
                                         double timeout_seconds) const {
  auto s = find_token(token);
  std::unique_lock lock(s->mutex);
  s->changed.wait_for(lock, std::chrono::duration<double>(timeout_seconds),
                      [&] { return s->version != seen; });
  return s->version;
}

bool SessionManager::finished(const std::string& token) const {
  auto s = find_token(token);
  std::lock_guard lock(s->mutex);
  return s->phase() == SessionPhase::kEnded;
}

std::shared_ptr<Session> SessionManager::find_session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kUnknownSession, "unknown session '" + session_id + "'");
  return it->second;
}

std::shared_ptr<Session> SessionManager::find_token(const std::string& token) const {
  std::string id;
  {
    std::lock_guard lock(mutex_);
    const auto it = tokens_.find(token);
    if (it == tokens_.end()) throw Error(ErrorCode::kUnknownToken, "unknown token");
    id = it->second;
  }
  return find_session(id);
}

}  // namespace cpr
