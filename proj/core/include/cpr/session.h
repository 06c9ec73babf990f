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

#ifndef CPR_SESSION_H_
#define CPR_SESSION_H_

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/players.h"

namespace cpr {

inline constexpr char kSessionSchemaVersion[] = "1";

enum class SessionPhase { kLobby, kAwaitingContributions, kOverview, kQuestionnaire, kEnded };
enum class SeatKind { kHuman, kClone, kBot };

std::string phase_name(SessionPhase phase);
std::string seat_kind_name(SeatKind kind);

struct SessionOptions {
  GameConfig game = [] {
    GameConfig g;
    g.integer_actions = true;
    return g;
  }();
  MechanismSpec mechanism = WeightedSpec{1.0, 0.0};
  int human_seats = 4;
  double timeout_seconds = 90.0;
  double currency_per_point = 0.008;
  bool questionnaire = true;
  int games_in_a_row = 1;
  bool sustainability_hint = false;
  HeadMode clone_head = HeadMode::kArgmaxBin;
  uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json session_options_to_json(const SessionOptions& o);
SessionOptions session_options_from_json(const nlohmann::json& j);

struct SubmitAck {
  bool accepted = false;
  bool duplicate = false;  // the seat had already acted this round
  int round = 0;
};

// Seconds on an arbitrary monotonic scale.
using SessionClock = std::function<double()>;
SessionClock steady_session_clock();

class Session;

// Hosts any number of sessions. Every public method is thread safe; each
// session serializes its own mutations.
class SessionManager {
 public:
  struct Options {
    Ensemble clones;  // fills non-human seats; uniform-random bots when empty
    SessionClock clock;
    std::filesystem::path log_dir;  // persist finished sessions when set
    // Builds mechanisms; defaults to make_mechanism.
    std::function<std::unique_ptr<Mechanism>(const MechanismSpec&)> mechanism_factory;
  };

  explicit SessionManager(Options options);
  ~SessionManager();

  std::string create_session(const SessionOptions& options);
  struct JoinResult {
    std::string token;
    int seat = 0;
  };
  JoinResult join(const std::string& session_id,
                  const std::optional<std::string>& requested_token = std::nullopt);

  // Slider position, recorded on a first timeout.
  void stage(const std::string& token, int amount);
  SubmitAck submit_contribution(const std::string& token, int amount,
                                std::optional<int> round = std::nullopt);
  // Leaves the overview screen.
  void continue_round(const std::string& token);
  void submit_questionnaire(const std::string& token, const std::vector<int>& ratings);

  nlohmann::ordered_json view(const std::string& token) const;
  // Fires due timeouts in every session.
  void tick();

  std::vector<std::string> session_ids() const;
  nlohmann::ordered_json list_sessions() const;
  nlohmann::ordered_json inspect(const std::string& session_id) const;
  std::vector<EpisodeLog> session_logs(const std::string& session_id) const;

  // Bumped on every state change of the session owning `token`.
  uint64_t version(const std::string& token) const;
  // Blocks until version(token) != seen or timeout; returns the new version.
  uint64_t wait_for_update(const std::string& token, uint64_t seen, double timeout_seconds) const;
  bool finished(const std::string& token) const;

 private:
  std::shared_ptr<Session> find_session(const std::string& session_id) const;
  std::shared_ptr<Session> find_token(const std::string& token) const;

  Options options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::string> tokens_;  // token -> session id
  uint64_t next_id_ = 1;
};

}  // namespace cpr

#endif  // CPR_SESSION_H_
