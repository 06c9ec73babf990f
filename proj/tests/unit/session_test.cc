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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"

#include "cpr/episode_io.h"
#include "cpr/error.h"
#include "cpr/game.h"
#include "cpr/mechanisms.h"
#include "cpr/resources.h"
#include "cpr/session.h"

using namespace cpr;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidConfig;
}

struct ManualClock {
  std::shared_ptr<double> now = std::make_shared<double>(0.0);
  SessionClock fn() const {
    auto p = now;
    return [p] { return *p; };
  }
  void advance(double s) const { *now += s; }
};

// Seat 0 gets half a unit, the rest split evenly.
class StarveFirst : public Mechanism {
 public:
  void begin_episode(const GameConfig&, uint64_t) override {}
  Allocation allocate(const GameState& state, const GameConfig& config) override {
    Allocation a;
    a.offers.assign(static_cast<size_t>(config.num_players), 0.0);
    if (state.pool <= 0.5) return a;
    a.offers[0] = 0.5;
    for (int i = 1; i < config.num_players; ++i) a.offers[i] = (state.pool - 0.5) / (config.num_players - 1);
    return a;
  }
  std::string id() const override { return "starve-first"; }
};

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cpr_session_test_" + name);
  fs::remove_all(dir);
  return dir;
}

SessionOptions short_game(int humans, int rounds) {
  SessionOptions o;
  o.human_seats = humans;
  o.game.max_rounds = rounds;
  o.seed = 5;
  return o;
}

std::vector<std::string> join_all(SessionManager& m, const std::string& id, int n) {
  std::vector<std::string> tokens;
  for (int i = 0; i < n; ++i) tokens.push_back(m.join(id).token);
  return tokens;
}

}  // namespace

TEST_CASE("worked round through the client view") {
  ManualClock clock;
  SessionManager m({{}, clock.fn(), {}, {}});
  const std::string id = m.create_session(short_game(4, 2));
  const auto tokens = join_all(m, id, 4);
  CHECK(code_of([&] { m.join(id); }) == ErrorCode::kSessionFull);

  auto v = m.view(tokens[1]);
  CHECK(v["schema_version"] == "1");
  CHECK(v["phase"] == "awaiting_contributions");
  CHECK(v["seat"] == 1);
  CHECK(v["round"] == 0);
  CHECK(v["pool"] == 200.0);
  REQUIRE(v["players"].size() == 4);
  CHECK(v["players"][0]["label"] == "You");
  CHECK(v["players"][1]["label"] == "2");
  CHECK(v["players"][3]["label"] == "4");
  CHECK(v["players"][0]["previous_contribution"].is_null());
  CHECK(v["own"]["offer"] == 50.0);
  CHECK(v["own"]["max_contribution"] == 50);
  CHECK(v["remaining_seconds"] == 90.0);

  const int amounts[] = {14, 0, 0, 28};
  for (int i = 0; i < 4; ++i) CHECK(m.submit_contribution(tokens[i], amounts[i]).accepted);

  v = m.view(tokens[0]);
  CHECK(v["phase"] == "overview");
  CHECK(std::abs(v["last_round"]["pool_after"].get<double>() - 58.80) < 1e-9);
  CHECK(v["last_round"]["pool_before"] == 200.0);
  CHECK(v["last_round"]["players"][0]["contribution"] == 14.0);
  CHECK(v["points"] == 36.0);
  CHECK(v["bonus"] == 0.29);
  CHECK(v["bonus_text"] == "£0.29");
  // Seat 3 sees itself first.
  const auto v3 = m.view(tokens[3]);
  CHECK(v3["last_round"]["players"][0]["contribution"] == 28.0);
  CHECK(v3["last_round"]["players"][1]["contribution"] == 14.0);
  CHECK(v3["points"] == 22.0);

  for (const auto& t : tokens) m.continue_round(t);
  v = m.view(tokens[2]);
  CHECK(v["round"] == 1);
  CHECK(v["players"][0]["previous_contribution"] == 0.0);
  CHECK(v["players"][0]["kept_total"] == 50.0);
}

TEST_CASE("join rules") {
  ManualClock clock;
  SessionManager m({{}, clock.fn(), {}, {}});
  const std::string id = m.create_session(short_game(2, 1));
  CHECK(m.join(id, std::string("alpha")).token == "alpha");
  CHECK(code_of([&] { m.join(id, std::string("alpha")); }) == ErrorCode::kDuplicateToken);
  CHECK(code_of([&] { m.join("nope"); }) == ErrorCode::kUnknownSession);
  CHECK(code_of([&] { m.view("missing"); }) == ErrorCode::kUnknownToken);
  CHECK(m.view("alpha")["phase"] == "lobby");
  CHECK(m.join(id).seat == 1);
  CHECK(m.view("alpha")["phase"] == "awaiting_contributions");
  CHECK(code_of([&] { m.join(id); }) == ErrorCode::kSessionFull);

  SessionOptions bad = short_game(5, 1);
  CHECK(code_of([&] { m.create_session(bad); }) == ErrorCode::kInvalidSeatCount);
}

TEST_CASE("contribution bounds") {
  ManualClock clock;
  SessionManager::Options opts{{}, clock.fn(), {}, {}};
  opts.mechanism_factory = [](const MechanismSpec&) -> std::unique_ptr<Mechanism> {
    return std::make_unique<StarveFirst>();
  };
  SessionManager m(opts);
  const std::string id = m.create_session(short_game(4, 2));
  const auto tokens = join_all(m, id, 4);
  CHECK(m.view(tokens[0])["own"]["max_contribution"] == 0);
  CHECK(code_of([&] { m.submit_contribution(tokens[0], 1); }) == ErrorCode::kOutOfRange);
  CHECK(code_of([&] { m.submit_contribution(tokens[1], -1); }) == ErrorCode::kOutOfRange);
  CHECK(code_of([&] { m.submit_contribution(tokens[1], 67); }) == ErrorCode::kOutOfRange);
  CHECK(code_of([&] { m.stage(tokens[1], 67); }) == ErrorCode::kOutOfRange);
  CHECK(m.submit_contribution(tokens[0], 0).accepted);
  CHECK(m.submit_contribution(tokens[1], 66).accepted);
}

TEST_CASE("submissions are idempotent and round-checked") {
  ManualClock clock;
  SessionManager m({{}, clock.fn(), {}, {}});
  const std::string id = m.create_session(short_game(2, 3));
  const auto tokens = join_all(m, id, 2);
  CHECK(code_of([&] { m.submit_contribution(tokens[0], 5, 1); }) == ErrorCode::kWrongPhase);
  const SubmitAck first = m.submit_contribution(tokens[0], 5, 0);
  CHECK(first.accepted);
  const SubmitAck again = m.submit_contribution(tokens[0], 9, 0);
  CHECK(again.duplicate);
  CHECK_FALSE(again.accepted);
  CHECK(m.view(tokens[0])["own"]["staged"] == 5);
  CHECK(code_of([&] { m.continue_round(tokens[0]); }) == ErrorCode::kWrongPhase);
  m.submit_contribution(tokens[1], 5);
  m.continue_round(tokens[0]);
  m.continue_round(tokens[1]);
  CHECK(code_of([&] { m.submit_contribution(tokens[0], 5, 0); }) == ErrorCode::kExpired);
  CHECK(m.submit_contribution(tokens[0], 5, 1).accepted);
}

TEST_CASE("other players' pending contributions stay hidden") {
  ManualClock clock;
  SessionManager m({{}, clock.fn(), {}, {}});
  const std::string id = m.create_session(short_game(3, 2));
  const auto tokens = join_all(m, id, 3);
  const auto before = m.view(tokens[0]);
  m.stage(tokens[1], 30);
  m.submit_contribution(tokens[2], 12);
  const auto after = m.view(tokens[0]);
  CHECK(before["players"] == after["players"]);
  CHECK(before["own"] == after["own"]);
  for (const auto& row : after["players"]) {
    CHECK_FALSE(row.contains("contribution"));
    CHECK_FALSE(row.contains("staged"));
  }
  CHECK_FALSE(after.contains("last_round"));
}

TEST_CASE("timeouts: staged value, then a bot") {
  ManualClock clock;
  const fs::path dir = fresh_dir("timeouts");
  SessionManager m({{}, clock.fn(), dir, {}});
  SessionOptions o = short_game(1, 4);
  const std::string id = m.create_session(o);
  const std::string token = m.join(id).token;
  m.stage(token, 10);
  clock.advance(89);
  m.tick();
  CHECK(m.view(token)["phase"] == "awaiting_contributions");
  CHECK(m.view(token)["remaining_seconds"] == 1.0);
  clock.advance(1);
  m.tick();
  auto v = m.view(token);
  CHECK(v["phase"] == "overview");
  CHECK(v["last_round"]["players"][0]["contribution"] == 10.0);

  clock.advance(90);
  m.tick();  // overview times out
  CHECK(m.view(token)["round"] == 1);
  CHECK(m.view(token)["own"]["timed_out"] == false);
  clock.advance(90);
  m.tick();  // second timeout hands the seat to a bot; the game runs out
  CHECK(m.finished(token));
  CHECK(code_of([&] { m.submit_contribution(token, 0); }) == ErrorCode::kWrongPhase);

  const auto logs = m.session_logs(id);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].rounds.size() == 4);
  REQUIRE(logs[0].events.size() == 2);
  CHECK(logs[0].events[0] == "seat 0 timeout @ t=0, staged value recorded");
  CHECK(logs[0].events[1] == "seat 0 -> bot @ t=1");

  std::ifstream in(dir / id / "session.json");
  REQUIRE(in.good());
  const auto sidecar = nlohmann::json::parse(in);
  CHECK(sidecar["dropout"] == true);
  CHECK(sidecar["exclude_from_analysis"] == true);
  CHECK(sidecar["seats"][0]["kind"] == "bot");
  CHECK(sidecar["seats"][0]["timeouts"] == 2);
  CHECK(fs::exists(dir / id / "game_0.jsonl"));
}

TEST_CASE("a session with no humans plays itself") {
  ManualClock clock;
  SessionManager m({{}, clock.fn(), {}, {}});
  SessionOptions o = short_game(0, 40);
  o.games_in_a_row = 2;
  const std::string id = m.create_session(o);
  const auto logs = m.session_logs(id);
  REQUIRE(logs.size() == 2);
  CHECK(logs[0].rounds.size() == 40);
  CHECK(logs[0].seed != logs[1].seed);
  CHECK(m.inspect(id)["phase"] == "ended");
  CHECK(m.list_sessions().size() == 1);
}

TEST_CASE("questionnaire") {
  ManualClock clock;
  const fs::path dir = fresh_dir("questionnaire");
  SessionManager m({{}, clock.fn(), dir, {}});
  const std::string id = m.create_session(short_game(1, 1));
  const std::string token = m.join(id).token;
  CHECK(code_of([&] { m.submit_questionnaire(token, std::vector<int>(8, 3)); }) == ErrorCode::kWrongPhase);
  m.submit_contribution(token, 20);
  m.continue_round(token);
  const auto v = m.view(token);
  CHECK(v["phase"] == "questionnaire");
  CHECK(v["questionnaire"]["statements"].size() == 8);
  CHECK(code_of([&] { m.submit_questionnaire(token, std::vector<int>(8, 6)); }) == ErrorCode::kBadRating);
  CHECK(code_of([&] { m.submit_questionnaire(token, std::vector<int>(7, 3)); }) == ErrorCode::kBadRating);
  m.submit_questionnaire(token, std::vector<int>(8, 3));
  CHECK(m.finished(token));
  CHECK(code_of([&] { m.submit_questionnaire(token, std::vector<int>(8, 3)); }) == ErrorCode::kWrongPhase);

  std::ifstream in(dir / id / "session.json");
  const auto sidecar = nlohmann::json::parse(in);
  CHECK(sidecar["seats"][0]["questionnaire"]["mechanism_id"] == "equal");
  CHECK(sidecar["seats"][0]["questionnaire"]["ratings"] == std::vector<int>(8, 3));
  CHECK(sidecar["exclude_from_analysis"] == false);
}

TEST_CASE("text resources are verbatim") {
  const std::vector<std::string> statements{
      "The manager's policy was fair.",
      "The manager's policy encouraged ME to contribute.",
      "The manager's policy encouraged OTHERS to contribute.",
      "The manager's policy was easy to understand.",
      "I can think of a policy that would have been better for everyone.",
      "I am satisfied with the money I made from the game.",
      "If I played again I would like to play with this manager again.",
      "This manager encouraged me to contribute in a way that was beneficial to others.",
  };
  CHECK(questionnaire_statements() == statements);

  const std::string proportional =
      "The manager will offer flowers proportional to the last re-investment. For example, if half "
      "of the total reinvestment last round was done by you, you get half of the flowers this round. "
      "If a player is the only one who re-invested, they will get all the flowers next round. "
      "Generally, the more you re-invest the more you get offered, but it is always relative to "
      "other players.";
  const std::string sustainability =
      "You can choose how much to keep from the offer and how much to re-invest from the offer to "
      "the flower field in order to sustain it. If everyone keeps 29% of each offer, then the flower "
      "field can be sustained indefinitely (because the re-investment grows). However, if one player "
      "takes more than 29%, this player may make more money than the others. However, if all of the "
      "players take more than 29%, then the flower field will shrink. In short, each player "
      "individually can be better off taking more than 29%, but for the flower field to be "
      "sustained the group as a whole has to act sustainably.";
  const std::string interpolating =
      "The manager will adjust its policy to the flower field size. When there are a lot of flowers "
      "in the field, the manager will tend to give flowers to everyone, no matter how much or little "
      "they reinvested. If there are few flowers in the field, the manager will tend to give more "
      "flowers to those players who re-invested the most on the last trial (relative to other "
      "players.)";
  const std::string planner =
      "The manager you will play with, has the following strategy: The manager aims to offer "
      "flowers in such a way that all players make the maximum amount of money possible over the "
      "course of the experiment.";
  CHECK(mechanism_instructions(WeightedSpec{0.0, 0.0}) == proportional);
  CHECK(mechanism_instructions(WeightedSpec{0.0, 0.0}, true) == proportional + "\n\n" + sustainability);
  CHECK(mechanism_instructions(InterpolatingSpec{22.0, 0.0}) == interpolating);
  CHECK(mechanism_instructions(NeuralSpec{"x", PlannerVariant::kRecurrent, 1.0}) == planner);
  CHECK(mechanism_instructions(WeightedSpec{1.0, 0.0}).empty());
  CHECK(code_of([] { resource("nothing"); }) == ErrorCode::kMissingArtifact);
  CHECK(resource_names().size() == 5);
}

TEST_CASE("saved logs replay through the engine") {
  ManualClock clock;
  const fs::path dir = fresh_dir("replay");
  SessionManager m({{}, clock.fn(), dir, {}});
  SessionOptions o = short_game(2, 6);
  o.mechanism = WeightedSpec{0.3, 0.1};
  o.questionnaire = false;
  const std::string id = m.create_session(o);
  const auto tokens = join_all(m, id, 2);
  for (int t = 0; t < 6; ++t) {
    for (size_t s = 0; s < tokens.size(); ++s) {
      const int max = m.view(tokens[s])["own"]["max_contribution"];
      m.submit_contribution(tokens[s], max / static_cast<int>(2 + s));
    }
    for (const auto& tok : tokens) m.continue_round(tok);
  }
  REQUIRE(m.finished(tokens[0]));
  const EpisodeLog log = load_episode(dir / id / "game_0.jsonl");
  CHECK(log == m.session_logs(id)[0]);
  GameState state = initial_state(log.config);
  for (const auto& r : log.rounds) {
    CHECK(state.pool == r.pool_before);
    state = apply_offers(log.config, std::move(state), r.offers, r.retained);
    Resolution res = apply_contributions(log.config, std::move(state), r.contributions);
    CHECK(res.record == r);
    state = std::move(res.state);
  }
}

TEST_CASE("options and updates") {
  const SessionOptions d = session_options_from_json(nlohmann::json::object());
  CHECK(d.game.integer_actions);
  CHECK(d.human_seats == 4);
  SessionOptions o = short_game(3, 7);
  o.sustainability_hint = true;
  o.mechanism = InterpolatingSpec{22.0, 0.0};
  const SessionOptions back = session_options_from_json(session_options_to_json(o));
  CHECK(back.game == o.game);
  CHECK(back.human_seats == 3);
  CHECK(back.sustainability_hint);
  CHECK(mechanism_id(back.mechanism) == "interpolating(k=22)");
  CHECK(code_of([] { session_options_from_json({{"timeout_seconds", 0}}).validate(); }) == ErrorCode::kInvalidConfig);

  SessionManager m({{}, steady_session_clock(), {}, {}});
  const std::string id = m.create_session(short_game(2, 2));
  const std::string token = m.join(id).token;
  const uint64_t seen = m.version(token);
  std::thread joiner([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    m.join(id);
  });
  const uint64_t now = m.wait_for_update(token, seen, 5.0);
  joiner.join();
  CHECK(now != seen);
  CHECK(m.wait_for_update(token, m.version(token), 0.01) == m.version(token));
}
