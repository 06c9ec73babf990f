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

#include "cpr/episode_io.h"

#include <fstream>
#include <sstream>

#include "cpr/error.h"

namespace cpr {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json game_config_to_json(const GameConfig& c) {
  ordered_json j;
  j["num_players"] = c.num_players;
  j["initial_pool"] = c.initial_pool;
  j["growth"] = c.growth;
  j["max_rounds"] = c.max_rounds;
  ordered_json term;
  if (c.termination.kind == Termination::Kind::kFixed) {
    term["kind"] = "fixed";
  } else {
    term["kind"] = "geometric";
    term["min_rounds"] = c.termination.min_rounds;
    term["continue_prob"] = c.termination.continue_prob;
  }
  j["termination"] = term;
  j["integer_actions"] = c.integer_actions;
  j["exclusion_threshold"] = c.exclusion_threshold;
  return j;
}

GameConfig game_config_from_json(const json& j) {
  GameConfig c;
  try {
    c.num_players = j.value("num_players", c.num_players);
    c.initial_pool = j.value("initial_pool", c.initial_pool);
    c.growth = j.value("growth", c.growth);
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.integer_actions = j.value("integer_actions", c.integer_actions);
    c.exclusion_threshold = j.value("exclusion_threshold", c.exclusion_threshold);
    if (j.contains("termination")) {
      const auto& t = j.at("termination");
      const std::string kind = t.value("kind", std::string("fixed"));
      if (kind == "fixed") {
        c.termination = Termination::Fixed();
      } else if (kind == "geometric") {
        c.termination = Termination::Geometric(t.value("min_rounds", 25),
                                               t.value("continue_prob", 0.8));
      } else {
        throw Error(ErrorCode::kInvalidConfig, "termination.kind: unknown value '" + kind + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("game config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

ordered_json header_json(const EpisodeLog& log) {
  ordered_json h;
  h["schema_version"] = log.schema_version;
  h["record"] = "episode";
  h["config"] = game_config_to_json(log.config);
  h["mechanism_id"] = log.mechanism_id;
  h["player_ids"] = log.player_ids;
  h["seed"] = log.seed;
  h["events"] = log.events;
  return h;
}

ordered_json round_json(const RoundRecord& r) {
  ordered_json j;
  j["t"] = r.t;
  j["pool_before"] = r.pool_before;
  j["offers"] = r.offers;
  j["retained"] = r.retained;
  j["contributions"] = r.contributions;
  j["surpluses"] = r.surpluses;
  j["pool_after"] = r.pool_after;
  return j;
}

}  // namespace

void write_episode(std::ostream& out, const EpisodeLog& log) {
  out << header_json(log).dump() << '\n';
  for (const auto& r : log.rounds) out << round_json(r).dump() << '\n';
}

EpisodeLog read_episode(std::istream& in) {
  EpisodeLog log;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kMalformedRecord, "empty episode log");
  try {
    const json h = json::parse(line);
    const std::string version = h.at("schema_version").get<std::string>();
    if (version != kEpisodeSchemaVersion) {
      throw Error(ErrorCode::kSchemaVersionMismatch,
                  "episode schema_version '" + version + "', expected '" +
                      kEpisodeSchemaVersion + "'");
    }
    log.schema_version = version;
    log.config = game_config_from_json(h.at("config"));
    log.mechanism_id = h.at("mechanism_id").get<std::string>();
    log.player_ids = h.at("player_ids").get<std::vector<std::string>>();
    log.seed = h.at("seed").get<uint64_t>();
    if (h.contains("events")) log.events = h.at("events").get<std::vector<std::string>>();
    int expected_t = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      RoundRecord r;
      r.t = j.at("t").get<int>();
      if (r.t != expected_t++) {
        throw Error(ErrorCode::kMalformedRecord, "rounds must be consecutive from t=0");
      }
      r.pool_before = j.at("pool_before").get<double>();
      r.offers = j.at("offers").get<std::vector<double>>();
      r.retained = j.at("retained").get<double>();
      r.contributions = j.at("contributions").get<std::vector<double>>();
      r.surpluses = j.at("surpluses").get<std::vector<double>>();
      r.pool_after = j.at("pool_after").get<double>();
      log.rounds.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, e.what());
  }
  return log;
}

std::string episode_to_string(const EpisodeLog& log) {
  std::ostringstream out;
  write_episode(out, log);
  return out.str();
}

EpisodeLog episode_from_string(const std::string& text) {
  std::istringstream in(text);
  return read_episode(in);
}

void save_episode(const std::filesystem::path& path, const EpisodeLog& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_episode(out, log);
}

EpisodeLog load_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "missing episode log " + path.string());
  return read_episode(in);
}

}  // namespace cpr
