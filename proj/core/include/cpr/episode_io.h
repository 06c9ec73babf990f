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

#ifndef CPR_EPISODE_IO_H_
#define CPR_EPISODE_IO_H_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpr/game.h"

namespace cpr {

// Line-delimited container: one header line (config, mechanism, seats, seed,
// schema_version) followed by one line per round. Field order is fixed for
// schema version "1"; doubles are written with round-trip precision.
void write_episode(std::ostream& out, const EpisodeLog& log);
EpisodeLog read_episode(std::istream& in);

std::string episode_to_string(const EpisodeLog& log);
EpisodeLog episode_from_string(const std::string& text);

void save_episode(const std::filesystem::path& path, const EpisodeLog& log);
EpisodeLog load_episode(const std::filesystem::path& path);

nlohmann::ordered_json game_config_to_json(const GameConfig& config);
// Missing keys keep their defaults; unknown termination kinds are rejected.
GameConfig game_config_from_json(const nlohmann::json& j);

}  // namespace cpr

#endif  // CPR_EPISODE_IO_H_
