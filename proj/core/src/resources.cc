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

#include "cpr/resources.h"

#include <sstream>
#include <string_view>
#include <utility>

#include "cpr/error.h"

namespace cpr {
namespace {
#include "cpr_resources.inc"
}  // namespace

std::string_view resource(std::string_view name) {
  for (const auto& [key, text] : kResourceTable) {
    if (key == name) return text;
  }
  throw Error(ErrorCode::kMissingArtifact, "no resource named '" + std::string(name) + "'");
}

std::vector<std::string> resource_names() {
  std::vector<std::string> names;
  for (const auto& [key, _] : kResourceTable) names.emplace_back(key);
  return names;
}

std::vector<std::string> questionnaire_statements() {
  std::vector<std::string> lines;
  std::istringstream in{std::string(resource("questionnaire"))};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string mechanism_instructions(const MechanismSpec& spec, bool sustainability_hint) {
  auto trimmed = [](std::string_view text) {
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.remove_suffix(1);
    return std::string(text);
  };
  std::string text;
  if (const auto* w = std::get_if<WeightedSpec>(&spec); w != nullptr && w->w == 0.0) {
    text = trimmed(resource("instructions_proportional"));
    if (sustainability_hint) text += "\n\n" + trimmed(resource("instructions_sustainability"));
  } else if (std::holds_alternative<InterpolatingSpec>(spec)) {
    text = trimmed(resource("instructions_interpolating"));
  } else if (std::holds_alternative<NeuralSpec>(spec)) {
    text = trimmed(resource("instructions_planner"));
  }
  return text;
}

}  // namespace cpr
