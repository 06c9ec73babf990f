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

#ifndef CPR_RESOURCES_H_
#define CPR_RESOURCES_H_

#include <string>
#include <string_view>
#include <vector>

#include "cpr/mechanisms.h"

namespace cpr {

// Text resources compiled into the library from core/resources/*.txt, keyed
// by file stem. Throws MissingArtifact for unknown names.
std::string_view resource(std::string_view name);
std::vector<std::string> resource_names();

// The eight agreement statements, in presentation order.
std::vector<std::string> questionnaire_statements();

// Lobby text for a mechanism; empty when none is shown. sustainability_hint
// appends the expanded proportional-baseline text.
std::string mechanism_instructions(const MechanismSpec& spec, bool sustainability_hint = false);

}  // namespace cpr

#endif  // CPR_RESOURCES_H_
