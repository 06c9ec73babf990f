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

#ifndef CPR_NN_CHECKPOINT_H_
#define CPR_NN_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cpr/nn/optim.h"
#include "cpr/nn/param_tree.h"

namespace cpr::nn {

// Container layout: a magic line, one JSON header line (architecture
// descriptor, step, tensor table), then raw little-endian float64 payloads
// in tensor-table order. Parameters round-trip bit-for-bit.
struct Checkpoint {
  nlohmann::json descriptor;
  int64_t step = 0;
  ParamTree params;
  std::optional<OptimizerState> optimizer;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws ShapeMismatch unless `loaded` has exactly the names and shapes of
// `expected`.
void validate_shapes(const ParamTree& expected, const ParamTree& loaded);

}  // namespace cpr::nn

#endif  // CPR_NN_CHECKPOINT_H_
