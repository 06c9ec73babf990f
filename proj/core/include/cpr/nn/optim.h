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

#ifndef CPR_NN_OPTIM_H_
#define CPR_NN_OPTIM_H_

#include <cstdint>

#include <nlohmann/json.hpp>

#include "cpr/nn/param_tree.h"

namespace cpr::nn {

// lr(t) = max(lr_min, lr0 * (1 - decay_rate)^(t / steps_per_decay))
struct LrSchedule {
  double lr0 = 5e-4;
  double lr_min = 5e-6;
  double decay_rate = 0.05;
  int steps_per_decay = 1000;

  double at(int64_t step) const;
  static LrSchedule Constant(double lr) { return {lr, lr, 0.0, 1}; }
};

struct OptimizerState {
  int64_t step = 0;
  ParamTree m;
  ParamTree v;
  LrSchedule schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState For(const ParamTree& params, LrSchedule schedule);
};

// Bias-corrected Adam update of params in place. Throws NonFiniteGradient and
// leaves params and state untouched if any gradient is not finite.
void adam_step(OptimizerState& opt, ParamTree& params, const ParamTree& grads);

double global_norm(const ParamTree& tree);
// Rescales so the global norm is at most max_norm; returns the original norm.
double clip_by_global_norm(ParamTree& grads, double max_norm);

nlohmann::json schedule_to_json(const LrSchedule& s);
LrSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace cpr::nn

#endif  // CPR_NN_OPTIM_H_
