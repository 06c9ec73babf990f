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

#include "cpr/nn/optim.h"

#include <algorithm>
#include <cmath>

#include "cpr/error.h"

namespace cpr::nn {

double LrSchedule::at(int64_t step) const {
  const double exponent = static_cast<double>(step) / static_cast<double>(steps_per_decay);
  return std::max(lr_min, lr0 * std::pow(1.0 - decay_rate, exponent));
}

OptimizerState OptimizerState::For(const ParamTree& params, LrSchedule schedule) {
  OptimizerState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.schedule = schedule;
  return s;
}

void adam_step(OptimizerState& opt, ParamTree& params, const ParamTree& grads) {
  if (!params.same_structure(grads) || !params.same_structure(opt.m)) {
    throw Error(ErrorCode::kShapeMismatch, "adam: parameter, gradient and moment trees differ");
  }
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) {
      throw Error(ErrorCode::kNonFiniteGradient, "non-finite gradient in '" + name + "'");
    }
  }
  const int64_t t = opt.step + 1;
  const double lr = opt.schedule.at(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  auto m_it = opt.m.begin();
  auto v_it = opt.v.begin();
  auto g_it = grads.begin();
  for (auto p_it = params.begin(); p_it != params.end(); ++p_it, ++m_it, ++v_it, ++g_it) {
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    const Matrix& g = g_it->second;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    p_it->second.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.epsilon);
  }
  opt.step = t;
}

double global_norm(const ParamTree& tree) {
  double total = 0.0;
  for (const auto& [_, m] : tree) total += m.squaredNorm();
  return std::sqrt(total);
}

double clip_by_global_norm(ParamTree& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [_, m] : grads) m *= factor;
  }
  return norm;
}

nlohmann::json schedule_to_json(const LrSchedule& s) {
  return {{"lr0", s.lr0},
          {"lr_min", s.lr_min},
          {"decay_rate", s.decay_rate},
          {"steps_per_decay", s.steps_per_decay}};
}

LrSchedule schedule_from_json(const nlohmann::json& j) {
  LrSchedule s;
  s.lr0 = j.value("lr0", s.lr0);
  s.lr_min = j.value("lr_min", s.lr_min);
  s.decay_rate = j.value("decay_rate", s.decay_rate);
  s.steps_per_decay = j.value("steps_per_decay", s.steps_per_decay);
  if (!(s.lr0 > 0) || !(s.lr_min >= 0) || s.decay_rate < 0 || s.decay_rate >= 1 ||
      s.steps_per_decay <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "invalid learning-rate schedule");
  }
  return s;
}

}  // namespace cpr::nn
