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

#include "cpr/nn/param_tree.h"

#include "cpr/error.h"

namespace cpr::nn {

void ParamTree::add(const std::string& name, Matrix value) {
  if (contains(name)) throw Error(ErrorCode::kInvalidConfig, "duplicate parameter '" + name + "'");
  entries_.emplace_back(name, std::move(value));
}

bool ParamTree::contains(const std::string& name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

Matrix& ParamTree::at(const std::string& name) {
  for (auto& [n, m] : entries_) {
    if (n == name) return m;
  }
  throw Error(ErrorCode::kShapeMismatch, "missing parameter '" + name + "'");
}

const Matrix& ParamTree::at(const std::string& name) const {
  return const_cast<ParamTree*>(this)->at(name);
}

size_t ParamTree::num_scalars() const {
  size_t n = 0;
  for (const auto& [_, m] : entries_) n += static_cast<size_t>(m.size());
  return n;
}

ParamTree ParamTree::zeros_like() const {
  ParamTree out;
  for (const auto& [n, m] : entries_) out.add(n, Matrix::Zero(m.rows(), m.cols()));
  return out;
}

bool ParamTree::same_structure(const ParamTree& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, a] = entries_[i];
    const auto& [nb, b] = other.entries_[i];
    if (na != nb || a.rows() != b.rows() || a.cols() != b.cols()) return false;
  }
  return true;
}

bool ParamTree::operator==(const ParamTree& other) const {
  if (!same_structure(other)) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].second != other.entries_[i].second) return false;
  }
  return true;
}

}  // namespace cpr::nn
