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

#ifndef CPR_NN_PARAM_TREE_H_
#define CPR_NN_PARAM_TREE_H_

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cpr::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Named tensors in insertion order. Iteration order is stable and is the
// serialization order.
class ParamTree {
 public:
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const;
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  size_t size() const { return entries_.size(); }
  size_t num_scalars() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Same names and shapes, all zeros.
  ParamTree zeros_like() const;
  bool same_structure(const ParamTree& other) const;
  bool operator==(const ParamTree& other) const;

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
};

}  // namespace cpr::nn

#endif  // CPR_NN_PARAM_TREE_H_
