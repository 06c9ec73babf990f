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

#ifndef CPR_NN_TAPE_H_
#define CPR_NN_TAPE_H_

#include <functional>
#include <span>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "cpr/nn/param_tree.h"

namespace cpr::nn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode differentiation over dense row-major matrices. Ops append
// nodes in execution order; backward() walks them in reverse.
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  // Leaf that accumulates a gradient.
  Var variable(Matrix value);

  // Registers every tensor of the tree as a variable addressable by name.
  void bind(const ParamTree& params);
  Var param(const std::string& name) const;
  bool has_param(const std::string& name) const;

  void backward(Var root, double seed = 1.0);
  // Gradient of the last backward() root with respect to v (zeros if v is
  // unreachable or gradients are not recorded).
  Matrix grad(Var v) const;
  // Gradients for every bound parameter, mirroring the bound tree.
  ParamTree param_grads() const;

  bool recording() const { return record_; }
  size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Matrix value, bool needs_grad, Backward backward);
  const Matrix& value(int id) const { return nodes_[id].value; }
  Matrix& grad_ref(int id);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, int>> bound_;
  std::unordered_map<std::string, int> bound_index_;
};

// Elementwise binary ops broadcast b when it is 1x1, 1xN (per row) or Mx1
// (per column) against a of shape MxN.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);

Var matmul(Var a, Var b);

Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
// min(a, cap) elementwise; the gradient passes where a < cap.
Var minimum(Var a, double cap);

Var sum(Var a);       // -> 1x1
Var mean(Var a);      // -> 1x1
Var sum_rows(Var a);  // row sums -> Mx1
Var sum_cols(Var a);  // column sums -> 1xN

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var a, int start, int count);
// Row-major reinterpretation to rows x cols.
Var reshape(Var a, int rows, int cols);
// out.row(i) = a.row(index[i]).
Var gather_rows(Var a, std::span<const int> index);
// out.row(index[i]) += a.row(i); out has num_rows rows.
Var scatter_rows(Var a, std::span<const int> index, int num_rows);
// out(r, c) = a.flat(index[r * cols + c]) for a rows x cols result.
Var gather_elements(Var a, std::span<const int> flat_index, int rows, int cols);
// out(r, 0) = a(r, column[r]).
Var pick(Var a, std::span<const int> column);

Var stop_gradient(Var a);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// Mean over rows with mask > 0 of -log softmax(logits)[target]. Gradient per
// row is (softmax - one_hot) / count. Returns 1x1; zero when nothing is masked in.
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> mask);

}  // namespace cpr::nn

#endif  // CPR_NN_TAPE_H_
